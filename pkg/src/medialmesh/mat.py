"""Medial sphere candidates from a distance field: crisp and sigmoid-relaxed
ridge criteria, pruning and radius editing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .grid import VoxelGrid

_BOX = np.ones((3, 3, 3))
_BOX[1, 1, 1] = 0.0


@dataclass
class MatConfig:
    sigmoid_k: float = 50.0
    lambda_prune: float = 0.0
    neighborhood: int = 26

    def __post_init__(self):
        if self.sigmoid_k <= 0:
            raise ValueError("sigmoid_k must be > 0")
        if self.lambda_prune < 0:
            raise ValueError("lambda_prune must be >= 0")
        if self.neighborhood != 26:
            raise ValueError("only the 26-neighbourhood is supported")


class MedialSphere(NamedTuple):
    center: tuple
    radius: float


class MedialCloud:
    """A set of medial spheres stored as (n, 3) centres and (n,) radii, mm."""

    def __init__(self, centers, radii):
        self.centers = np.asarray(centers, dtype=float).reshape(-1, 3)
        self.radii = np.asarray(radii, dtype=float).reshape(-1)
        if len(self.centers) != len(self.radii):
            raise ValueError("centers and radii differ in length")
        if np.any(self.radii <= 0):
            raise ValueError("radii must be positive")

    def __len__(self):
        return len(self.radii)

    def __iter__(self):
        for c, r in zip(self.centers, self.radii):
            yield MedialSphere(tuple(c), float(r))

    def __repr__(self):
        return f"MedialCloud(n={len(self)})"

    def has_duplicates(self) -> bool:
        return len(np.unique(self.centers, axis=0)) != len(self)

    def to_json(self) -> dict:
        return {"spheres": [[*map(float, c), float(r)] for c, r in zip(self.centers, self.radii)]}

    @classmethod
    def from_json(cls, obj) -> "MedialCloud":
        s = np.asarray(obj["spheres"], dtype=float).reshape(-1, 4)
        return cls(s[:, :3], s[:, 3])


def neighborhood_mean(field: np.ndarray) -> np.ndarray:
    """Mean over the 26 neighbours (centre excluded); out-of-grid counts as 0."""
    f = np.asarray(field, dtype=float)
    return ndimage.correlate(f, _BOX, mode="constant", cval=0.0) / 26.0


def ridge_strength(field: np.ndarray) -> np.ndarray:
    """``u(v) - mean(N(v))``, positive where the voxel dominates its neighbours."""
    f = np.asarray(field, dtype=float)
    return f - neighborhood_mean(f)


def candidate_mask(udf: VoxelGrid, cfg: MatConfig = MatConfig()) -> np.ndarray:
    u = np.asarray(udf.data, dtype=float)
    keep = (u > 0) & (ridge_strength(u) > 0)
    if cfg.lambda_prune > 0:
        keep &= u > cfg.lambda_prune
    return keep


def extract_candidates(udf: VoxelGrid, cfg: MatConfig = MatConfig()) -> MedialCloud:
    """Locally dominant voxels as spheres ``(world(v), u(v) * spacing)``,
    ordered by x-fastest linear voxel index."""
    keep = candidate_mask(udf, cfg)
    idx = np.argwhere(keep.transpose(2, 1, 0))[:, ::-1]  # z-major scan == x-fastest order
    radii = np.asarray(udf.data, dtype=float)[tuple(idx.T)] * float(np.mean(udf.spacing))
    return MedialCloud(udf.world(idx), radii)


def relaxed_ridge_mask(field: VoxelGrid, cfg: MatConfig = MatConfig()) -> VoxelGrid:
    """Soft candidate indicator ``sigmoid(k * (u - mean(N(u))))`` in (0, 1)."""
    return field.like(expit(cfg.sigmoid_k * ridge_strength(field.data)))


def relaxed_ridge_mask_vjp(field: np.ndarray, cotangent: np.ndarray, k: float) -> np.ndarray:
    """Vector-Jacobian product of the relaxed mask with respect to the field."""
    s = expit(k * ridge_strength(field))
    g = k * s * (1.0 - s) * cotangent
    # the zero-padded neighbourhood mean is symmetric
    return g - neighborhood_mean(g)


def dilate_radii(cloud: MedialCloud, focus, amplitude: float, sigma_mm: float) -> MedialCloud:
    """Scale radii by ``1 + amplitude * gauss(|c - focus|)`` (Gaussian peak 1)."""
    if len(cloud) == 0:
        raise ValueError("cannot dilate an empty cloud")
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    if sigma_mm <= 0:
        raise ValueError("sigma_mm must be > 0")
    d2 = np.sum((cloud.centers - np.asarray(focus, dtype=float)) ** 2, axis=1)
    factor = 1.0 + amplitude * np.exp(-d2 / (2.0 * sigma_mm**2))
    return MedialCloud(cloud.centers.copy(), cloud.radii * factor)

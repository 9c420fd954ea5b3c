"""Synthetic binary volumes with known geometry (1 mm isotropic voxels)."""

from __future__ import annotations

import numpy as np

from .grid import VoxelGrid


def _grid(lo, hi, pad):
    lo = np.floor(np.asarray(lo, dtype=float)) - pad
    hi = np.ceil(np.asarray(hi, dtype=float)) + pad
    dims = (hi - lo).astype(int) + 1
    axes = [lo[a] + np.arange(dims[a]) for a in range(3)]
    return lo, np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _segment_distance(P, A, B):
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    ab = B - A
    t = np.clip(((P - A) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(P - (A + t[..., None] * ab), axis=-1)


def _mask(lo, P, inside) -> VoxelGrid:
    return VoxelGrid(inside.astype(np.uint8), (1.0, 1.0, 1.0), tuple(lo))


def sphere(radius: float = 8.0, pad: int = 3) -> VoxelGrid:
    lo, P = _grid([-radius] * 3, [radius] * 3, pad)
    return _mask(lo, P, np.linalg.norm(P, axis=-1) <= radius)


def capsule(radius: float = 4.0, length: float = 16.0, pad: int = 3) -> VoxelGrid:
    """Tube of ``radius`` around the segment from the origin to (length, 0, 0)."""
    A, B = np.zeros(3), np.array([length, 0.0, 0.0])
    lo, P = _grid(np.minimum(A, B) - radius, np.maximum(A, B) + radius, pad)
    return _mask(lo, P, _segment_distance(P, A, B) <= radius)


def tube(radius: float = 2.0, length: float = 20.0, pad: int = 3) -> VoxelGrid:
    return capsule(radius, length, pad)


def y_junction(radius: float = 3.0, branch: float = 12.0, pad: int = 3) -> VoxelGrid:
    """Three capsules of equal length meeting at the origin, 120 degrees apart
    in the xy-plane."""
    ang = np.deg2rad([90.0, 210.0, 330.0])
    ends = np.stack([np.cos(ang), np.sin(ang), np.zeros(3)], axis=1) * branch
    lo, P = _grid(ends.min(axis=0) - radius, ends.max(axis=0) + radius, pad)
    d = np.min([_segment_distance(P, np.zeros(3), e) for e in ends], axis=0)
    return _mask(lo, P, d <= radius)


def torus(major: float = 9.0, minor: float = 3.0, pad: int = 3) -> VoxelGrid:
    """Ring in the xy-plane."""
    ext = major + minor
    lo, P = _grid([-ext, -ext, -minor], [ext, ext, minor], pad)
    rho = np.hypot(P[..., 0], P[..., 1])
    return _mask(lo, P, np.hypot(rho - major, P[..., 2]) <= minor)


PHANTOMS = {
    "sphere": sphere,
    "capsule": capsule,
    "tube": tube,
    "yjunction": y_junction,
    "torus": torus,
}


def make(name: str, **params) -> VoxelGrid:
    try:
        fn = PHANTOMS[name]
    except KeyError:
        raise ValueError(f"unknown phantom {name!r}; choose from {sorted(PHANTOMS)}") from None
    return fn(**params)

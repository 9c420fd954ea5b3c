"""Voxel lattices, exact distance transforms and overlap metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numba
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

ISOTROPY_TOL = 0.01

# 26-neighbourhood offsets, centre excluded
OFFSETS_26 = np.array(
    [o for o in product((-1, 0, 1), repeat=3) if o != (0, 0, 0)], dtype=np.int64
)


@dataclass
class VoxelGrid:
    """Axis-aligned scalar lattice.

    ``data`` is indexed ``[x, y, z]``; the flat on-disk order is x-fastest,
    i.e. ``data.ravel(order="F")``. ``origin`` is the world position (mm)
    of the centre of voxel (0, 0, 0).
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)
    meta: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"expected a 3D array, got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError("dims must be positive")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or len(self.origin) != 3:
            raise ValueError("spacing and origin need 3 components")
        if min(self.spacing) <= 0:
            raise ValueError("spacing components must be strictly positive")

    @property
    def dims(self):
        return self.data.shape

    @classmethod
    def from_flat(cls, flat, dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        flat = np.asarray(flat)
        if flat.size != int(np.prod(dims)):
            raise ValueError(f"data length {flat.size} != prod(dims) {int(np.prod(dims))}")
        return cls(flat.reshape(tuple(dims), order="F"), spacing, origin)

    def flat(self) -> np.ndarray:
        return self.data.ravel(order="F")

    def world(self, index) -> np.ndarray:
        """Voxel index (..., 3) -> world coordinates in mm."""
        return np.asarray(self.origin) + np.asarray(index, dtype=float) * np.asarray(self.spacing)

    def index(self, world) -> np.ndarray:
        """Inverse of :meth:`world` (continuous index)."""
        return (np.asarray(world, dtype=float) - np.asarray(self.origin)) / np.asarray(self.spacing)

    def coords(self) -> np.ndarray:
        """World coordinates of every voxel centre, shape dims + (3,)."""
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.dims[a]) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def like(self, data) -> "VoxelGrid":
        return VoxelGrid(data, self.spacing, self.origin)

    def is_isotropic(self, tol=ISOTROPY_TOL) -> bool:
        s = np.asarray(self.spacing)
        return bool((s.max() - s.min()) <= tol * s.min())

    def bbox(self):
        lo = np.asarray(self.origin)
        hi = lo + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)
        return lo, hi


def as_mask(grid: VoxelGrid) -> VoxelGrid:
    """Validate a binary mask; returns a uint8 copy."""
    vals = np.unique(grid.data)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError(f"mask values must be 0 or 1, found {vals[:5]}")
    return grid.like(grid.data.astype(np.uint8))


def _same_dims(a: VoxelGrid, b: VoxelGrid):
    if a.dims != b.dims:
        raise ValueError(f"dims mismatch: {a.dims} vs {b.dims}")


# --- exact squared EDT (lower envelope of parabolas, one axis at a time) ---

@numba.njit(cache=True)
def _edt_1d(f, out, v, z):
    n = f.shape[0]
    k = 0
    # skip leading +inf samples: they cannot be envelope sites
    first = -1
    for q in range(n):
        if f[q] < np.inf:
            first = q
            break
    if first < 0:
        for q in range(n):
            out[q] = np.inf
        return
    v[0] = first
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(first + 1, n):
        if f[q] == np.inf:
            continue
        while True:
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                k -= 1
                if k < 0:
                    break
            else:
                break
        k += 1
        v[k] = q
        z[k] = s if k > 0 else -np.inf
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d = q - v[k]
        out[q] = d * d + f[v[k]]


@numba.njit(cache=True)
def _edt_axis(arr):
    # arr: (m, n) lines, transformed in place
    m, n = arr.shape
    v = np.zeros(n, dtype=np.int64)
    z = np.zeros(n + 1)
    out = np.empty(n)
    for i in range(m):
        _edt_1d(arr[i], out, v, z)
        for q in range(n):
            arr[i, q] = out[q]


def squared_edt(foreground: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance (voxel units) from each voxel centre to the
    nearest background voxel centre. Background voxels get 0; if there is no
    background at all every value is +inf."""
    f = np.where(foreground, np.inf, 0.0)
    for axis in range(3):
        moved = np.ascontiguousarray(np.moveaxis(f, axis, -1))
        shape = moved.shape
        lines = moved.reshape(-1, shape[-1])
        _edt_axis(lines)
        f = np.moveaxis(lines.reshape(shape), -1, axis)
    return np.ascontiguousarray(f)


def compute_udf(mask: VoxelGrid) -> VoxelGrid:
    """Quantised unsigned distance field ``floor(d + 0.5)`` inside the mask.

    Distances are measured between voxel centres in voxel units; the grid
    must be isotropic (see :func:`resample_isotropic`).
    """
    mask = as_mask(mask)
    if not mask.is_isotropic():
        raise ValueError(f"anisotropic spacing {mask.spacing}; resample to isotropic first")
    fg = mask.data.astype(bool)
    if not fg.any():
        return mask.like(np.zeros(mask.dims, dtype=np.int32))
    if fg.all():
        raise ValueError("no background reference: mask has no background voxel")
    d = np.sqrt(squared_edt(fg))
    u = np.floor(d + 0.5).astype(np.int32)
    u[~fg] = 0
    return mask.like(u)


def mask_udf(udf: VoxelGrid, mask: VoxelGrid) -> VoxelGrid:
    _same_dims(udf, mask)
    m = as_mask(mask)
    return udf.like(udf.data * m.data.astype(udf.data.dtype))


# --- regularisation ---

_BIG = np.iinfo(np.int64).max // 4


def _neighbour_stack(u: np.ndarray, pad_value) -> np.ndarray:
    p = np.pad(u, 1, constant_values=pad_value)
    nx, ny, nz = u.shape
    return np.stack(
        [p[1 + dx : 1 + dx + nx, 1 + dy : 1 + dy + ny, 1 + dz : 1 + dz + nz] for dx, dy, dz in OFFSETS_26]
    )


def descent_violations(u: np.ndarray) -> np.ndarray:
    """Foreground voxels lacking a 26-neighbour with value exactly u - 1.

    Out-of-grid neighbours never count: the grid boundary is not background.
    """
    u = np.asarray(u, dtype=np.int64)
    nb = _neighbour_stack(u, _BIG)
    has_step = (nb == (u - 1)[None]).any(axis=0)
    return (u > 0) & ~has_step


def regularize_udf(udf: VoxelGrid, max_sweeps: int | None = None) -> VoxelGrid:
    """Enforce the descent property: every voxel with value k > 0 gets a
    26-neighbour with value k - 1.

    Each synchronous sweep recomputes ``min(neighbours) + 1`` at the voxels
    that currently violate the property; sweeps repeat until none do.
    Voxels that already satisfy it keep their value, so a valid field is a
    fixed point.
    """
    u = np.asarray(udf.data).astype(np.int64)
    if np.any(u < 0):
        raise ValueError("UDF values must be non-negative")
    fg = u > 0
    if not fg.any():
        return udf.like(np.zeros(udf.dims, dtype=np.int32))
    if fg.all():
        raise ValueError("no background reference: field has no zero voxel")
    if max_sweeps is None:
        # generous bound; convergence is observed in far fewer sweeps
        max_sweeps = 4 * (int(u.max()) + int(np.sum(udf.dims))) + 16
    for _ in range(max_sweeps):
        bad = descent_violations(u)
        if not bad.any():
            return udf.like(u.astype(np.int32))
        nb_min = _neighbour_stack(u, _BIG).min(axis=0)
        u = np.where(bad, nb_min + 1, u)
    raise RuntimeError(f"regularize_udf did not converge in {max_sweeps} sweeps")


def laplacian(grid: VoxelGrid) -> VoxelGrid:
    """7-point Laplacian in field units per voxel^2, replicate boundary."""
    f = np.asarray(grid.data, dtype=float)
    if min(f.shape) < 3:
        raise ValueError(f"laplacian needs >= 3 voxels per axis, got {f.shape}")
    return grid.like(_laplacian_array(f))


def _laplacian_array(f: np.ndarray) -> np.ndarray:
    p = np.pad(f, 1, mode="edge")
    c = p[1:-1, 1:-1, 1:-1]
    return (
        p[2:, 1:-1, 1:-1] + p[:-2, 1:-1, 1:-1]
        + p[1:-1, 2:, 1:-1] + p[1:-1, :-2, 1:-1]
        + p[1:-1, 1:-1, 2:] + p[1:-1, 1:-1, :-2]
        - 6.0 * c
    )


def _laplacian_adjoint(g: np.ndarray) -> np.ndarray:
    """Transpose of the replicate-boundary stencil, applied to ``g``."""
    out = -6.0 * g
    for axis in range(3):
        for shift in (1, -1):
            # neighbour index with clamping; scatter g back onto the source voxel
            n = g.shape[axis]
            idx = np.clip(np.arange(n) + shift, 0, n - 1)
            contrib = np.zeros_like(g)
            np.add.at(contrib, (slice(None),) * axis + (idx,), g)
            out += contrib
    return out


def dice(a: VoxelGrid, b: VoxelGrid) -> float:
    _same_dims(a, b)
    A = np.asarray(a.data) > 0
    B = np.asarray(b.data) > 0
    total = int(A.sum()) + int(B.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((A & B).sum()) / total


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a 6-neighbour outside the shape (grid exterior counts)."""
    fg = np.asarray(mask) > 0
    inner = ndimage.binary_erosion(fg, structure=ndimage.generate_binary_structure(3, 1), border_value=0)
    return fg & ~inner


def hausdorff(a: VoxelGrid, b: VoxelGrid) -> float:
    """Symmetric Hausdorff distance (mm) between the surface voxel sets."""
    _same_dims(a, b)
    if not np.allclose(a.spacing, b.spacing):
        raise ValueError("spacing mismatch")
    pa = np.argwhere(surface_voxels(a.data)) * np.asarray(a.spacing)
    pb = np.argwhere(surface_voxels(b.data)) * np.asarray(b.spacing)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("hausdorff distance of an empty mask is undefined")
    dab = cKDTree(pb).query(pa)[0].max()
    dba = cKDTree(pa).query(pb)[0].max()
    return float(max(dab, dba))


def resample_isotropic(grid: VoxelGrid, spacing: float = 1.0, order: int = 0) -> VoxelGrid:
    """Resample onto an isotropic lattice (nearest-neighbour by default)."""
    if order not in (0, 1):
        raise ValueError("only nearest (0) and linear (1) interpolation are supported")
    old = np.asarray(grid.spacing)
    extent = (np.asarray(grid.dims) - 1) * old
    dims = np.floor(extent / spacing + 1e-9).astype(int) + 1
    axes = [np.arange(dims[a]) * spacing / old[a] for a in range(3)]
    pts = np.meshgrid(*axes, indexing="ij")
    out = ndimage.map_coordinates(np.asarray(grid.data, dtype=float), pts, order=order, mode="nearest")
    if order == 0:
        out = out.astype(grid.data.dtype)
    return VoxelGrid(out, (spacing,) * 3, grid.origin)


def boundary_face_centers(mask: VoxelGrid) -> np.ndarray:
    """World positions (mm) of the voxel faces separating foreground from
    background, i.e. the surface of the union of foreground voxel cubes.
    The grid exterior counts as background."""
    fg = np.pad(np.asarray(mask.data) > 0, 1)
    pts = []
    for ax in range(3):
        a = np.take(fg, np.arange(fg.shape[ax] - 1), axis=ax)
        b = np.take(fg, np.arange(1, fg.shape[ax]), axis=ax)
        idx = np.argwhere(a != b).astype(float) - 1.0
        idx[:, ax] += 0.5
        pts.append(mask.world(idx) if len(idx) else np.zeros((0, 3)))
    return np.vstack(pts)

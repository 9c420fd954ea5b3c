"""Sampling, oriented point clouds, surface refinement and watertight meshing
of a convolution field."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
import warnings

import numba
import numpy as np
from skimage import measure

from .convsurf import ConvolutionField
from .grid import VoxelGrid


class ClippedSurfaceError(RuntimeError):
    """The level set reaches the sampling box, so the mesh cannot be closed."""


class BBoxWarning(UserWarning):
    pass


@dataclass
class RefineConfig:
    step_k: float = 0.5
    omega: float = 1e-3
    max_iters: int = 100
    frozen_normal: bool = False

    def __post_init__(self):
        if self.step_k <= 0 or self.omega <= 0 or self.max_iters < 1:
            raise ValueError("step_k, omega and max_iters must be positive")


@dataclass
class OrientedPointCloud:
    points: np.ndarray
    normals: np.ndarray
    converged: np.ndarray | None = None
    iterations: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.points)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    info: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def signed_volume(self) -> float:
        v = self.vertices[self.faces]
        return float(np.sum(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2]))) / 6.0)


# --- bounding boxes and sampling ---

def primitive_bbox(field: ConvolutionField, inflate: float = 3.0):
    """Box around the skeleton inflated by ``inflate`` x the largest radius."""
    cx = field.complex
    if cx.n_vertices == 0:
        return np.zeros(3), np.zeros(3)
    pad = inflate * float(cx.radii.max())
    return cx.centers.min(axis=0) - pad, cx.centers.max(axis=0) + pad


def default_resolution(field: ConvolutionField) -> float:
    if field.complex.n_vertices == 0:
        return 1.0
    return float(np.clip(field.complex.radii.min() / 4.0, 0.1, 1.0))


def _lattice(bbox, resolution):
    lo = np.asarray(bbox[0], dtype=float)
    hi = np.asarray(bbox[1], dtype=float)
    if np.any(hi < lo):
        raise ValueError("bbox max < min")
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    dims = tuple(int(np.ceil((hi[a] - lo[a]) / resolution - 1e-9)) + 1 for a in range(3))
    return lo, dims


def sample_field(field: ConvolutionField, bbox, resolution: float) -> VoxelGrid:
    """Field values on the lattice ``bbox[0] + i * resolution``."""
    lo, dims = _lattice(bbox, resolution)
    need_lo, need_hi = primitive_bbox(field)
    hi = lo + (np.asarray(dims) - 1) * resolution
    if field.complex.n_vertices and (np.any(lo > need_lo + 1e-9) or np.any(hi < need_hi - 1e-9)):
        warnings.warn("sampling box does not cover the skeleton inflated by 3x the largest radius; "
                      "the surface may be clipped", BBoxWarning, stacklevel=2)
    grid = VoxelGrid(np.zeros(dims), (resolution,) * 3, tuple(lo))
    if field.n_primitives:
        grid.data = field(grid.coords().reshape(-1, 3)).reshape(dims)
    return grid


# --- point clouds ---

def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0), n[..., 0]


def extract_cloud(field: ConvolutionField, grid: VoxelGrid) -> OrientedPointCloud:
    """One point per lattice edge whose end values straddle the level,
    placed by linear interpolation; normals point along -grad f."""
    C = field.level
    f = np.asarray(grid.data, dtype=float)
    pts = []
    for axis in range(3):
        a = np.take(f, np.arange(f.shape[axis] - 1), axis=axis)
        b = np.take(f, np.arange(1, f.shape[axis]), axis=axis)
        cross = (a >= C) != (b >= C)
        idx = np.argwhere(cross)
        if not len(idx):
            continue
        fa, fb = a[cross], b[cross]
        t = (C - fa) / (fb - fa)
        p = idx.astype(float)
        p[:, axis] += t
        pts.append(grid.world(p))
    if not pts:
        return OrientedPointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
    P = np.vstack(pts)
    g = field.gradient(P)
    n, norm = _unit(-g)
    ok = norm > 0
    return OrientedPointCloud(P[ok], n[ok])


def refine_points(field: ConvolutionField, P, cfg: RefineConfig = RefineConfig()):
    """Move points onto the level set with ``P += k tanh(f - C) N / |N|``,
    ``N = -grad f``. Returns (points, normals, converged, iterations)."""
    P = np.array(P, dtype=float).reshape(-1, 3)
    C = field.level
    n_pts = len(P)
    converged = np.zeros(n_pts, dtype=bool)
    iters = np.zeros(n_pts, dtype=np.int64)
    stalled = np.zeros(n_pts, dtype=bool)
    f, g = field.value_and_gradient(P)
    frozen_dir = None
    if cfg.frozen_normal:
        frozen_dir, gn = _unit(-g)
        stalled |= gn == 0
    active = np.flatnonzero(~stalled)
    for it in range(cfg.max_iters + 1):
        done = np.abs(f[active] - C) < cfg.omega
        converged[active[done]] = True
        active = active[~done]
        if not len(active) or it == cfg.max_iters:
            break
        if cfg.frozen_normal:
            direction = frozen_dir[active]
        else:
            direction, gn = _unit(-g[active])
            zero = gn == 0
            if zero.any():
                stalled[active[zero]] = True
                active, direction = active[~zero], direction[~zero]
        P[active] += cfg.step_k * np.tanh(f[active] - C)[:, None] * direction
        iters[active] += 1
        fa, ga = field.value_and_gradient(P[active])
        f[active] = fa
        g[active] = ga
    normals, gn = _unit(-field.gradient(P)) if n_pts else (np.zeros((0, 3)), np.zeros(0))
    normals[gn == 0] = 0.0
    return P, normals, converged & ~stalled, iters


def refine_cloud(cloud: OrientedPointCloud, field: ConvolutionField,
                 cfg: RefineConfig = RefineConfig()) -> OrientedPointCloud:
    P, n, conv, iters = refine_points(field, cloud.points, cfg)
    return OrientedPointCloud(P, n, conv, iters)


# --- meshing ---

def marching_cubes(field: ConvolutionField, bbox=None, resolution: float | None = None,
                   refine: RefineConfig | None = RefineConfig()) -> TriangleMesh:
    """Isosurface of the field at its level, oriented outward, vertices
    projected onto the level set with :func:`refine_points`."""
    if field.n_primitives == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    if bbox is None:
        bbox = primitive_bbox(field)
    if resolution is None:
        resolution = default_resolution(field)
    grid = sample_field(field, bbox, resolution)
    return mesh_from_samples(field, grid, refine)


def _boundary_max(vol: np.ndarray) -> float:
    return max(vol[0].max(), vol[-1].max(), vol[:, 0].max(), vol[:, -1].max(), vol[:, :, 0].max(),
               vol[:, :, -1].max())


def mesh_from_samples(field: ConvolutionField, grid: VoxelGrid,
                      refine: RefineConfig | None = RefineConfig()) -> TriangleMesh:
    C = field.level
    vol = np.asarray(grid.data, dtype=float)
    if _boundary_max(vol) >= C:
        raise ClippedSurfaceError("level set reaches the sampling box; enlarge the bbox")
    if vol.max() < C:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    # samples exactly at the level would collapse triangle corners
    vol = np.where(vol == C, np.nextafter(C, 0.0), vol)
    verts, faces, _, _ = measure.marching_cubes(vol, level=C, spacing=grid.spacing, method="lewiner",
                                                allow_degenerate=False)
    verts = verts + np.asarray(grid.origin)
    faces = faces.astype(np.int64)
    mesh = TriangleMesh(verts, faces)
    if mesh.signed_volume() < 0:
        mesh.faces = mesh.faces[:, ::-1].copy()
    mesh = _compact(mesh)
    if refine is not None:
        P, _, conv, iters = refine_points(field, mesh.vertices, refine)
        mesh.vertices = P
        mesh.info["refine_converged"] = float(conv.mean()) if len(conv) else 1.0
        mesh.info["refine_max_iters"] = int(iters.max()) if len(iters) else 0
    mesh.info["resolution"] = float(grid.spacing[0])
    return mesh


def _compact(mesh: TriangleMesh) -> TriangleMesh:
    used = np.unique(mesh.faces)
    remap = -np.ones(len(mesh.vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(mesh.vertices[used], remap[mesh.faces], mesh.info)


# --- validation ---

def check_watertight(mesh: TriangleMesh, require_single_component: bool = True) -> dict:
    """Edge-manifoldness, orientation, components and Euler characteristic."""
    F = mesh.faces
    report = {
        "faces": int(len(F)),
        "vertices": 0,
        "edges": 0,
        "boundary_edges": 0,
        "nonmanifold_edges": 0,
        "misoriented_edges": 0,
        "degenerate_faces": 0,
        "components": 0,
        "euler": 0,
        "genus": None,
        "watertight": False,
        "passed": False,
    }
    if len(F) == 0:
        return report
    directed = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
    und = np.sort(directed, axis=1)
    uniq, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    # orientation: the two uses of an interior edge must run in opposite directions
    forward = directed[:, 0] < directed[:, 1]
    fwd_count = np.bincount(inv, weights=forward.astype(float), minlength=len(uniq))
    two = counts == 2
    n_vertices = len(np.unique(F))
    report.update(
        vertices=int(n_vertices),
        edges=int(len(uniq)),
        boundary_edges=int(np.sum(counts == 1)),
        nonmanifold_edges=int(np.sum(counts > 2)),
        misoriented_edges=int(np.sum(two & (fwd_count != 1))),
        degenerate_faces=int(np.sum(mesh.face_areas() <= 1e-12)),
    )
    # face components through shared edges
    face_of = np.tile(np.arange(len(F)), 3)
    order = np.argsort(inv, kind="stable")
    parent = np.arange(len(F))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    sorted_inv = inv[order]
    sorted_face = face_of[order]
    same = np.flatnonzero(sorted_inv[1:] == sorted_inv[:-1])
    for k in same:
        ra, rb = find(sorted_face[k]), find(sorted_face[k + 1])
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    comps = len({find(i) for i in range(len(F))})
    euler = n_vertices - len(uniq) + len(F)
    watertight = report["boundary_edges"] == 0 and report["nonmanifold_edges"] == 0
    report.update(components=int(comps), euler=int(euler), watertight=bool(watertight))
    if watertight and comps == 1:
        report["genus"] = int((2 - euler) // 2)
    ok = watertight and report["misoriented_edges"] == 0 and report["degenerate_faces"] == 0
    if require_single_component:
        ok = ok and comps == 1
    report["passed"] = bool(ok)
    return report


# --- voxelisation ---

@numba.njit(cache=True)
def _parity_crossings(tris, ox, oy, oz, h, nx, ny, nz, jx, jy):
    cnt = np.zeros((nx, ny, nz + 1), dtype=np.int32)
    for t in range(tris.shape[0]):
        ax, ay, az = tris[t, 0, 0], tris[t, 0, 1], tris[t, 0, 2]
        bx, by, bz = tris[t, 1, 0], tris[t, 1, 1], tris[t, 1, 2]
        cx, cy, cz = tris[t, 2, 0], tris[t, 2, 1], tris[t, 2, 2]
        det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if det == 0.0:
            continue
        i0 = max(0, int(np.floor((min(ax, bx, cx) - ox - jx) / h)))
        i1 = min(nx - 1, int(np.ceil((max(ax, bx, cx) - ox - jx) / h)))
        j0 = max(0, int(np.floor((min(ay, by, cy) - oy - jy) / h)))
        j1 = min(ny - 1, int(np.ceil((max(ay, by, cy) - oy - jy) / h)))
        for i in range(i0, i1 + 1):
            x = ox + i * h + jx
            for j in range(j0, j1 + 1):
                y = oy + j * h + jy
                l1 = ((bx - x) * (cy - y) - (cx - x) * (by - y)) / det
                l2 = ((cx - x) * (ay - y) - (ax - x) * (cy - y)) / det
                l3 = 1.0 - l1 - l2
                if l1 < 0.0 or l2 < 0.0 or l3 < 0.0:
                    continue
                z = l1 * az + l2 * bz + l3 * cz
                k = int(np.floor((z - oz) / h)) + 1
                if k < 0:
                    k = 0
                if k > nz:
                    k = nz
                cnt[i, j, k] += 1
    return cnt


def voxelize(source, like: VoxelGrid) -> VoxelGrid:
    """Inside/outside mask on the lattice of ``like``.

    ``source`` is a :class:`ConvolutionField` (inside where f >= level) or a
    closed :class:`TriangleMesh` (ray parity along +z).
    """
    if not (np.allclose(like.spacing, like.spacing[0])):
        raise ValueError("voxelize needs an isotropic lattice")
    if isinstance(source, ConvolutionField):
        if source.n_primitives == 0:
            return like.like(np.zeros(like.dims, dtype=np.uint8))
        f = source(like.coords().reshape(-1, 3)).reshape(like.dims)
        return like.like((f >= source.level).astype(np.uint8))
    mesh = source
    if len(mesh.faces) == 0:
        return like.like(np.zeros(like.dims, dtype=np.uint8))
    h = like.spacing[0]
    # sub-voxel column offset keeps rays off mesh vertices and edges
    jx, jy = 1.234567e-7 * h, 2.345678e-7 * h
    tris = np.ascontiguousarray(mesh.vertices[mesh.faces])
    nx, ny, nz = like.dims
    cnt = _parity_crossings(tris, like.origin[0], like.origin[1], like.origin[2], h, nx, ny, nz, jx, jy)
    inside = (np.cumsum(cnt[:, :, :nz], axis=2) % 2).astype(np.uint8)
    return like.like(inside)

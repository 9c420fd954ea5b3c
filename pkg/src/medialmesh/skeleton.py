"""Skeletal simplicial complexes built from medial spheres.

The complex is the nerve of the power (Laguerre-Voronoi) diagram of the
spheres, restricted to pairs of spheres that actually overlap. Power-cell
adjacency is read off the lower convex hull of the centres lifted to
``|c|^2 - r^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
import heapq
import warnings

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import ConvexHull, QhullError

from .mat import MedialCloud


class SimplifyWarning(UserWarning):
    """The requested vertex count could not be reached without a topology change."""


@dataclass(frozen=True)
class FlowInterface:
    center: tuple
    normal: tuple
    radius: float
    leaf_vertex: int

    def to_json(self) -> dict:
        return {"center": list(self.center), "normal": list(self.normal), "radius": self.radius}


class SkeletonComplex:
    """Vertices (spheres), edges (i < j) and triangles (i < j < k)."""

    def __init__(self, centers, radii, edges=(), triangles=()):
        self.centers = np.asarray(centers, dtype=float).reshape(-1, 3)
        self.radii = np.asarray(radii, dtype=float).reshape(-1)
        self.edges = _canon(edges, 2)
        self.triangles = _canon(triangles, 3)
        self.validate()

    @classmethod
    def from_cloud(cls, cloud: MedialCloud, edges=(), triangles=()):
        return cls(cloud.centers, cloud.radii, edges, triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.radii)

    def __repr__(self):
        return f"SkeletonComplex(V={self.n_vertices}, E={len(self.edges)}, T={len(self.triangles)})"

    def cloud(self) -> MedialCloud:
        return MedialCloud(self.centers, self.radii)

    def validate(self) -> None:
        n = self.n_vertices
        if len(self.centers) != n:
            raise ValueError("centers and radii differ in length")
        if np.any(self.radii <= 0):
            raise ValueError("radii must be positive")
        for name, s in (("edge", self.edges), ("triangle", self.triangles)):
            if s.size and (s.min() < 0 or s.max() >= n):
                raise ValueError(f"{name} index out of range")
            if len(np.unique(s, axis=0)) != len(s):
                raise ValueError(f"duplicate {name}")
            if s.size and np.any(np.diff(s, axis=1) <= 0):
                raise ValueError(f"{name} indices must be strictly increasing")
        if len(self.triangles):
            have = set(map(tuple, self.edges.tolist()))
            for a, b, c in self.triangles.tolist():
                for e in ((a, b), (a, c), (b, c)):
                    if e not in have:
                        raise ValueError(f"triangle {(a, b, c)} lacks edge {e}")

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_vertices)

    def adjacency(self) -> list[set]:
        nb = [set() for _ in range(self.n_vertices)]
        for i, j in self.edges.tolist():
            nb[i].add(j)
            nb[j].add(i)
        return nb

    def graph(self, weighted=True) -> csr_matrix:
        n = self.n_vertices
        if len(self.edges) == 0:
            return csr_matrix((n, n))
        i, j = self.edges.T
        w = np.linalg.norm(self.centers[i] - self.centers[j], axis=1) if weighted else np.ones(len(i))
        w = np.maximum(w, 1e-12)
        return csr_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(n, n))

    def transformed(self, rotation=np.eye(3), translation=(0.0, 0.0, 0.0)) -> "SkeletonComplex":
        c = self.centers @ np.asarray(rotation).T + np.asarray(translation)
        return SkeletonComplex(c, self.radii, self.edges, self.triangles)

    def to_json(self) -> dict:
        return {
            "vertices": [[*map(float, c), float(r)] for c, r in zip(self.centers, self.radii)],
            "edges": self.edges.tolist(),
            "triangles": self.triangles.tolist(),
        }

    @classmethod
    def from_json(cls, obj) -> "SkeletonComplex":
        v = np.asarray(obj["vertices"], dtype=float).reshape(-1, 4)
        return cls(v[:, :3], v[:, 3], obj.get("edges", []), obj.get("triangles", []))


def _canon(simplices, k) -> np.ndarray:
    s = np.asarray(simplices, dtype=np.int64).reshape(-1, k)
    s = np.sort(s, axis=1)
    if len(s):
        s = s[np.lexsort(s.T[::-1])]
    return s


# --- topology ---

def betti_numbers(cx: SkeletonComplex) -> tuple[int, int]:
    """(B0, B1) of the complex over GF(2).

    On a triangle-free complex B1 is the cycle rank of the graph; triangles
    fill the cycles they bound.
    """
    n = cx.n_vertices
    if n == 0:
        return 0, 0
    b0 = connected_components(cx.graph(weighted=False), directed=False)[0]
    edge_id = {e: i for i, e in enumerate(map(tuple, cx.edges.tolist()))}
    pivots: dict[int, int] = {}
    rank = 0
    for a, b, c in cx.triangles.tolist():
        col = (1 << edge_id[(a, b)]) | (1 << edge_id[(a, c)]) | (1 << edge_id[(b, c)])
        while col:
            top = col.bit_length() - 1
            if top in pivots:
                col ^= pivots[top]
            else:
                pivots[top] = col
                rank += 1
                break
    b1 = len(cx.edges) - n + b0 - rank
    return int(b0), int(b1)


# --- construction ---

_PERTURB = 1e-8


def power_adjacency(centers: np.ndarray, radii: np.ndarray, return_vertices: bool = False):
    """Pairs of spheres whose power cells share a facet.

    With ``return_vertices`` also returns the set of spheres whose power
    cell is non-empty.

    The lifted heights get a tiny deterministic perturbation so that
    degenerate inputs (e.g. voxel-lattice centres) resolve to a single
    regular triangulation.
    """
    c = np.asarray(centers, dtype=float)
    r = np.asarray(radii, dtype=float)
    n = len(c)
    if n < 2:
        return (set(), set(range(n))) if return_vertices else set()
    x = c - c.mean(axis=0)
    _, s, vt = np.linalg.svd(x, full_matrices=False)
    scale = max(float(s[0]), 1e-300)
    dim = int(np.sum(s > 1e-9 * scale))
    if dim == 0:
        raise ValueError("duplicate sphere centres")
    y = x @ vt[:dim].T
    if n <= dim + 1:
        pairs = {(i, j) for i in range(n) for j in range(i + 1, n)}
        return (pairs, set(range(n))) if return_vertices else pairs
    ext = float(np.ptp(y, axis=0).max())
    jitter = np.random.default_rng(12345).random(n) * _PERTURB * max(ext, 1.0) ** 2
    lifted = np.column_stack([y, np.sum(y * y, axis=1) - r * r + jitter])
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        hull = ConvexHull(lifted, qhull_options="QJ")
    lower = hull.equations[:, dim] < -1e-12
    pairs = set()
    for simplex in hull.simplices[lower]:
        simplex = sorted(int(v) for v in simplex)
        for a in range(len(simplex)):
            for b in range(a + 1, len(simplex)):
                pairs.add((simplex[a], simplex[b]))
    if return_vertices:
        return pairs, set(np.unique(hull.simplices[lower]).tolist())
    return pairs


def spheres_overlap(c1, r1, c2, r2) -> bool:
    return float(np.linalg.norm(np.asarray(c1) - np.asarray(c2))) <= r1 + r2


def clique_triangles(n: int, edges) -> list[tuple[int, int, int]]:
    nb = [set() for _ in range(n)]
    for i, j in edges:
        nb[i].add(j)
        nb[j].add(i)
    tris = []
    for i, j in edges:
        for k in nb[i] & nb[j]:
            if k > j:
                tris.append((i, j, k))
    return tris


def build_alpha_complex(cloud: MedialCloud, drop_redundant: bool = False) -> SkeletonComplex:
    """Edges between overlapping spheres with facet-adjacent power cells;
    triangles on every triple of pairwise-connected spheres.

    Vertices follow the cloud order. With ``drop_redundant`` spheres whose
    power cell is empty (they are not part of the nerve) are removed and the
    rest renumbered in order.
    """
    if len(cloud) == 0:
        raise ValueError("cannot build a complex from an empty cloud")
    if cloud.has_duplicates():
        raise ValueError("duplicate sphere centres")
    c, r = cloud.centers, cloud.radii
    pairs, live = power_adjacency(c, r, return_vertices=True)
    edges = sorted((i, j) for i, j in pairs if spheres_overlap(c[i], r[i], c[j], r[j]))
    if drop_redundant:
        keep = np.array(sorted(live), dtype=np.int64)
        remap = -np.ones(len(r), dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        edges = [(int(remap[i]), int(remap[j])) for i, j in edges]
        c, r = c[keep], r[keep]
    return SkeletonComplex(c, r, edges, clique_triangles(len(r), edges))


# --- simplification ---

def enclosing_sphere(c1, r1, c2, r2):
    """Smallest sphere containing two spheres."""
    c1, c2 = np.asarray(c1, dtype=float), np.asarray(c2, dtype=float)
    d = float(np.linalg.norm(c2 - c1))
    if d + min(r1, r2) <= max(r1, r2):
        return (c1.copy(), float(r1)) if r1 >= r2 else (c2.copy(), float(r2))
    R = 0.5 * (d + r1 + r2)
    return c1 + (R - r1) / d * (c2 - c1), R


def collapse_cost(c1, r1, c2, r2) -> float:
    """Sum over the two removed spheres of the Hausdorff distance from their
    boundary to the boundary of the merged sphere."""
    cm, R = enclosing_sphere(c1, r1, c2, r2)
    return float(
        np.linalg.norm(np.asarray(c1) - cm) + R - r1 + np.linalg.norm(np.asarray(c2) - cm) + R - r2
    )


def simplify(cx: SkeletonComplex, target_vertices: int, preserve: str = "homology") -> SkeletonComplex:
    """Greedy cheapest-first edge collapse down to ``target_vertices``.

    ``preserve="homology"``: a collapse of edge (a, b) is allowed only if
    every common neighbour w of a and b spans a triangle (a, b, w). This
    link condition keeps the homotopy type of the complex once its hollow
    cliques are filled, so B0 and B1 of the complex are unchanged.

    ``preserve="graph"``: a and b must have no common neighbour, which keeps
    the component count and cycle rank of the 1-skeleton graph itself
    (triangles then never shrink).

    Blocked edges are retried after later collapses; if the target is still
    out of reach a :class:`SimplifyWarning` is issued and the smallest
    reachable complex is returned.
    """
    if target_vertices < 1:
        raise ValueError("target_vertices must be >= 1")
    if preserve not in ("homology", "graph"):
        raise ValueError("preserve must be 'homology' or 'graph'")
    n = cx.n_vertices
    if n <= target_vertices:
        return SkeletonComplex(cx.centers, cx.radii, cx.edges, cx.triangles)

    centers = cx.centers.copy()
    radii = cx.radii.copy()
    alive = np.ones(n, dtype=bool)
    nb = cx.adjacency()
    tri_of = [set() for _ in range(n)]
    for t in map(tuple, cx.triangles.tolist()):
        for v in t:
            tri_of[v].add(t)
    version = np.zeros(n, dtype=np.int64)
    count = n

    def push(heap, a, b):
        lo, hi = (a, b) if a < b else (b, a)
        cost = collapse_cost(centers[lo], radii[lo], centers[hi], radii[hi])
        heapq.heappush(heap, (cost, lo, hi, version[lo], version[hi]))

    while count > target_vertices:
        heap = []
        for a in range(n):
            if alive[a]:
                for b in nb[a]:
                    if a < b:
                        push(heap, a, b)
        progressed = False
        while heap and count > target_vertices:
            _, a, b, va, vb = heapq.heappop(heap)
            if not (alive[a] and alive[b]) or version[a] != va or version[b] != vb or b not in nb[a]:
                continue
            common = nb[a] & nb[b]
            if preserve == "graph" and common:
                continue
            if any(tuple(sorted((a, b, w))) not in tri_of[a] for w in common):
                continue
            # merge b into a (the lower index survives)
            centers[a], radii[a] = enclosing_sphere(centers[a], radii[a], centers[b], radii[b])
            for w in nb[b]:
                nb[w].discard(b)
                if w != a:
                    nb[w].add(a)
                    nb[a].add(w)
            nb[a].discard(b)
            nb[b] = set()
            for t in list(tri_of[b]):
                for v in t:
                    tri_of[v].discard(t)
                if a in t:
                    continue
                new = tuple(sorted(a if v == b else v for v in t))
                for v in new:
                    tri_of[v].add(new)
            alive[b] = False
            count -= 1
            progressed = True
            version[a] += 1
            for w in nb[a]:
                push(heap, a, w)
        if not progressed:
            break

    keep = np.flatnonzero(alive)
    remap = -np.ones(n, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    edges = {(int(remap[a]), int(remap[b])) for a in keep for b in nb[a] if a < b}
    tris = {tuple(int(remap[v]) for v in t) for a in keep for t in tri_of[a]}
    out = SkeletonComplex(centers[keep], radii[keep], sorted(edges), sorted(tris))
    if out.n_vertices > target_vertices:
        warnings.warn(
            f"simplify stopped at {out.n_vertices} vertices (target {target_vertices}): "
            "further collapses would change the topology",
            SimplifyWarning,
            stacklevel=2,
        )
    return out


# --- leaves and clusters ---

def detect_leaves(cx: SkeletonComplex) -> list[FlowInterface]:
    """Flow interfaces at degree-1 vertices that belong to no triangle."""
    if len(cx.edges) == 0:
        raise ValueError("complex has no edges")
    deg = cx.degrees()
    in_tri = np.zeros(cx.n_vertices, dtype=bool)
    in_tri[cx.triangles.ravel()] = True
    nb = cx.adjacency()
    out = []
    for v in np.flatnonzero((deg == 1) & ~in_tri):
        (w,) = nb[v]
        d = cx.centers[v] - cx.centers[w]
        d = d / np.linalg.norm(d)
        out.append(FlowInterface(tuple(map(float, cx.centers[v])), tuple(map(float, d)), float(cx.radii[v]), int(v)))
    return out


def cluster(cx: SkeletonComplex, n_clusters: int) -> np.ndarray:
    """Split the skeleton into ``n_clusters`` connected parts.

    The largest part is bisected repeatedly: its two geodesically farthest
    vertices seed a geodesic Voronoi split (ties go to the lower-index seed),
    which keeps both halves connected.
    """
    n = cx.n_vertices
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must be in [1, {n}]")
    g = cx.graph()
    if connected_components(g, directed=False)[0] != 1:
        raise ValueError("complex is disconnected")
    labels = np.zeros(n, dtype=np.int64)
    for new_label in range(1, n_clusters):
        sizes = np.bincount(labels, minlength=new_label)
        target = int(np.argmax(sizes))
        members = np.flatnonzero(labels == target)
        sub = g[members][:, members]
        d0 = dijkstra(sub, indices=0)
        p = int(np.argmax(d0))
        dp = dijkstra(sub, indices=p)
        q = int(np.argmax(dp))
        dq = dijkstra(sub, indices=q)
        first, second = (p, q) if members[p] < members[q] else (q, p)
        d_first = dp if first == p else dq
        d_second = dq if first == p else dp
        to_second = d_second < d_first
        if not to_second.any() or to_second.all():
            # a single vertex or a tie everywhere: peel off the second seed
            to_second = np.zeros(len(members), dtype=bool)
            to_second[second] = True
        labels[members[to_second]] = new_label
    return _relabel_in_order(labels)


def _relabel_in_order(labels: np.ndarray) -> np.ndarray:
    order = {}
    for lab in labels.tolist():
        order.setdefault(lab, len(order))
    return np.array([order[lab] for lab in labels.tolist()], dtype=np.int64)

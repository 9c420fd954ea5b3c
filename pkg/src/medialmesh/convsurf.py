"""Convolution-surface field over a skeletal complex.

Each primitive (triangle, free edge, isolated vertex) is discretised once
into weighted quadrature nodes; the field at P is the weighted sum of
``K(|P - s|, r_s) = r_s^2 / (|P - s|^2 + r_s^2)`` over the nodes. Node radii
are linear in the vertex radii, which keeps radius fitting cheap.
"""

from __future__ import annotations

from functools import lru_cache
import warnings

import numba
import numpy as np
from scipy.optimize import least_squares

from .skeleton import SkeletonComplex

LEVEL = 0.5
DEGENERATE_AREA = 1e-12


class DegenerateTriangleWarning(UserWarning):
    pass


def kernel_eval(d, r):
    """``r^2 / (d^2 + r^2)``; equals 0.5 at d = r."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("kernel radius must be > 0")
    d = np.asarray(d, dtype=float)
    out = r * r / (d * d + r * r)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=None)
def gauss_legendre01(order: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


class Nodes:
    """Quadrature nodes of a set of primitives.

    pos (m, 3), weight (m,), vid (m, 3) vertex indices and coef (m, 3)
    interpolation coefficients so that radius = sum(coef * vertex_radius[vid]).
    """

    def __init__(self, pos, weight, vid, coef):
        self.pos = np.ascontiguousarray(pos, dtype=float).reshape(-1, 3)
        self.weight = np.ascontiguousarray(weight, dtype=float).reshape(-1)
        self.vid = np.ascontiguousarray(vid, dtype=np.int64).reshape(-1, 3)
        self.coef = np.ascontiguousarray(coef, dtype=float).reshape(-1, 3)

    def radii(self, vertex_radii) -> np.ndarray:
        return np.sum(self.coef * np.asarray(vertex_radii, dtype=float)[self.vid], axis=1)

    def __len__(self):
        return len(self.weight)


def segment_nodes(A, B, ia: int, ib: int, order: int) -> Nodes:
    x, w = gauss_legendre01(order)
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    pos = A + x[:, None] * (B - A)
    vid = np.tile([ia, ib, ib], (order, 1))
    coef = np.column_stack([1.0 - x, x, np.zeros(order)])
    return Nodes(pos, w, vid, coef)


def point_nodes(A, ia: int) -> Nodes:
    return Nodes(np.asarray(A, dtype=float)[None], [1.0], [[ia, ia, ia]], [[1.0, 0.0, 0.0]])


def _right_triangle_nodes(H, X, L, cH, cX, cL, order):
    """Nodes over the normalised right triangle ``H + x (X - H) + y (L - H)``,
    0 <= y <= 1, 0 <= x <= 1 - y. cH, cX, cL map the three corners to
    coefficients over the original vertices (length-3 arrays)."""
    t, w = gauss_legendre01(order)
    yy = np.repeat(t, order)
    xx = (1.0 - yy) * np.tile(t, order)
    ww = np.repeat(w, order) * np.tile(w, order) * (1.0 - yy)
    bh = 1.0 - xx - yy
    pos = H + xx[:, None] * (X - H) + yy[:, None] * (L - H)
    coef = bh[:, None] * cH + xx[:, None] * cX + yy[:, None] * cL
    return pos, ww, coef


def split_triangle(T):
    """Split at the foot of the altitude from the largest angle.

    Returns ``(X, Y, L, t)``: L is the largest-angle vertex, XY the opposite
    (longest) edge, and the foot is ``X + t (Y - X)``.
    """
    T = np.asarray(T, dtype=float)
    lens = [np.linalg.norm(T[(i + 1) % 3] - T[(i + 2) % 3]) for i in range(3)]
    li = int(np.argmax(lens))
    xi, yi = (li + 1) % 3, (li + 2) % 3
    X, Y, L = T[xi], T[yi], T[li]
    t = float(np.dot(L - X, Y - X) / np.dot(Y - X, Y - X))
    return (xi, yi, li), t


def triangle_area(T) -> float:
    T = np.asarray(T, dtype=float)
    return 0.5 * float(np.linalg.norm(np.cross(T[1] - T[0], T[2] - T[0])))


def triangle_nodes(T, vids, order: int) -> Nodes:
    """Two right triangles, each integrated over its normalised domain."""
    T = np.asarray(T, dtype=float)
    (xi, yi, li), t = split_triangle(T)
    X, Y, L = T[xi], T[yi], T[li]
    H = X + t * (Y - X)
    e = np.eye(3)
    cX, cY, cL = e[xi], e[yi], e[li]
    cH = (1.0 - t) * cX + t * cY
    p1, w1, k1 = _right_triangle_nodes(H, X, L, cH, cX, cL, order)
    p2, w2, k2 = _right_triangle_nodes(H, Y, L, cH, cY, cL, order)
    m = 2 * len(w1)
    vid = np.tile(np.asarray(vids, dtype=np.int64), (m, 1))
    return Nodes(np.vstack([p1, p2]), np.r_[w1, w2], vid, np.vstack([k1, k2]))


def _sum_kernel(P, pos, weight, rad):
    d2 = np.sum((np.asarray(P, dtype=float) - pos) ** 2, axis=1)
    return float(np.sum(weight * rad * rad / (d2 + rad * rad)))


def convolve_segment(P, A, B, rA, rB, order: int = 16) -> float:
    """Integral over x in [0, 1] of K(|P - s(x)|, r(x)) with linear radius."""
    if rA <= 0 or rB <= 0:
        raise ValueError("radii must be > 0")
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    if np.array_equal(A, B):
        return kernel_eval(np.linalg.norm(np.asarray(P, dtype=float) - A), rA)
    nodes = segment_nodes(A, B, 0, 1, order)
    return _sum_kernel(P, nodes.pos, nodes.weight, nodes.radii([rA, rB]))


def convolve_triangle(P, T, radii, order: int = 16) -> float:
    """Sum of the two normalised right-triangle integrals of K with linearly
    interpolated radius. Collapsed triangles fall back to the longest edge."""
    T = np.asarray(T, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ValueError("radii must be > 0")
    if triangle_area(T) <= DEGENERATE_AREA:
        warnings.warn("degenerate triangle, integrating its longest edge", DegenerateTriangleWarning, stacklevel=2)
        (xi, yi, _), _ = split_triangle(T)
        return convolve_segment(P, T[xi], T[yi], radii[xi], radii[yi], order)
    nodes = triangle_nodes(T, [0, 1, 2], order)
    return _sum_kernel(P, nodes.pos, nodes.weight, nodes.radii(radii))


# --- batched evaluation ---

# Far-field tier: beyond one bounding diameter from a primitive its order-6
# rule agrees with order 16 to ~1e-10 relative on random triangles.
FAR_ORDER = 6
FAR_DIAMETERS = 1.0


@numba.njit(cache=True)
def _accumulate(px, py, pz, pos, weight, rad, lo, hi, with_grad, out):
    for m in range(lo, hi):
        dx = px - pos[m, 0]
        dy = py - pos[m, 1]
        dz = pz - pos[m, 2]
        r2 = rad[m] * rad[m]
        den = dx * dx + dy * dy + dz * dz + r2
        out[0] += weight[m] * r2 / den
        if with_grad:
            s = -2.0 * weight[m] * r2 / (den * den)
            out[1] += s * dx
            out[2] += s * dy
            out[3] += s * dz


@numba.njit(cache=True)
def _evaluate(P, pos, weight, rad, offsets, far_pos, far_weight, far_rad, far_offsets,
              pc, pR, prmax, pw, eps, with_grad):
    n = P.shape[0]
    f = np.zeros(n)
    g = np.zeros((n, 3)) if with_grad else np.zeros((0, 3))
    nprim = offsets.shape[0] - 1
    out = np.zeros(4)
    for i in range(n):
        px = P[i, 0]
        py = P[i, 1]
        pz = P[i, 2]
        out[:] = 0.0
        for p in range(nprim):
            if eps > 0.0:
                dx = px - pc[p, 0]
                dy = py - pc[p, 1]
                dz = pz - pc[p, 2]
                dmin = np.sqrt(dx * dx + dy * dy + dz * dz) - pR[p]
                if dmin > 0.0:
                    rm2 = prmax[p] * prmax[p]
                    if pw[p] * rm2 / (dmin * dmin + rm2) < eps:
                        continue
                if dmin > 2.0 * FAR_DIAMETERS * pR[p]:
                    _accumulate(px, py, pz, far_pos, far_weight, far_rad, far_offsets[p], far_offsets[p + 1],
                                with_grad, out)
                    continue
            _accumulate(px, py, pz, pos, weight, rad, offsets[p], offsets[p + 1], with_grad, out)
        f[i] = out[0]
        if with_grad:
            g[i, 0] = out[1]
            g[i, 1] = out[2]
            g[i, 2] = out[3]
    return f, g


def _stack(parts) -> Nodes:
    if not parts:
        return Nodes(np.zeros((0, 3)), [], np.zeros((0, 3)), np.zeros((0, 3)))
    return Nodes(np.vstack([p.pos for p in parts]), np.concatenate([p.weight for p in parts]),
                 np.vstack([p.vid for p in parts]), np.vstack([p.coef for p in parts]))


class ConvolutionField:
    """Analytic scalar field whose ``level`` set is the reconstructed surface.

    Primitive ownership: every triangle is convolved; an edge only if it
    bounds no triangle; a vertex only if it has no edge.

    With culling on (the default) primitives whose kernel bound is below
    ``cutoff_epsilon`` are skipped and distant ones use the coarser
    ``FAR_ORDER`` rule; ``cull=False`` always sums the full rule.
    """

    def __init__(self, complex: SkeletonComplex, level: float = LEVEL, quadrature_order: int = 16,
                 cutoff_epsilon: float = 1e-6):
        if not 0.0 < level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if quadrature_order < 2:
            raise ValueError("quadrature_order must be >= 2")
        if cutoff_epsilon < 0:
            raise ValueError("cutoff_epsilon must be >= 0")
        self.complex = complex
        self.level = float(level)
        self.quadrature_order = int(quadrature_order)
        self.cutoff_epsilon = float(cutoff_epsilon)
        self.degenerate_triangles = 0
        self._build()

    def primitives(self):
        """Owned primitives as ('triangle'|'segment'|'point', vertex index tuple)."""
        cx = self.complex
        out = [("triangle", tuple(t)) for t in cx.triangles.tolist()]
        covered = {e for a, b, c in cx.triangles.tolist() for e in ((a, b), (a, c), (b, c))}
        out += [("segment", tuple(e)) for e in cx.edges.tolist() if tuple(e) not in covered]
        used = set(cx.edges.ravel().tolist())
        out += [("point", (v,)) for v in range(cx.n_vertices) if v not in used]
        return out

    def _primitive_nodes(self, kind, pts, vids, order):
        if kind == "triangle":
            return triangle_nodes(pts, vids, order)
        if kind == "segment":
            return segment_nodes(pts[0], pts[1], vids[0], vids[1], order)
        return point_nodes(pts[0], vids[0])

    def _build(self):
        cx = self.complex
        far_order = min(FAR_ORDER, self.quadrature_order)
        parts, offsets, bounds = [], [0], []
        far_parts, far_offsets = [], [0]
        for kind, vids in self.primitives():
            pts = cx.centers[list(vids)]
            if kind == "triangle" and triangle_area(pts) <= DEGENERATE_AREA:
                warnings.warn(f"degenerate triangle {vids}, using its longest edge", DegenerateTriangleWarning,
                              stacklevel=3)
                self.degenerate_triangles += 1
                (xi, yi, _), _ = split_triangle(pts)
                kind, vids = "segment", (vids[xi], vids[yi])
                pts = cx.centers[list(vids)]
            nodes = self._primitive_nodes(kind, pts, vids, self.quadrature_order)
            far = self._primitive_nodes(kind, pts, vids, far_order)
            parts.append(nodes)
            offsets.append(offsets[-1] + len(nodes))
            far_parts.append(far)
            far_offsets.append(far_offsets[-1] + len(far))
            center = pts.mean(axis=0)
            bounds.append((center, float(np.max(np.linalg.norm(pts - center, axis=1))),
                           float(cx.radii[list(vids)].max()), float(nodes.weight.sum())))
        self.nodes = _stack(parts)
        self.far_nodes = _stack(far_parts)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.far_offsets = np.asarray(far_offsets, dtype=np.int64)
        self.n_primitives = len(parts)
        self._pc = np.array([b[0] for b in bounds]).reshape(-1, 3)
        self._pR = np.array([b[1] for b in bounds], dtype=float)
        self._prmax = np.array([b[2] for b in bounds], dtype=float)
        self._pw = np.array([b[3] for b in bounds], dtype=float)
        self.node_radii = self.nodes.radii(cx.radii) if len(self.nodes) else np.zeros(0)
        self.far_radii = self.far_nodes.radii(cx.radii) if len(self.far_nodes) else np.zeros(0)

    def _run(self, P, with_grad, cull=True):
        P = np.ascontiguousarray(np.asarray(P, dtype=float).reshape(-1, 3))
        eps = self.cutoff_epsilon if cull else 0.0
        return _evaluate(P, self.nodes.pos, self.nodes.weight, self.node_radii, self.offsets,
                         self.far_nodes.pos, self.far_nodes.weight, self.far_radii, self.far_offsets,
                         self._pc, self._pR, self._prmax, self._pw, eps, with_grad)

    def __call__(self, P, cull=True):
        P = np.asarray(P, dtype=float)
        f, _ = self._run(P, False, cull)
        return float(f[0]) if P.ndim == 1 else f.reshape(P.shape[:-1])

    def gradient(self, P, cull=True):
        P = np.asarray(P, dtype=float)
        _, g = self._run(P, True, cull)
        return g[0] if P.ndim == 1 else g.reshape(P.shape)

    def value_and_gradient(self, P, cull=True):
        P = np.asarray(P, dtype=float)
        f, g = self._run(P, True, cull)
        if P.ndim == 1:
            return float(f[0]), g[0]
        return f.reshape(P.shape[:-1]), g.reshape(P.shape)

    def parameter_jacobian(self, P) -> np.ndarray:
        """d field(P) / d (vertex center, vertex radius), shape (len(P), n_vertices, 4).

        The triangle split point is held fixed, so the center part is exact
        for segments and points and first-order accurate for triangles.
        No culling.
        """
        P = np.ascontiguousarray(np.asarray(P, dtype=float).reshape(-1, 3))
        return _jacobian(P, self.nodes.pos, self.nodes.weight, self.node_radii, self.nodes.vid, self.nodes.coef,
                         self.complex.n_vertices)

    def radius_jacobian(self, P) -> np.ndarray:
        """d field(P) / d vertex radius, shape (len(P), n_vertices); no culling."""
        return self.parameter_jacobian(P)[:, :, 3]


@numba.njit(cache=True)
def _jacobian(P, pos, weight, rad, vid, coef, n_vertices):
    n = P.shape[0]
    J = np.zeros((n, n_vertices, 4))
    for i in range(n):
        for m in range(pos.shape[0]):
            dx = P[i, 0] - pos[m, 0]
            dy = P[i, 1] - pos[m, 1]
            dz = P[i, 2] - pos[m, 2]
            r = rad[m]
            d2 = dx * dx + dy * dy + dz * dz
            den = d2 + r * r
            dr = weight[m] * 2.0 * r * d2 / (den * den)
            ds = 2.0 * weight[m] * r * r / (den * den)  # d/ds_node = +ds * (P - s)
            for j in range(3):
                c = coef[m, j]
                if c == 0.0:
                    continue
                v = vid[m, j]
                J[i, v, 0] += c * ds * dx
                J[i, v, 1] += c * ds * dy
                J[i, v, 2] += c * ds * dz
                J[i, v, 3] += c * dr
    return J


def field_eval(field: ConvolutionField, P) -> float:
    return field(P)


def field_gradient(field: ConvolutionField, P) -> np.ndarray:
    return field.gradient(P)


def fit_complex(cx: SkeletonComplex, targets, level: float = LEVEL, quadrature_order: int = 8,
                max_evals: int = 40, center_damping: float = 0.05) -> tuple[SkeletonComplex, dict]:
    """Adjust vertex centers and radii so the field passes through ``targets``.

    Minimises ``sum(log(f(q) / level)^2)`` over the target points plus a
    ``center_damping``-weighted penalty on center displacement (mm). Radii are
    optimised in log space so they stay positive. Connectivity is unchanged.
    """
    Q = np.asarray(targets, dtype=float).reshape(-1, 3)
    V = cx.n_vertices
    if V == 0 or len(Q) == 0:
        return cx, {"evaluations": 0, "rms_log_residual": 0.0, "status": 0}
    c0, r0 = cx.centers.copy(), cx.radii.copy()
    damp = np.zeros((3 * V, 4 * V))
    for v in range(V):
        damp[3 * v:3 * v + 3, 4 * v:4 * v + 3] = center_damping * np.eye(3)

    def unpack(x):
        x = x.reshape(V, 4)
        return c0 + x[:, :3], r0 * np.exp(x[:, 3])

    def field_at(x):
        c, r = unpack(x)
        return ConvolutionField(SkeletonComplex(c, r, cx.edges, cx.triangles), level, quadrature_order, 0.0)

    def residual(x):
        f = field_at(x)(Q)
        return np.r_[np.log(np.maximum(f, 1e-300) / level), center_damping * x.reshape(V, 4)[:, :3].ravel()]

    def jacobian(x):
        fl = field_at(x)
        f = np.maximum(fl(Q), 1e-300)
        J = fl.parameter_jacobian(Q)
        J[:, :, 3] *= unpack(x)[1][None]
        return np.vstack([J.reshape(len(Q), -1) / f[:, None], damp])

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateTriangleWarning)
        out = least_squares(residual, np.zeros(4 * V), jac=jacobian, method="trf", max_nfev=max_evals)
    c, r = unpack(out.x)
    info = {
        "evaluations": int(out.nfev),
        "rms_log_residual": float(np.sqrt(np.mean(out.fun[:len(Q)] ** 2))),
        "status": int(out.status),
    }
    return SkeletonComplex(c, r, cx.edges, cx.triangles), info

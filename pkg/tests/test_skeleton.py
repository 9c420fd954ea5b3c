import warnings

import numpy as np
import pytest

from medialmesh import skeleton as S
from medialmesh.mat import MedialCloud
from medialmesh.skeleton import SkeletonComplex

import oracles as O


def path_complex(n, spacing=1.0, r=0.6):
    c = np.zeros((n, 3))
    c[:, 0] = np.arange(n) * spacing
    return SkeletonComplex(c, np.full(n, r), [(i, i + 1) for i in range(n - 1)])


def y_complex(branch_len=5, r=0.6):
    c, e = [[0.0, 0.0, 0.0]], []
    for ang in np.deg2rad([90, 210, 330]):
        prev = 0
        for i in range(1, branch_len + 1):
            c.append([i * np.cos(ang), i * np.sin(ang), 0.0])
            e.append((prev, len(c) - 1))
            prev = len(c) - 1
    return SkeletonComplex(c, np.full(len(c), r), e)


def random_cloud(rng, n):
    c = rng.uniform(-5, 5, (n, 3))
    r = rng.uniform(0.8, 3.0, n)
    return c, r


def random_complex(rng, n=25):
    """Random clique complex of overlapping spheres, possibly with triangles."""
    c, r = random_cloud(rng, n)
    return S.build_alpha_complex(MedialCloud(c, r))


def rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.linalg.det(q))


# --- SkeletonComplex ---

def test_closure_enforced():
    with pytest.raises(ValueError, match="lacks edge"):
        SkeletonComplex(np.eye(3), [1, 1, 1], [(0, 1), (1, 2)], [(0, 1, 2)])
    with pytest.raises(ValueError):
        SkeletonComplex(np.eye(3), [1, 1, 1], [(0, 1), (0, 1)])
    with pytest.raises(ValueError):
        SkeletonComplex(np.eye(3), [1, 1, 1], [(0, 5)])


def test_json_roundtrip(rng):
    cx = random_complex(rng)
    obj = cx.to_json()
    assert set(obj) == {"vertices", "edges", "triangles"}
    back = SkeletonComplex.from_json(obj)
    assert np.array_equal(back.centers, cx.centers) and np.array_equal(back.edges, cx.edges)
    assert np.array_equal(back.triangles, cx.triangles)


def test_betti_numbers():
    assert S.betti_numbers(path_complex(4)) == (1, 0)
    cyc = SkeletonComplex(np.eye(3), [1, 1, 1], [(0, 1), (1, 2), (0, 2)])
    assert S.betti_numbers(cyc) == (1, 1)
    filled = SkeletonComplex(np.eye(3), [1, 1, 1], [(0, 1), (1, 2), (0, 2)], [(0, 1, 2)])
    assert S.betti_numbers(filled) == (1, 0)
    assert S.betti_numbers(SkeletonComplex(np.eye(3), [1, 1, 1])) == (3, 0)


# --- build_alpha_complex ---

def test_two_overlapping_spheres():
    cx = S.build_alpha_complex(MedialCloud([[0, 0, 0], [3, 0, 0]], [2.0, 2.0]))
    assert cx.edges.tolist() == [[0, 1]] and len(cx.triangles) == 0


def test_two_disjoint_spheres():
    cx = S.build_alpha_complex(MedialCloud([[0, 0, 0], [10, 0, 0]], [2.0, 2.0]))
    assert cx.n_vertices == 2 and len(cx.edges) == 0


def test_equilateral_triangle():
    c = [[0, 0, 0], [3, 0, 0], [1.5, 1.5 * np.sqrt(3), 0]]
    cx = S.build_alpha_complex(MedialCloud(c, [2.0, 2.0, 2.0]))
    assert cx.edges.tolist() == [[0, 1], [0, 2], [1, 2]]
    assert cx.triangles.tolist() == [[0, 1, 2]]


def test_empty_cloud_raises():
    with pytest.raises(ValueError):
        S.build_alpha_complex(MedialCloud(np.zeros((0, 3)), []))


def test_single_sphere():
    cx = S.build_alpha_complex(MedialCloud([[1, 2, 3]], [1.0]))
    assert cx.n_vertices == 1 and len(cx.edges) == 0


@pytest.mark.parametrize("seed", range(25))
def test_nerve_matches_half_space_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 41))
    c, r = random_cloud(rng, n)
    cx = S.build_alpha_complex(MedialCloud(c, r))
    edges, tris = O.nerve_oracle(c, r)
    assert set(map(tuple, cx.edges.tolist())) == edges
    assert set(map(tuple, cx.triangles.tolist())) == tris


def test_nerve_planar_cloud(rng):
    # coplanar centres exercise the reduced-dimension hull
    c = np.c_[rng.uniform(-4, 4, (15, 2)), np.zeros(15)]
    r = rng.uniform(0.8, 2.5, 15)
    cx = S.build_alpha_complex(MedialCloud(c, r))
    edges, _ = O.nerve_oracle(c, r)
    assert set(map(tuple, cx.edges.tolist())) == edges


def test_drop_redundant_removes_hidden_sphere():
    # the small sphere sits inside the big one and owns no power cell
    cloud = MedialCloud([[0, 0, 0], [0.5, 0, 0], [4, 0, 0], [0, 4, 0], [0, 0, 4]], [3.0, 0.5, 2.0, 2.0, 2.0])
    full = S.build_alpha_complex(cloud)
    slim = S.build_alpha_complex(cloud, drop_redundant=True)
    assert full.n_vertices == 5 and slim.n_vertices == 4
    assert not np.any(np.all(slim.centers == [0.5, 0, 0], axis=1))


def test_build_rigid_equivariance(rng):
    c, r = random_cloud(rng, 30)
    q, t = rotation(rng), rng.normal(size=3)
    a = S.build_alpha_complex(MedialCloud(c, r))
    b = S.build_alpha_complex(MedialCloud(c @ q.T + t, r))
    assert np.array_equal(a.edges, b.edges) and np.array_equal(a.triangles, b.triangles)


# --- simplify ---

def test_simplify_noop_when_target_large(rng):
    cx = random_complex(rng)
    out = S.simplify(cx, cx.n_vertices + 3)
    assert np.array_equal(out.centers, cx.centers) and np.array_equal(out.edges, cx.edges)


def test_simplify_path_to_two():
    out = S.simplify(path_complex(5), 2)
    assert out.n_vertices == 2 and out.edges.tolist() == [[0, 1]]
    assert S.betti_numbers(out)[0] == 1
    # the merged spheres still contain every input sphere
    cx = path_complex(5)
    for c, r in zip(cx.centers, cx.radii):
        assert any(np.linalg.norm(c - m) + r <= R + 1e-9 for m, R in zip(out.centers, out.radii))


@pytest.mark.parametrize("target", range(4, 16))
def test_simplify_y_keeps_three_leaves(target):
    out = S.simplify(y_complex(), target)
    assert len(S.detect_leaves(out)) == 3


def test_simplify_warns_when_blocked():
    # three disjoint vertices can never merge
    cx = SkeletonComplex(np.eye(3) * 10, [1, 1, 1])
    with pytest.warns(S.SimplifyWarning):
        out = S.simplify(cx, 1)
    assert out.n_vertices == 3


def test_simplify_keeps_cycle():
    ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    c = np.c_[3 * np.cos(ang), 3 * np.sin(ang), np.zeros(8)]
    cx = SkeletonComplex(c, np.full(8, 1.5), [(i, (i + 1) % 8) for i in range(8)])
    with pytest.warns(S.SimplifyWarning):
        out = S.simplify(cx, 1)
    assert S.betti_numbers(out) == (1, 1) and out.n_vertices == 3


@pytest.mark.parametrize("seed", range(20))
def test_simplify_preserves_betti(seed):
    rng = np.random.default_rng(100 + seed)
    cx = random_complex(rng, 30)
    before = S.betti_numbers(cx)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", S.SimplifyWarning)
        for target in (20, 10, 3):
            out = S.simplify(cx, target)
            assert S.betti_numbers(out) == before
            ga = O.graph_betti(out.n_vertices, out.edges.tolist())
            assert ga[0] == before[0]
            g = S.simplify(cx, target, preserve="graph")
            assert O.graph_betti(g.n_vertices, g.edges.tolist()) == O.graph_betti(cx.n_vertices, cx.edges.tolist())


def test_simplify_bad_target():
    with pytest.raises(ValueError):
        S.simplify(path_complex(3), 0)
    with pytest.raises(ValueError):
        S.simplify(path_complex(3), 2, preserve="nope")


def test_collapse_cost_and_enclosing_sphere():
    c, R = S.enclosing_sphere([0, 0, 0], 1.0, [2, 0, 0], 1.0)
    assert np.allclose(c, [1, 0, 0]) and R == 2.0
    assert S.collapse_cost([0, 0, 0], 1.0, [2, 0, 0], 1.0) == pytest.approx(4.0)
    c, R = S.enclosing_sphere([0, 0, 0], 3.0, [1, 0, 0], 1.0)
    assert np.allclose(c, 0) and R == 3.0
    assert S.collapse_cost([0, 0, 0], 3.0, [1, 0, 0], 1.0) == pytest.approx(3.0)


def test_simplify_rigid_equivariance(rng):
    cx = random_complex(rng, 30)
    q, t = rotation(rng), rng.normal(size=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", S.SimplifyWarning)
        a = S.simplify(cx, 8)
        b = S.simplify(cx.transformed(q, t), 8)
    assert np.array_equal(a.edges, b.edges)
    assert np.allclose(a.centers @ q.T + t, b.centers, atol=1e-9)
    assert np.allclose(a.radii, b.radii)


# --- detect_leaves ---

def test_leaves_path():
    leaves = S.detect_leaves(path_complex(4))
    assert len(leaves) == 2
    n0, n1 = np.array(leaves[0].normal), np.array(leaves[1].normal)
    assert n0 @ n1 == pytest.approx(-1.0, abs=1e-12)
    for f in leaves:
        assert np.linalg.norm(f.normal) == pytest.approx(1.0, abs=1e-9)
    assert leaves[0].leaf_vertex == 0 and np.allclose(leaves[0].normal, [-1, 0, 0])
    assert leaves[0].to_json() == {"center": [0.0, 0.0, 0.0], "normal": [-1.0, 0.0, 0.0], "radius": 0.6}


def test_leaves_y_and_cycle():
    assert len(S.detect_leaves(y_complex())) == 3
    cyc = SkeletonComplex(np.eye(3), [1, 1, 1], [(0, 1), (1, 2), (0, 2)])
    assert S.detect_leaves(cyc) == []


def test_leaves_skip_triangle_vertices():
    # vertex 3 hangs off a filled triangle; triangle corners are never leaves
    c = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [3, 0, 0]]
    cx = SkeletonComplex(c, [1, 1, 1, 1], [(0, 1), (0, 2), (1, 2), (1, 3)], [(0, 1, 2)])
    assert [f.leaf_vertex for f in S.detect_leaves(cx)] == [3]


def test_leaves_count_is_degree_property(rng):
    for _ in range(10):
        cx = random_complex(rng)
        if len(cx.edges) == 0:
            continue
        in_tri = np.zeros(cx.n_vertices, bool)
        in_tri[cx.triangles.ravel()] = True
        assert len(S.detect_leaves(cx)) == int(np.sum((cx.degrees() == 1) & ~in_tri))


def test_leaves_need_edges():
    with pytest.raises(ValueError):
        S.detect_leaves(SkeletonComplex(np.eye(3), [1, 1, 1]))


def test_leaves_rigid_equivariance(rng):
    q, t = rotation(rng), rng.normal(size=3)
    a = S.detect_leaves(y_complex())
    b = S.detect_leaves(y_complex().transformed(q, t))
    for fa, fb in zip(a, b):
        assert np.allclose(q @ np.array(fa.normal), fb.normal, atol=1e-12)
        assert np.allclose(q @ np.array(fa.center) + t, fb.center, atol=1e-12)


# --- cluster ---

def connected_parts(cx, labels):
    nb = cx.adjacency()
    for lab in np.unique(labels):
        members = set(np.flatnonzero(labels == lab).tolist())
        start = next(iter(members))
        seen, stack = {start}, [start]
        while stack:
            v = stack.pop()
            for w in nb[v] & members:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if seen != members:
            return False
    return True


def test_cluster_single():
    assert np.all(S.cluster(y_complex(), 1) == 0)


def test_cluster_path_halves():
    labels = S.cluster(path_complex(10), 2)
    assert labels.tolist() == [0] * 5 + [1] * 5


def test_cluster_y_branches():
    cx = y_complex(4)
    labels = S.cluster(cx, 3)
    assert len(np.unique(labels)) == 3 and connected_parts(cx, labels)
    # each branch tip lands in its own cluster
    tips = [4, 8, 12]
    assert len({labels[t] for t in tips}) == 3
    for b in range(3):
        branch = range(1 + 4 * b, 5 + 4 * b)
        assert len({labels[v] for v in branch}) == 1


def test_cluster_parts_connected(rng):
    for _ in range(5):
        cx = random_complex(rng, 30)
        if S.betti_numbers(cx)[0] != 1:
            continue
        for k in (2, 4, 7):
            labels = S.cluster(cx, k)
            assert len(np.unique(labels)) == k and connected_parts(cx, labels)


def test_cluster_errors():
    with pytest.raises(ValueError, match="disconnected"):
        S.cluster(SkeletonComplex(np.eye(3) * 10, [1, 1, 1], [(0, 1)]), 2)
    with pytest.raises(ValueError):
        S.cluster(path_complex(3), 4)

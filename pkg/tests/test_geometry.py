import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groundmesh.geometry import (
    Aabb,
    NeighborIndex,
    PointCloud,
    RigidScaleTransform,
    TriangleMesh,
    apply_transform,
    bbox_diagonal,
    build_index,
    compose,
    estimate_normals,
    knn,
    radius_search,
    random_rotation,
    rotation_angle,
)


def dist(pts, q):
    d = pts - q
    return np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2 + d[:, 2] ** 2)


def brute_knn(pts, q, k):
    d = dist(pts, q)
    order = np.lexsort((np.arange(len(pts)), d))[:k]
    return order, d[order]


def brute_radius(pts, q, r):
    d = dist(pts, q)
    idx = np.flatnonzero(d <= r)
    order = np.lexsort((idx, d[idx]))
    return idx[order], d[idx][order]


def random_transform(rng, scale=None):
    s = rng.uniform(0.2, 3.0) if scale is None else scale
    return RigidScaleTransform(s, random_rotation(rng), rng.normal(size=3))


# --- types -------------------------------------------------------------------

def test_point_cloud_rejects_bad_input():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        PointCloud([[0, 0, np.nan]])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), normals=[[0, 0, 2.0], [0, 0, 1]])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), normals=[[0, 0, 1.0]])


def test_point_cloud_does_not_freeze_caller_array():
    a = np.zeros((2, 3))
    PointCloud(a)
    a[0, 0] = 1.0


def test_mesh_validation_names_face():
    with pytest.raises(ValueError, match="face 1"):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 2], [0, 1, 3]])
    with pytest.raises(ValueError, match="degenerate"):
        TriangleMesh(np.eye(3), [[0, 1, 1]])


def test_transform_validation():
    with pytest.raises(ValueError):
        RigidScaleTransform(0.0)
    with pytest.raises(ValueError):
        RigidScaleTransform(1.0, np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        RigidScaleTransform(1.0, 1.01 * np.eye(3))


def test_transform_dict_round_trip():
    T = random_transform(np.random.default_rng(1))
    U = RigidScaleTransform.from_dict(T.to_dict())
    assert U.scale == T.scale
    assert np.array_equal(U.rotation, T.rotation)
    assert np.array_equal(U.translation, T.translation)


def test_aabb():
    box = Aabb.of(np.array([[0, 0, 0], [1, 2, 2.0]]))
    assert box.diagonal == pytest.approx(3.0)
    with pytest.raises(ValueError):
        Aabb([1, 0, 0], [0, 0, 0])


# --- neighbour search --------------------------------------------------------

def test_build_index_empty():
    with pytest.raises(ValueError, match="empty input"):
        build_index(PointCloud(np.empty((0, 3))))


def test_single_point_knn():
    idx = build_index(PointCloud([[1.0, 2.0, 3.0]]))
    assert knn(idx, [1, 2, 3], 1) == [(0, 0.0)]


def test_cube_corner_distance():
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)
    (i, d), = knn(build_index(PointCloud(corners)), [0.5, 0.5, 0.5], 1)
    assert i == 0  # all corners tie, lowest index wins
    assert d == pytest.approx(np.sqrt(3) / 2, abs=1e-15)


def test_collinear_knn_order():
    idx = build_index(PointCloud([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]]))
    assert [i for i, _ in knn(idx, [0.9, 0, 0], 2)] == [1, 0]


def test_knn_k_too_large():
    with pytest.raises(ValueError):
        knn(build_index(PointCloud(np.zeros((3, 3)) + np.arange(3)[:, None])), [0, 0, 0], 4)


def test_grid_radius_six_neighbours():
    g = np.stack(np.meshgrid(*[np.arange(5.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    res = radius_search(build_index(PointCloud(g)), [2, 2, 2], 1.05)
    assert len(res) == 7
    assert res[0] == (62, 0.0)


def test_radius_smaller_than_spacing():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    res = radius_search(build_index(PointCloud(pts)), pts[7], 1e-6)
    assert res == [(7, 0.0)]


@pytest.mark.parametrize("n", [500, 2000])
def test_knn_matches_brute_force(n):
    rng = np.random.default_rng(n)
    pts = rng.uniform(-1, 1, size=(n, 3))
    index = NeighborIndex(pts)
    queries = rng.uniform(-1, 1, size=(40, 3))
    for q in queries:
        i, d = index.knn(q, 12)
        bi, bd = brute_knn(pts, q, 12)
        assert np.array_equal(i, bi)
        assert np.allclose(d, bd, atol=1e-12, rtol=0)
    bi = np.array([brute_knn(pts, q, 5)[0] for q in queries])
    assert np.array_equal(index.knn_batch(queries, 5)[0], bi)


@pytest.mark.parametrize("n", [500, 2000])
def test_radius_matches_brute_force(n):
    rng = np.random.default_rng(n + 1)
    pts = rng.uniform(-1, 1, size=(n, 3))
    index = NeighborIndex(pts)
    queries = rng.uniform(-1, 1, size=(30, 3))
    indptr, flat, dist = index.radius_neighbors(queries, 0.25)
    for r, q in enumerate(queries):
        i, d = index.radius_search(q, 0.25)
        bi, bd = brute_radius(pts, q, 0.25)
        assert np.array_equal(i, bi)
        assert np.allclose(d, bd, atol=1e-12, rtol=0)
        assert np.array_equal(flat[indptr[r]:indptr[r + 1]], bi)


def test_knn_ties_on_integer_lattice():
    g = np.stack(np.meshgrid(*[np.arange(4.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    g = g[np.random.default_rng(3).permutation(len(g))]
    index = NeighborIndex(g)
    for q in g[:20]:
        for k in (2, 5, 7, 11):
            assert np.array_equal(index.knn(q, k)[0], brute_knn(g, q, k)[0])
    assert np.array_equal(index.knn_batch(g[:20], 7)[0], [brute_knn(g, q, 7)[0] for q in g[:20]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 30))
def test_knn_property_random_clouds(seed, k):
    rng = np.random.default_rng(seed)
    # rounded coordinates make exact ties common
    pts = np.round(rng.uniform(-1, 1, size=(60, 3)), 1)
    q = np.round(rng.uniform(-1, 1, size=3), 1)
    i, d = NeighborIndex(pts).knn(q, k)
    bi, bd = brute_knn(pts, q, k)
    assert np.array_equal(i, bi)
    assert np.all(np.diff(d) >= 0)


# --- normals -----------------------------------------------------------------

def test_plane_normals_face_viewpoint():
    rng = np.random.default_rng(0)
    pts = np.c_[rng.uniform(-1, 1, (400, 2)), np.zeros(400)]
    out = estimate_normals(PointCloud(pts), 20, viewpoint=(0, 0, 1))
    assert np.allclose(out.normals, [0, 0, 1], atol=1e-6)
    assert not out.low_confidence.any()


def test_sphere_normals_radial():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(6000, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    out = estimate_normals(PointCloud(p), 20, viewpoint=(0, 0, 10))
    vis = p[:, 2] > 0.2
    cosang = np.abs(np.einsum("ij,ij->i", out.normals[vis], p[vis]))
    assert np.degrees(np.arccos(np.clip(cosang, -1, 1))).max() < 5.0
    ok = ~out.low_confidence
    assert np.all(np.einsum("ij,ij->i", out.normals[ok], np.array([0, 0, 10]) - p[ok]) >= 0)


def test_line_is_low_confidence():
    pts = np.c_[np.arange(10.0), np.zeros(10), np.zeros(10)]
    out = estimate_normals(PointCloud(pts), 10)
    assert out.low_confidence.all()
    assert np.allclose(np.linalg.norm(out.normals, axis=1), 1.0)


def test_normals_k_checks():
    with pytest.raises(ValueError):
        estimate_normals(PointCloud(np.random.default_rng(0).normal(size=(10, 3))), 2)
    with pytest.raises(ValueError):
        estimate_normals(PointCloud(np.random.default_rng(0).normal(size=(5, 3))), 6)


# --- bbox and transforms -----------------------------------------------------

def test_bbox_diagonal_examples():
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)
    assert bbox_diagonal(PointCloud(corners)) == pytest.approx(np.sqrt(3))
    assert bbox_diagonal(PointCloud([[1, 2, 3.0]])) == 0.0
    assert bbox_diagonal(PointCloud([[0, 0, 0], [3, 4, 0.0]])) == 5.0
    with pytest.raises(ValueError):
        bbox_diagonal(PointCloud(np.empty((0, 3))))


def test_apply_identity_and_scale():
    rng = np.random.default_rng(0)
    c = PointCloud(rng.normal(size=(20, 3)))
    assert np.allclose(apply_transform(c, RigidScaleTransform()).points, c.points, atol=1e-15, rtol=0)
    corners = PointCloud(np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float))
    assert bbox_diagonal(apply_transform(corners, RigidScaleTransform(2.0))) == pytest.approx(2 * np.sqrt(3))


def test_apply_rotates_normals_only():
    rng = np.random.default_rng(2)
    n = rng.normal(size=(10, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    T = RigidScaleTransform(3.0, random_rotation(rng), [1, 2, 3])
    out = apply_transform(PointCloud(rng.normal(size=(10, 3)), n), T)
    assert np.allclose(out.normals, n @ T.rotation.T, atol=1e-12)


def test_compose_examples():
    rng = np.random.default_rng(5)
    T1, T2 = random_transform(rng), random_transform(rng)
    C = compose(RigidScaleTransform(), T1)
    assert np.allclose(C.rotation, T1.rotation) and np.allclose(C.translation, T1.translation)
    a = compose(RigidScaleTransform(1, np.eye(3), [1, 0, 0]), RigidScaleTransform(1, np.eye(3), [0, 2, 0]))
    assert np.allclose(a.translation, [1, 2, 0])
    p = rng.normal(size=(100, 3))
    assert np.allclose(compose(T1, T2).apply_points(p), T1.apply_points(T2.apply_points(p)), atol=1e-12)
    back = compose(T1, T1.inverse()).apply_points(p)
    assert np.allclose(back, p, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_transform_scales_distances(seed):
    rng = np.random.default_rng(seed)
    T = random_transform(rng)
    p, q = rng.normal(size=(2, 3))
    lhs = np.linalg.norm(T.apply_points(p[None])[0] - T.apply_points(q[None])[0])
    assert lhs == pytest.approx(T.scale * np.linalg.norm(p - q), rel=1e-9)
    R = compose(T, random_transform(rng)).rotation
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


def test_rotation_angle():
    c, s = np.cos(0.3), np.sin(0.3)
    assert rotation_angle(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])) == pytest.approx(0.3)
    assert rotation_angle(np.eye(3)) == 0.0


def test_mesh_topology_helpers():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    tet = TriangleMesh(v, [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    assert tet.euler_characteristic() == 2
    assert tet.is_closed()
    assert not TriangleMesh(v, [[0, 2, 1], [0, 1, 3]]).is_closed()

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groundmesh.features import CorrespondenceSet
from groundmesh.geometry import (
    PointCloud,
    RigidScaleTransform,
    bbox_diagonal,
    compose,
    random_rotation,
    rotation_angle,
)
from groundmesh.metrics import sample_surface
from groundmesh.registration import (
    DRAW_CAP,
    DegenerateSampleError,
    IcpConfig,
    RansacConfig,
    coverage_score,
    facing_mask,
    fit_rigid,
    icp_refine,
    init_scale,
    ransac_register,
    register_object,
    sample_triples,
    spread_pose,
)
from groundmesh.scene import SceneSpec, canonical_mesh, synth_scene


def rot_about(axis, angle):
    axis = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def objective(R, t, xs, ys):
    r = xs @ R.T + t - ys
    return float((r * r).sum())


# --- init_scale --------------------------------------------------------------

def test_init_scale_examples():
    rng = np.random.default_rng(0)
    c = PointCloud(rng.normal(size=(30, 3)))
    assert init_scale(c, c) == 1.0
    assert init_scale(c, PointCloud(2 * c.points)) == pytest.approx(2.0)
    cube = PointCloud(np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float))
    tgt = PointCloud([[0, 0, 0], [0.25, 0, 0]])
    assert init_scale(cube, tgt) == pytest.approx(0.1443, abs=1e-4)
    with pytest.raises(ValueError, match="degenerate source"):
        init_scale(PointCloud([[1, 1, 1.0]]), tgt)


# --- fit_rigid ---------------------------------------------------------------

def test_fit_identity_and_translation():
    xs = np.random.default_rng(1).normal(size=(10, 3))
    f = fit_rigid(xs, xs)
    assert np.allclose(f.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(f.translation, 0, atol=1e-12)
    assert f.rmse < 1e-12
    g = fit_rigid(xs, xs + [1, 2, 3])
    assert np.allclose(g.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(g.translation, [1, 2, 3], atol=1e-12)


def test_fit_rz90():
    xs = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, 0.0]])
    Rz = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    f = fit_rigid(xs, xs @ Rz.T)
    assert np.abs(f.rotation - Rz).max() < 1e-12
    assert np.abs(f.translation).max() < 1e-12


def test_fit_mirror_stays_proper():
    rng = np.random.default_rng(2)
    xs = rng.normal(size=(20, 3))
    ys = xs * [1, 1, -1] + rng.normal(scale=1e-6, size=xs.shape)
    f = fit_rigid(xs, ys)
    assert np.linalg.det(f.rotation) == pytest.approx(1.0, abs=1e-12)


def test_fit_errors():
    xs = np.random.default_rng(3).normal(size=(5, 3))
    with pytest.raises(ValueError, match="mismatch"):
        fit_rigid(xs, xs[:4])
    with pytest.raises(ValueError):
        fit_rigid(xs[:2], xs[:2])
    line = np.c_[np.arange(5.0), np.zeros(5), np.zeros(5)]
    with pytest.raises(DegenerateSampleError, match="degenerate sample"):
        fit_rigid(line, line + 1)


def test_fit_intermediates_consistent():
    rng = np.random.default_rng(4)
    xs = rng.normal(size=(15, 3))
    ys = xs @ random_rotation(rng).T + 1.0
    f = fit_rigid(xs, ys)
    assert np.allclose(f.svd_U @ np.diag(f.svd_S) @ f.svd_V.T, f.cross_covariance, atol=1e-9)
    assert np.allclose(f.source_centroid, xs.mean(0)) and np.allclose(f.target_centroid, ys.mean(0))
    assert np.allclose(f.translation, f.target_centroid - f.rotation @ f.source_centroid)


def test_fit_umeyama_scale():
    rng = np.random.default_rng(5)
    xs = rng.normal(size=(30, 3))
    R = random_rotation(rng)
    f = fit_rigid(xs, 2.5 * xs @ R.T + [0, 1, 0], with_scale=True)
    assert f.scale == pytest.approx(2.5, rel=1e-12)
    assert np.allclose(f.rotation, R, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 40))
def test_fit_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    xs, ys = rng.normal(size=(2, n, 3))
    Q = random_rotation(rng)
    try:
        f = fit_rigid(xs, ys)
    except DegenerateSampleError:
        return
    g = fit_rigid(xs @ Q.T, ys @ Q.T)
    assert np.allclose(g.rotation, Q @ f.rotation @ Q.T, atol=1e-9)
    assert np.allclose(g.translation, Q @ f.translation, atol=1e-9)
    assert np.linalg.det(f.rotation) == pytest.approx(1.0, abs=1e-9)


def test_fit_beats_random_candidates():
    rng = np.random.default_rng(6)
    xs = rng.normal(size=(12, 3))
    ys = rng.normal(size=(12, 3))
    f = fit_rigid(xs, ys)
    best = objective(f.rotation, f.translation, xs, ys)
    xb, yb = xs.mean(0), ys.mean(0)
    for _ in range(2000):
        R = random_rotation(rng)
        assert best <= objective(R, yb - R @ xb, xs, ys) + 1e-9


# --- RANSAC -------------------------------------------------------------------

def corr_scene(seed, n_good=70, n_bad=30, sigma=0.0):
    rng = np.random.default_rng(seed)
    src = rng.uniform(-0.1, 0.1, size=(n_good + n_bad, 3))
    T = RigidScaleTransform(1.0, random_rotation(rng), rng.normal(scale=0.2, size=3))
    tgt = T.apply_points(src) + rng.normal(scale=sigma, size=src.shape)
    tgt[n_good:] = rng.uniform(-0.3, 0.3, size=(n_bad, 3))
    perm = rng.permutation(len(src))
    pairs = np.c_[perm, perm]
    return PointCloud(src), PointCloud(tgt), CorrespondenceSet(pairs, np.zeros(len(pairs))), T


def test_ransac_noiseless_outlier_free():
    src, tgt, corr, T = corr_scene(0, 50, 0)
    r = ransac_register(corr, src, tgt, RansacConfig(inlier_threshold=1e-6))
    assert r.converged and r.inlier_count == 50
    assert np.allclose(r.transform.rotation, T.rotation, atol=1e-9)
    assert np.allclose(r.transform.translation, T.translation, atol=1e-9)


def test_ransac_with_outliers():
    sigma = 0.001
    src, tgt, corr, T = corr_scene(1, 70, 30, sigma)
    r = ransac_register(corr, src, tgt, RansacConfig(inlier_threshold=2 * sigma * np.sqrt(3)))
    assert r.inlier_count >= 66
    assert np.degrees(rotation_angle(r.transform.rotation.T @ T.rotation)) < 1.0
    assert np.linalg.norm(r.transform.translation - T.translation) < 0.01 * bbox_diagonal(src)


def test_ransac_negative_control():
    rng = np.random.default_rng(2)
    src = PointCloud(rng.uniform(size=(100, 3)))
    tgt = PointCloud(rng.uniform(size=(100, 3)))
    corr = CorrespondenceSet(np.c_[np.arange(100), np.arange(100)], np.zeros(100))
    r = ransac_register(corr, src, tgt, RansacConfig(inlier_threshold=0.01, max_iterations=500))
    assert not r.converged or r.inlier_count < 10


def test_ransac_needs_three():
    src, tgt, corr, _ = corr_scene(3, 2, 0)
    with pytest.raises(ValueError):
        ransac_register(corr, src, tgt)


def test_ransac_deterministic_and_batch_independent():
    src, tgt, corr, _ = corr_scene(4, 30, 70, 0.001)
    cfg = RansacConfig(inlier_threshold=0.004, seed=123, max_iterations=3000)
    a = ransac_register(corr, src, tgt, cfg)
    b = ransac_register(corr, src, tgt, cfg)
    c = ransac_register(corr, src, tgt, cfg, batch=7)
    for r in (b, c):
        assert np.array_equal(a.transform.rotation, r.transform.rotation)
        assert np.array_equal(a.transform.translation, r.transform.translation)
        assert (a.inlier_count, a.iterations_used) == (r.inlier_count, r.iterations_used)


def test_sample_triples_pure_function_of_iteration():
    full = sample_triples(9, np.arange(100), 57)
    assert full.shape == (100, DRAW_CAP, 3)
    assert full.min() >= 0 and full.max() < 57
    part = sample_triples(9, np.array([73, 5]), 57)
    assert np.array_equal(part, full[[73, 5]])
    assert not np.array_equal(sample_triples(10, np.arange(100), 57), full)


def test_ransac_skips_degenerate_triples():
    # every correspondence on one line except three: only those can seed a fit
    rng = np.random.default_rng(5)
    line = np.c_[np.linspace(0, 1, 40), np.zeros(40), np.zeros(40)]
    extra = rng.normal(size=(3, 3))
    src = np.vstack([line, extra])
    tgt = src + [0.5, 0, 0]
    corr = CorrespondenceSet(np.c_[np.arange(43), np.arange(43)], np.zeros(43))
    r = ransac_register(corr, PointCloud(src), PointCloud(tgt), RansacConfig(inlier_threshold=1e-6))
    assert r.converged
    assert r.inlier_count == 43


# --- ICP --------------------------------------------------------------------

def sphere_and_box(n=3000, seed=0):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(n // 2, 3))
    s = 0.05 * s / np.linalg.norm(s, axis=1, keepdims=True) + [0.06, 0, 0]
    b = rng.uniform(-0.04, 0.04, size=(n - n // 2, 3))
    axis = rng.integers(0, 3, len(b))
    b[np.arange(len(b)), axis] = np.sign(b[np.arange(len(b)), axis]) * 0.04
    return np.vstack([s, b - [0.05, 0, 0]])


def test_icp_fixed_point():
    pts = sphere_and_box()
    T = RigidScaleTransform(1.0, random_rotation(np.random.default_rng(1)), [0.1, 0.2, 0.3])
    r = icp_refine(PointCloud(pts), PointCloud(T.apply_points(pts)), T)
    assert r.converged and r.iterations_used == 1 and r.inlier_rmse < 1e-12


def test_icp_recovers_perturbation():
    pts = sphere_and_box()
    diag = bbox_diagonal(PointCloud(pts))
    T = RigidScaleTransform(1.0, random_rotation(np.random.default_rng(2)), [0.0, 0.1, 0.6])
    init = compose(RigidScaleTransform(1.0, rot_about([1, 2, 3], np.radians(10)), [0.05 * diag, 0, 0]), T)
    cfg = IcpConfig(max_iterations=200, max_correspondence_distance=diag)
    r = icp_refine(PointCloud(pts), PointCloud(T.apply_points(pts)), init, cfg)
    assert r.inlier_rmse < 1e-6 * diag
    assert r.rmse_history[-1] <= r.rmse_history[0]


def test_icp_keeps_scale_by_default():
    pts = sphere_and_box()
    init = RigidScaleTransform(1.3)
    r = icp_refine(PointCloud(pts), PointCloud(pts * 1.2), init, IcpConfig(max_correspondence_distance=1.0))
    assert r.transform.scale == 1.3
    s = icp_refine(PointCloud(pts), PointCloud(pts * 1.2), init,
                   IcpConfig(max_iterations=200, max_correspondence_distance=1.0, estimate_scale=True))
    assert s.transform.scale == pytest.approx(1.2, rel=1e-6)


def test_icp_no_correspondences():
    pts = sphere_and_box(200)
    r = icp_refine(PointCloud(pts), PointCloud(pts + 10.0), RigidScaleTransform(), IcpConfig(max_correspondence_distance=0.1))
    assert not r.converged and r.inlier_count == 0


def test_icp_gross_misalignment_reports_large_rmse():
    sc = synth_scene(SceneSpec(shape="union", seed=3, samples=3000))
    src = sample_surface(sc.source_mesh, 3000, 0)
    bad = compose(sc.gt_transform, RigidScaleTransform(1.0, rot_about([0, 1, 0], np.pi / 2)))
    r = icp_refine(src, sc.target_cloud, bad, IcpConfig(max_correspondence_distance=0.03))
    assert r.inlier_rmse > 1e-3


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_icp_converged_never_worse(seed):
    rng = np.random.default_rng(seed)
    pts = sphere_and_box(600, seed % 100)
    tgt = pts + rng.normal(scale=0.002, size=pts.shape)
    init = RigidScaleTransform(1.0, rot_about(rng.normal(size=3), rng.uniform(0, 0.3)), rng.normal(scale=0.01, size=3))
    r = icp_refine(PointCloud(pts), PointCloud(tgt), init, IcpConfig(max_correspondence_distance=0.05))
    if r.converged:
        assert r.rmse_history[-1] <= r.rmse_history[0] + 1e-15


def test_icp_culling_needs_normals():
    with pytest.raises(ValueError, match="normals"):
        icp_refine(PointCloud(np.eye(3)), PointCloud(np.eye(3)), RigidScaleTransform(), IcpConfig(cull_backfacing=True))


# --- helpers and end to end ---------------------------------------------------

def test_facing_mask():
    pts = np.array([[0, 0, 1.0], [0, 0, 1.0]])
    n = np.array([[0, 0, -1.0], [0, 0, 1.0]])
    assert facing_mask(pts, n, (0, 0, 0)).tolist() == [True, False]


def test_coverage_and_spread_pose_at_truth():
    sc = synth_scene(SceneSpec(shape="torus", seed=1, samples=4000))
    src = sample_surface(sc.source_mesh, 4000, 5)
    assert coverage_score(src, sc.target_cloud.points, sc.gt_transform, 0.003, (0, 0, 0)) > 0.95
    guess = spread_pose(sc.gt_transform.rotation, src, sc.target_cloud.points, (0, 0, 0))
    assert guess.scale == pytest.approx(sc.gt_transform.scale, rel=0.1)
    assert np.linalg.norm(guess.translation - sc.gt_transform.translation) < 0.01


def test_register_round_trip_clean():
    mesh = canonical_mesh("union")
    rng = np.random.default_rng(11)
    T = RigidScaleTransform(0.15, random_rotation(rng), [0.02, -0.03, 0.7])
    target = PointCloud(T.apply_points(sample_surface(mesh, 8000, 99).points))
    r = register_object(mesh, target)
    assert np.degrees(rotation_angle(r.transform.rotation.T @ T.rotation)) < 0.5
    assert np.linalg.norm(r.transform.translation - T.translation) < 0.005 * 0.15
    assert r.transform.scale == pytest.approx(0.15, rel=0.01)
    for key in ("init_scale", "voxel", "correspondences", "ransac", "verification", "icp"):
        assert key in r.trace


def test_register_empty_target():
    with pytest.raises(ValueError):
        register_object(canonical_mesh("sphere", resolution=32), PointCloud(np.empty((0, 3))))


def test_register_deterministic():
    sc = synth_scene(SceneSpec(shape="box", seed=5, noise_sigma=0.00075))
    a = register_object(sc.source_mesh, sc.target_cloud)
    b = register_object(sc.source_mesh, sc.target_cloud)
    assert np.array_equal(a.transform.matrix(), b.transform.matrix())

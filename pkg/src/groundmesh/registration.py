"""Object registration: bounding-box scale, FPFH + RANSAC, point-to-point ICP."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .features import compute_fpfh, mutual_match, voxel_downsample
from .geometry import (
    NeighborIndex,
    PointCloud,
    RigidScaleTransform,
    apply_transform,
    bbox_diagonal,
    compose,
    estimate_normals,
    random_rotation,
)


class DegenerateSampleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProcrustesFit:
    """Closed-form rigid fit together with the intermediate quantities."""

    rotation: np.ndarray
    translation: np.ndarray
    source_centroid: np.ndarray
    target_centroid: np.ndarray
    cross_covariance: np.ndarray
    svd_U: np.ndarray
    svd_S: np.ndarray
    svd_V: np.ndarray
    rmse: float
    scale: float = 1.0

    def transform(self):
        return RigidScaleTransform(self.scale, self.rotation, self.translation)


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 10000
    inlier_threshold: float = 0.0075
    sample_size: int = 3
    confidence: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.sample_size != 3:
            raise ValueError("sample_size must be 3")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.max_iterations < 1 or not self.inlier_threshold > 0:
            raise ValueError("max_iterations and inlier_threshold must be positive")


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    max_correspondence_distance: float = 0.015
    convergence_rel_change: float = 1e-6
    estimate_scale: bool = False
    # match only source points whose posed normal faces the viewpoint
    cull_backfacing: bool = False
    viewpoint: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.max_iterations < 1 or not self.max_correspondence_distance > 0 or not self.convergence_rel_change > 0:
            raise ValueError("ICP parameters must be positive")


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: RigidScaleTransform
    inlier_count: int
    inlier_rmse: float
    iterations_used: int
    converged: bool
    rmse_history: list = field(default_factory=list)
    trace: dict = field(default_factory=dict)

    def summary(self):
        return {
            "transform": self.transform.to_dict(),
            "inlier_count": int(self.inlier_count),
            "inlier_rmse": float(self.inlier_rmse),
            "iterations_used": int(self.iterations_used),
            "converged": bool(self.converged),
        }


def init_scale(source, target):
    """Ratio of bounding-box diagonals, target over source."""
    ds = bbox_diagonal(source)
    if not ds > 0:
        raise ValueError("degenerate source")
    return bbox_diagonal(target) / ds


def _points(x):
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64).reshape(-1, 3)


def fit_rigid(xs, ys, with_scale=False):
    """Least-squares R, t with ``R @ x + t ~ y`` (optionally a scale too).

    Rotation is ``V diag(1, 1, det(V U^T)) U^T`` from the SVD of the
    cross-covariance of the centred sets, so reflections never leak out.
    """
    xs = _points(xs)
    ys = _points(ys)
    if xs.shape != ys.shape:
        raise ValueError(f"size mismatch: {len(xs)} vs {len(ys)} points")
    if len(xs) < 3:
        raise ValueError("need at least 3 point pairs")
    xbar = xs.mean(axis=0)
    ybar = ys.mean(axis=0)
    xc = xs - xbar
    yc = ys - ybar
    H = xc.T @ yc
    U, S, Vt = np.linalg.svd(H)
    if not S[0] > 0 or S[1] <= 1e-10 * S[0]:
        raise DegenerateSampleError("degenerate sample")
    V = Vt.T
    d = 1.0 if np.linalg.det(V @ U.T) > 0 else -1.0
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    scale = 1.0
    if with_scale:
        scale = float((S[0] + S[1] + d * S[2]) / np.einsum("ij,ij->", xc, xc))
    t = ybar - scale * (R @ xbar)
    res = scale * (xs @ R.T) + t - ys
    rmse = float(np.sqrt(np.einsum("ij,ij->", res, res) / len(xs)))
    return ProcrustesFit(R, t, xbar, ybar, H, U, S, V, rmse, scale)


# --- deterministic sampling -------------------------------------------------

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x):
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


DRAW_CAP = 10


def sample_triples(seed, iterations, n):
    """Correspondence triples for each iteration and each of DRAW_CAP attempts.

    Draw ``(i, a, d)`` is ``splitmix64(splitmix64(seed) + counter) mod n``,
    a pure function of (seed, iteration), so any evaluation order agrees.
    Returns an array of shape (len(iterations), DRAW_CAP, 3).
    """
    it = np.asarray(iterations, dtype=np.uint64)
    base = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    att = np.arange(DRAW_CAP, dtype=np.uint64)
    dr = np.arange(3, dtype=np.uint64)
    counter = (it[:, None, None] * np.uint64(DRAW_CAP) + att[None, :, None]) * np.uint64(3) + dr[None, None, :]
    with np.errstate(over="ignore"):
        h = _splitmix64(base + counter)
    return (h % np.uint64(n)).astype(np.int64)


def _batch_rigid(xs, ys):
    """Vectorised Procrustes over (B, 3, 3) point triples; returns R, t, ok."""
    xbar = xs.mean(axis=1)
    ybar = ys.mean(axis=1)
    H = np.einsum("bki,bkj->bij", xs - xbar[:, None], ys - ybar[:, None])
    U, S, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    d = np.where(np.linalg.det(V @ np.swapaxes(U, 1, 2)) > 0, 1.0, -1.0)
    D = np.zeros((len(xs), 3, 3))
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = V @ D @ np.swapaxes(U, 1, 2)
    t = ybar - np.einsum("bij,bj->bi", R, xbar)
    ok = (S[:, 0] > 0) & (S[:, 1] > 1e-10 * S[:, 0])
    return R, t, ok


def ransac_register(correspondences, source, target, cfg=RansacConfig(), batch=256):
    """Hypothesise from 3 correspondences, keep the largest consensus set.

    ``source`` must already carry the initial scale. The returned transform
    maps source coordinates into the target frame with unit scale.
    """
    pairs = correspondences.pairs
    m = len(pairs)
    if m < 3:
        raise ValueError(f"need at least 3 correspondences, got {m}")
    X = _points(source)[pairs[:, 0]]
    Y = _points(target)[pairs[:, 1]]
    thr = cfg.inlier_threshold

    best_count, best_rmse, best_R, best_t = -1, np.inf, None, None
    done = 0
    stop = False
    while done < cfg.max_iterations and not stop:
        its = np.arange(done, min(done + batch, cfg.max_iterations))
        tri = sample_triples(cfg.seed, its, m)
        distinct = (tri[..., 0] != tri[..., 1]) & (tri[..., 1] != tri[..., 2]) & (tri[..., 0] != tri[..., 2])
        flat = tri.reshape(-1, 3)
        R_all, t_all, ok_all = _batch_rigid(X[flat], Y[flat])
        ok = ok_all.reshape(len(its), DRAW_CAP) & distinct
        has = ok.any(axis=1)
        first = np.argmax(ok, axis=1)
        sel = np.arange(len(its)) * DRAW_CAP + first
        R = R_all[sel]
        t = t_all[sel]
        res = np.einsum("bij,nj->bni", R, X) + t[:, None, :] - Y[None]
        d2 = np.einsum("bni,bni->bn", res, res)
        inl = d2 <= thr * thr
        counts = np.where(has, inl.sum(axis=1), -1)
        sums = np.where(inl, d2, 0.0).sum(axis=1)
        for b in range(len(its)):
            c = int(counts[b])
            if c >= 3:
                rmse = float(np.sqrt(sums[b] / c))
                if c > best_count or (c == best_count and rmse < best_rmse):
                    best_count, best_rmse, best_R, best_t = c, rmse, R[b], t[b]
            n_done = int(its[b]) + 1
            if best_count >= 3:
                w = best_count / m
                if 1.0 - (1.0 - w ** 3) ** n_done >= cfg.confidence:
                    stop = True
                    done = n_done
                    break
        else:
            done = int(its[-1]) + 1

    if best_count < 3:
        return RegistrationResult(RigidScaleTransform(), 0, 0.0, done, False)

    res = X @ best_R.T + best_t - Y
    inl = np.einsum("ij,ij->i", res, res) <= thr * thr
    try:
        fit = fit_rigid(X[inl], Y[inl])
        R_fin, t_fin = fit.rotation, fit.translation
    except DegenerateSampleError:
        R_fin, t_fin = best_R, best_t
    res = X @ R_fin.T + t_fin - Y
    d2 = np.einsum("ij,ij->i", res, res)
    inl = d2 <= thr * thr
    count = int(inl.sum())
    rmse = float(np.sqrt(d2[inl].mean())) if count else 0.0
    return RegistrationResult(RigidScaleTransform(1.0, R_fin, t_fin), count, rmse, done, count >= 3)


def facing_mask(points, normals, viewpoint):
    """Points whose normal points back toward ``viewpoint``."""
    return np.einsum("ij,ij->i", points - np.asarray(viewpoint, dtype=np.float64), normals) < 0


def icp_refine(source, target, init, cfg=IcpConfig(), target_index=None):
    """Point-to-point ICP starting from ``init``.

    The scale stays at ``init.scale`` unless ``cfg.estimate_scale`` is set.
    With ``cfg.cull_backfacing`` only source points visible from
    ``cfg.viewpoint`` under the current pose take part (needs source normals).
    """
    src = _points(source)
    tgt = _points(target)
    if len(src) == 0 or len(tgt) == 0:
        raise ValueError("empty input")
    if cfg.cull_backfacing and not (isinstance(source, PointCloud) and source.has_normals):
        raise ValueError("back-face culling needs source normals")
    index = target_index if target_index is not None else NeighborIndex(tgt)
    maxd = cfg.max_correspondence_distance
    current = init

    def correspond(T):
        x = T.apply_points(src)
        if cfg.cull_backfacing:
            x = x[facing_mask(x, source.normals @ T.rotation.T, cfg.viewpoint)]
        if len(x) == 0:
            return x, x, np.empty(0)
        j, dist = index.nearest(x)
        keep = dist <= maxd
        return x[keep], tgt[j[keep]], dist[keep]

    x, y, dist = correspond(current)
    if len(x) == 0:
        return RegistrationResult(current, 0, 0.0, 0, False)
    history = [float(np.sqrt(np.mean(dist * dist)))]
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if len(x) < 3:
            break
        try:
            fit = fit_rigid(x, y, with_scale=cfg.estimate_scale)
        except DegenerateSampleError:
            break
        step = RigidScaleTransform(fit.scale, fit.rotation, fit.translation)
        candidate = compose(step, current)
        x, y, dist = correspond(candidate)
        current = candidate
        if len(x) == 0:
            history.append(history[-1])
            break
        rmse = float(np.sqrt(np.mean(dist * dist)))
        prev = history[-1]
        history.append(rmse)
        scale_ref = max(prev, np.finfo(float).tiny)
        if rmse <= 1e-12 * max(1.0, maxd) or abs(prev - rmse) / scale_ref < cfg.convergence_rel_change:
            converged = True
            break
    return RegistrationResult(current, len(x), history[-1], it, converged, history)


def coverage_score(source, target_points, transform, tau, viewpoint, target_tree=None):
    """Two-way agreement of a posed, self-occlusion-culled source with the target.

    Harmonic mean of the fraction of visible source points within ``tau`` of
    the target and the fraction of target points within ``tau`` of them.
    """
    from scipy.spatial import cKDTree

    x = transform.apply_points(source.points)
    vis = facing_mask(x, source.normals @ transform.rotation.T, viewpoint)
    if vis.sum() < 3:
        return 0.0
    x = x[vis]
    tree = target_tree if target_tree is not None else cKDTree(target_points)
    precision = float(np.mean(tree.query(x)[0] <= tau))
    recall = float(np.mean(cKDTree(x).query(target_points)[0] <= tau))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def spread_pose(rotation, source, target_points, viewpoint):
    """Pose guess for a given rotation: centroids and RMS spreads of the visible parts agree."""
    ybar = target_points.mean(axis=0)
    view = ybar - np.asarray(viewpoint, dtype=np.float64)
    view = view / np.linalg.norm(view)
    vis = (source.normals @ rotation.T) @ view < 0
    if vis.sum() < 3:
        vis = np.ones(len(source), dtype=bool)
    xs = source.points[vis] @ rotation.T
    xbar = xs.mean(axis=0)
    spread_x = np.einsum("ij,ij->", xs - xbar, xs - xbar)
    spread_y = np.einsum("ij,ij->", target_points - ybar, target_points - ybar)
    s = np.sqrt(spread_y / len(target_points) / (spread_x / len(xs)))
    return RigidScaleTransform(s, rotation, ybar - s * xbar)


@dataclass(frozen=True)
class RegistrationParams:
    """Knobs for the end-to-end registration.

    ``voxel_size`` defaults to a thirtieth of the target's bbox diagonal and
    ``feature_radius`` to five voxels. ``rotation_candidates`` seeded random
    rotations join the RANSAC hypothesis; the best ``keep_candidates`` after a
    coarse ICP are refined again before the final full-resolution ICP.
    """

    source_samples: int = 5000
    voxel_size: float | None = None
    normal_k: int = 30
    viewpoint: tuple = (0.0, 0.0, 0.0)
    feature_radius: float | None = None
    refine_scale: bool = True
    rotation_candidates: int = 96
    keep_candidates: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.source_samples < 3 or self.normal_k < 3:
            raise ValueError("source_samples and normal_k must be at least 3")
        if self.rotation_candidates < 0 or self.keep_candidates < 1:
            raise ValueError("candidate counts out of range")


def _verify(candidates, source, target, voxel, iterations, tau, params, estimate_scale):
    """ICP each (tag, transform) candidate on (source, target); returns [(score, transform, tag)]."""
    from scipy.spatial import cKDTree

    cfg = IcpConfig(max_iterations=iterations, max_correspondence_distance=3.0 * voxel,
                    estimate_scale=estimate_scale, cull_backfacing=True, viewpoint=params.viewpoint)
    index = NeighborIndex(target.points)
    tree = cKDTree(target.points)
    out = []
    for tag, T in candidates:
        T = icp_refine(source, target, T, cfg, index).transform
        out.append((coverage_score(source, target.points, T, tau, params.viewpoint, tree), T, tag))
    return out


def _best(scored, k):
    # stable: equal scores keep candidate order
    order = sorted(range(len(scored)), key=lambda i: -scored[i][0])
    return [scored[i] for i in order[:k]]


def register_object(source_mesh, target, ransac_cfg=None, icp_cfg=None, params=RegistrationParams(), timings=None):
    """Align a canonical mesh to an observed cloud; returns the mesh-to-sensor transform.

    Stages: normals, bbox scale, downsampling, FPFH, mutual matching, RANSAC,
    hypothesis verification and ICP. Verification pits the RANSAC pose
    against poses grown from seeded rotations, each polished by a short
    occlusion-aware ICP and ranked by two-way coverage; this recovers objects
    whose features are too symmetric for RANSAC alone. ``timings`` (a dict)
    receives per-stage wall time in seconds.
    """
    from .metrics import sample_surface

    if len(target) == 0:
        raise ValueError("empty target")
    timings = {} if timings is None else timings
    trace = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        out = fn()
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0
        return out

    src_full = sample_surface(source_mesh, params.source_samples, params.seed)
    tgt = target if isinstance(target, PointCloud) else PointCloud(target)
    if len(tgt) < 3:
        raise ValueError("target needs at least 3 points")

    tgt = stage("normals", lambda: tgt if tgt.has_normals else estimate_normals(tgt, min(params.normal_k, len(tgt)), params.viewpoint))
    s0 = init_scale(src_full, tgt)
    trace["init_scale"] = s0
    scaled = apply_transform(src_full, RigidScaleTransform(s0))

    voxel = params.voxel_size if params.voxel_size is not None else bbox_diagonal(tgt) / 30.0
    if not voxel > 0:
        raise ValueError("degenerate target")
    trace["voxel"] = voxel
    src_ds, tgt_ds = stage("downsample", lambda: (voxel_downsample(scaled, voxel), voxel_downsample(tgt, voxel)))
    radius = params.feature_radius if params.feature_radius is not None else 5.0 * voxel
    fs, ft = stage("fpfh", lambda: (compute_fpfh(src_ds, radius), compute_fpfh(tgt_ds, radius)))
    corr = stage("matching", lambda: mutual_match(fs, ft))
    trace["correspondences"] = len(corr)

    rcfg = ransac_cfg or RansacConfig(inlier_threshold=1.5 * voxel, seed=params.seed)
    if len(corr) >= 3:
        coarse = stage("ransac", lambda: ransac_register(corr, src_ds, tgt_ds, rcfg))
    else:
        coarse = RegistrationResult(RigidScaleTransform(), 0, 0.0, 0, False)
    trace["ransac"] = coarse.summary()

    def verify():
        # canonical clouds at matching densities: voxel sizes are relative to
        # each cloud's own diagonal
        src_diag = bbox_diagonal(src_full)
        rel = voxel / bbox_diagonal(tgt)
        src_c = voxel_downsample(src_full, 2.0 * rel * src_diag)
        src_m = voxel_downsample(src_full, rel * src_diag)
        tgt_c = voxel_downsample(tgt, 2.0 * voxel)
        cands = [("ransac", compose(coarse.transform, RigidScaleTransform(s0)))] if coarse.converged else []
        rng = np.random.default_rng(params.seed)
        for i in range(params.rotation_candidates):
            cands.append((f"rotation{i}", spread_pose(random_rotation(rng), src_c, tgt_c.points, params.viewpoint)))
        first = _verify(cands, src_c, tgt_c, 2.0 * voxel, 15, 2.0 * voxel, params, params.refine_scale)
        short = _best(first, params.keep_candidates)
        second = _verify([(tag, T) for _, T, tag in short], src_m, tgt_ds, voxel, 30, voxel, params, params.refine_scale)
        return _best(second, 1)[0], len(cands)

    (score, init, tag), n_cands = stage("verification", verify)
    trace["verification"] = {"candidates": n_cands, "coverage": score, "winner": tag}

    icfg = icp_cfg or IcpConfig(max_iterations=100, max_correspondence_distance=1.5 * voxel,
                                estimate_scale=params.refine_scale,
                                cull_backfacing=True, viewpoint=params.viewpoint)
    fine = stage("icp", lambda: icp_refine(src_full, tgt, init, icfg))
    trace["icp"] = fine.summary()
    return RegistrationResult(
        fine.transform, fine.inlier_count, fine.inlier_rmse, fine.iterations_used,
        fine.converged, fine.rmse_history, trace,
    )

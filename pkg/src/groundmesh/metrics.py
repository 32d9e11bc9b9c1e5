"""Surface sampling, Chamfer distance and F-score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, TriangleMesh, _norm


@dataclass(frozen=True)
class MetricsConfig:
    fscore_threshold: float = 0.02
    sample_count: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not self.fscore_threshold > 0:
            raise ValueError("fscore_threshold must be positive")


@dataclass(frozen=True)
class MetricsReport:
    chamfer_mm: float
    fscore_pct: float
    precision_pct: float
    recall_pct: float

    def to_dict(self):
        return {k: float(v) for k, v in self.__dict__.items()}


def sample_surface(mesh, n, seed=0):
    """Area-uniform samples with face normals, reproducible per seed."""
    fn = mesh.face_normals()
    area2 = np.linalg.norm(fn, axis=1)
    total = area2.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(area2) / total
    face = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(cdf) - 1)
    # degenerate faces have zero probability mass but guard the cdf edge anyway
    face = np.where(area2[face] > 0, face, np.argmax(area2))
    r1 = rng.random(n)
    r2 = rng.random(n)
    flip = r1 + r2 > 1.0
    r1[flip], r2[flip] = 1.0 - r1[flip], 1.0 - r2[flip]
    v = mesh.vertices[mesh.faces[face]]
    pts = v[:, 0] + r1[:, None] * (v[:, 1] - v[:, 0]) + r2[:, None] * (v[:, 2] - v[:, 0])
    normals = fn[face] / area2[face, None]
    return PointCloud(pts, normals)


def _pts(x):
    if isinstance(x, PointCloud):
        return x.points
    if isinstance(x, TriangleMesh):
        return x.vertices
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def nearest_distances(a, b):
    """Distance from every point of ``a`` to its nearest point of ``b``."""
    a, b = _pts(a), _pts(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty input")
    _, j = cKDTree(b).query(a, k=1)
    return _norm(a - b[j])


def chamfer(a, b):
    """Mean of the two directed mean closest-point distances (unsquared, meters)."""
    dab = nearest_distances(a, b)
    dba = nearest_distances(b, a)
    # order the two terms so swapping arguments gives the identical float
    m1, m2 = sorted((float(dab.mean()), float(dba.mean())))
    return 0.5 * (m1 + m2)


def fscore(pred, gt, tau):
    """(precision, recall, F) in percent at distance threshold ``tau``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    precision = 100.0 * float(np.mean(nearest_distances(pred, gt) <= tau))
    recall = 100.0 * float(np.mean(nearest_distances(gt, pred) <= tau))
    f = 0.0 if precision + recall == 0 else 2.0 * precision * recall / (precision + recall)
    return precision, recall, f


def evaluate(pred, gt, cfg=MetricsConfig()):
    """Metrics between two meshes via seeded surface samples."""
    pa = sample_surface(pred, cfg.sample_count, cfg.seed) if isinstance(pred, TriangleMesh) else pred
    pb = sample_surface(gt, cfg.sample_count, cfg.seed + 1) if isinstance(gt, TriangleMesh) else gt
    cd = chamfer(pa, pb)
    p, r, f = fscore(pa, pb, cfg.fscore_threshold)
    return MetricsReport(1000.0 * cd, f, p, r)

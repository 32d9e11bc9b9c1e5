"""FPFH descriptors, voxel downsampling and mutual nearest-neighbour matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .geometry import NeighborIndex, PointCloud, bbox_diagonal

NBINS = 11
DESCRIPTOR_DIM = 3 * NBINS


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """One 33-bin descriptor per point, rows aligned with the cloud."""

    descriptors: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.descriptors, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != DESCRIPTOR_DIM:
            raise ValueError(f"descriptors must have shape (n, {DESCRIPTOR_DIM})")
        object.__setattr__(self, "descriptors", d)

    def __len__(self):
        return len(self.descriptors)


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    pairs: np.ndarray
    feature_distances: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        dist = np.asarray(self.feature_distances, dtype=np.float64).reshape(-1)
        if len(dist) != len(pairs):
            raise ValueError("one feature distance per pair required")
        if len(np.unique(pairs[:, 0])) != len(pairs) or len(np.unique(pairs[:, 1])) != len(pairs):
            raise ValueError("correspondence indices must be unique on both sides")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "feature_distances", dist)

    def __len__(self):
        return len(self.pairs)

    @property
    def source_idx(self):
        return self.pairs[:, 0]

    @property
    def target_idx(self):
        return self.pairs[:, 1]


def default_radius(cloud):
    """Five times the mean spacing, with spacing taken as diagonal / cbrt(n)."""
    spacing = bbox_diagonal(cloud) / np.cbrt(len(cloud))
    return 5.0 * spacing


def _require_normals(cloud, radius):
    if cloud.normals is None:
        raise ValueError("cloud has no normals")
    if not radius > 0:
        raise ValueError("radius must be positive")


def _neighborhoods(cloud, radius):
    index = NeighborIndex(cloud.points)
    return index.radius_neighbors(cloud.points, radius)


def compute_spfh(cloud, radius, backend=None):
    _require_normals(cloud, radius)
    indptr, idx, _ = _neighborhoods(cloud, radius)
    k = _backend.get(backend)
    return FeatureSet(k.spfh_histograms(cloud.points, np.ascontiguousarray(cloud.normals), indptr, idx))


def compute_fpfh(cloud, radius=None, backend=None):
    """FPFH: own SPFH plus the inverse-distance weighted mean of neighbour SPFHs."""
    if radius is None:
        radius = default_radius(cloud)
    _require_normals(cloud, radius)
    indptr, idx, dist = _neighborhoods(cloud, radius)
    k = _backend.get(backend)
    spfh = k.spfh_histograms(cloud.points, np.ascontiguousarray(cloud.normals), indptr, idx)
    return FeatureSet(k.fpfh_from_spfh(spfh, indptr, idx, dist))


def mutual_match(source_feats, target_feats, backend=None):
    """Pairs (i, j) where each descriptor is the other's nearest neighbour."""
    a = source_feats.descriptors
    b = target_feats.descriptors
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty feature set")
    k = _backend.get(backend)
    fwd, fdist = k.feature_argmin(a, b)
    bwd, _ = k.feature_argmin(b, a)
    src = np.flatnonzero(bwd[fwd] == np.arange(len(a)))
    return CorrespondenceSet(np.stack([src, fwd[src]], axis=1), fdist[src])


def voxel_downsample(cloud, voxel):
    """Centroid per occupied voxel, voxels in lexicographic key order.

    Normals (when present) are averaged and renormalised; a voxel whose
    normals cancel keeps the normal of its first member.
    """
    if not voxel > 0:
        raise ValueError("voxel size must be positive")
    pts = cloud.points
    keys = np.floor(pts / voxel).astype(np.int64)
    _, first, inverse, counts = np.unique(keys, axis=0, return_index=True, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    m = len(counts)
    cent = np.stack([np.bincount(inverse, weights=pts[:, c], minlength=m) for c in range(3)], axis=1)
    cent /= counts[:, None]
    normals = None
    if cloud.normals is not None:
        nsum = np.stack([np.bincount(inverse, weights=cloud.normals[:, c], minlength=m) for c in range(3)], axis=1)
        norm = np.linalg.norm(nsum, axis=1)
        bad = norm < 1e-9 * counts
        nsum[bad] = cloud.normals[first[bad]]
        norm[bad] = 1.0
        normals = nsum / norm[:, None]
    return PointCloud(cent, normals)

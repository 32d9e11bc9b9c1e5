"""Core geometry types, exact neighbour search, normals and similarity transforms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Aabb",
    "NeighborIndex",
    "PointCloud",
    "RigidScaleTransform",
    "TriangleMesh",
    "apply_transform",
    "bbox_diagonal",
    "build_index",
    "compose",
    "estimate_normals",
    "knn",
    "radius_search",
]


def _as_points(a, name="points"):
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contain NaN or Inf")
    return arr


def _norm(d):
    # fixed summation order (x + y) + z so every code path agrees bit for bit
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D points in meters, optionally with unit normals.

    ``low_confidence`` marks normals that came from a degenerate neighbourhood.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    low_confidence: np.ndarray | None = None

    def __post_init__(self):
        pts = _as_points(self.points)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _as_points(self.normals, "normals")
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points in length")
            if nrm.size and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must have unit length")
            object.__setattr__(self, "normals", nrm)
        if self.low_confidence is not None:
            flags = np.asarray(self.low_confidence, dtype=bool)
            if flags.shape != (len(pts),):
                raise ValueError("low_confidence must have one flag per point")
            object.__setattr__(self, "low_confidence", flags)

    def __len__(self):
        return len(self.points)

    @property
    def has_normals(self):
        return self.normals is not None

    def select(self, idx):
        """Sub-cloud by index array or boolean mask, preserving order."""
        nrm = None if self.normals is None else self.normals[idx]
        low = None if self.low_confidence is None else self.low_confidence[idx]
        return PointCloud(self.points[idx], nrm, low)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = _as_points(self.vertices, "vertices")
        faces = np.asarray(self.faces, dtype=np.int64)
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must have shape (m, 3), got {faces.shape}")
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(verts):
                bad = int(np.flatnonzero((faces < 0).any(1) | (faces >= len(verts)).any(1))[0])
                raise ValueError(f"face {bad} references a vertex out of range")
            degen = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
            if degen.any():
                raise ValueError(f"face {int(np.flatnonzero(degen)[0])} is degenerate")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", np.ascontiguousarray(faces))

    @property
    def is_empty(self):
        return len(self.faces) == 0

    def face_normals(self):
        """Unnormalised face normals (length = 2 x area)."""
        v = self.vertices[self.faces]
        return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    def edges(self):
        """Unique undirected edges as an (E, 2) array."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self):
        used = np.unique(self.faces)
        return len(used) - len(self.edges()) + len(self.faces)

    def is_closed(self):
        """True when every edge is shared by exactly two faces with opposite direction."""
        if self.is_empty:
            return False
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        und, counts = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
        if not np.all(counts == 2):
            return False
        # each directed edge must appear once for consistent orientation
        _, dcounts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(dcounts == 1))


@dataclass(frozen=True, eq=False)
class RigidScaleTransform:
    """Similarity transform ``p -> scale * rotation @ p + translation``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        scale = float(self.scale)
        if not (np.isfinite(scale) and scale > 0):
            raise ValueError(f"scale must be positive, got {scale}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ValueError("transform contains NaN or Inf")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9 or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("rotation is not in SO(3)")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls):
        return cls()

    def apply_points(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        return self.scale * (pts @ self.rotation.T) + self.translation

    def inverse(self):
        rt = self.rotation.T
        return RigidScaleTransform(1.0 / self.scale, rt, -(rt @ self.translation) / self.scale)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def to_dict(self):
        return {
            "scale": self.scale,
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_dict(cls, d):
        rot = d["rotation"]
        if len(rot) != 9 or len(d["translation"]) != 3:
            raise ValueError("transform needs 9 rotation and 3 translation entries")
        return cls(d["scale"], np.reshape(rot, (3, 3)), d["translation"])


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValueError("Aabb min must not exceed max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def of(cls, pts):
        pts = np.asarray(pts)
        return cls(pts.min(axis=0), pts.max(axis=0))

    @property
    def extent(self):
        return self.max - self.min

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.extent))


class NeighborIndex:
    """Exact k-NN / radius index over a snapshot of a point cloud.

    Candidate sets come from a kd-tree; distances are recomputed directly so
    results match a linear scan bit for bit, and equal distances are ordered
    by point index.
    """

    def __init__(self, points):
        pts = _as_points(points)
        if len(pts) == 0:
            raise ValueError("empty input")
        self.points = pts.copy()
        self.points.setflags(write=False)
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def _dist(self, query, idx):
        return _norm(self.points[idx] - query)

    def knn(self, query, k):
        n = len(self.points)
        if k < 1 or k > n:
            raise ValueError(f"k must be in [1, {n}], got {k}")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        _, cand = self._tree.query(q, k=k)
        cand = np.atleast_1d(cand)
        # pull in every point tied with the k-th candidate so index tie-breaks are exact
        kth = self._dist(q, cand).max()
        cand = np.asarray(self._tree.query_ball_point(q, kth * (1 + 1e-9) + 1e-300), dtype=np.int64)
        dist = self._dist(q, cand)
        order = np.lexsort((cand, dist))[:k]
        return cand[order], dist[order]

    def knn_batch(self, queries, k):
        """k nearest neighbours for many queries: (idx, dist) arrays of shape (m, k)."""
        queries = _as_points(queries, "queries")
        n = len(self.points)
        if k < 1 or k > n:
            raise ValueError(f"k must be in [1, {n}], got {k}")
        kq = min(n, k + 1)
        _, idx = self._tree.query(queries, k=kq)
        idx = idx.reshape(len(queries), kq)
        dist = _norm(self.points[idx] - queries[:, None, :])
        order = np.argsort(dist, axis=1, kind="stable")
        idx = np.take_along_axis(idx, order, 1)
        dist = np.take_along_axis(dist, order, 1)
        # rows where a tie straddles the k boundary fall back to the exact scalar path
        if kq > k:
            suspect = dist[:, k] <= dist[:, k - 1] * (1 + 1e-9)
        else:
            suspect = np.zeros(len(queries), dtype=bool)
        inner_tie = np.any(dist[:, 1:k] == dist[:, :k - 1], axis=1) if k > 1 else np.zeros(len(queries), bool)
        idx, dist = idx[:, :k].copy(), dist[:, :k].copy()
        for r in np.flatnonzero(suspect | inner_tie):
            idx[r], dist[r] = self.knn(queries[r], k)
        return idx, dist

    def nearest(self, queries):
        """Nearest neighbour of each query (lowest index on ties)."""
        idx, dist = self.knn_batch(queries, 1)
        return idx[:, 0], dist[:, 0]

    def radius_search(self, query, r):
        if not r > 0:
            raise ValueError("radius must be positive")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        cand = np.asarray(self._tree.query_ball_point(q, r * (1 + 1e-9)), dtype=np.int64)
        dist = self._dist(q, cand)
        keep = dist <= r
        cand, dist = cand[keep], dist[keep]
        order = np.lexsort((cand, dist))
        return cand[order], dist[order]

    def radius_neighbors(self, queries, r):
        """CSR-style radius neighbourhoods: (indptr, indices, distances), each row ascending."""
        queries = _as_points(queries, "queries")
        lists = self._tree.query_ball_point(queries, r * (1 + 1e-9))
        counts = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
        flat = np.fromiter((i for x in lists for i in x), dtype=np.int64, count=int(counts.sum()))
        row = np.repeat(np.arange(len(queries)), counts)
        dist = _norm(self.points[flat] - queries[row])
        keep = dist <= r
        row, flat, dist = row[keep], flat[keep], dist[keep]
        order = np.lexsort((flat, dist, row))
        row, flat, dist = row[order], flat[order], dist[order]
        indptr = np.zeros(len(queries) + 1, dtype=np.int64)
        np.cumsum(np.bincount(row, minlength=len(queries)), out=indptr[1:])
        return indptr, flat, dist


def build_index(cloud):
    pts = cloud.points if isinstance(cloud, PointCloud) else cloud
    return NeighborIndex(pts)


def knn(index, query, k):
    """List of ``(index, distance)`` for the k nearest points, ascending."""
    idx, dist = index.knn(query, k)
    return list(zip(idx.tolist(), dist.tolist()))


def radius_search(index, query, r):
    idx, dist = index.radius_search(query, r)
    return list(zip(idx.tolist(), dist.tolist()))


def estimate_normals(cloud, k=30, viewpoint=(0.0, 0.0, 0.0)):
    """PCA normals from the k-NN covariance, oriented toward ``viewpoint``.

    Neighbourhoods whose covariance has rank < 2 get an arbitrary unit normal
    and ``low_confidence`` set.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    pts = cloud.points
    if len(pts) < k:
        raise ValueError(f"cloud has {len(pts)} points, fewer than k={k}")
    index = cloud if isinstance(cloud, NeighborIndex) else NeighborIndex(pts)
    idx, _ = index.knn_batch(pts, k)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    low = evals[:, 1] <= 1e-12 * scale
    low |= evals[:, 2] <= 0
    if low.any():
        # stable arbitrary choice: any unit vector orthogonal to the principal axis
        axis = evecs[low, :, 2]
        helper = np.where(np.abs(axis[:, [0]]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
        alt = np.cross(axis, helper)
        normals[low] = alt
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    vp = np.asarray(viewpoint, dtype=np.float64).reshape(3)
    flip = np.einsum("ij,ij->i", normals, vp - pts) < 0
    normals[flip] *= -1.0
    return PointCloud(pts, normals, low)


def bbox_diagonal(cloud):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("empty input")
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def apply_transform(geometry, T):
    """Map every point through ``T``; normals are rotated only."""
    if isinstance(geometry, TriangleMesh):
        return TriangleMesh(T.apply_points(geometry.vertices), geometry.faces)
    pts = T.apply_points(geometry.points)
    nrm = None
    if geometry.normals is not None:
        nrm = geometry.normals @ T.rotation.T
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pts, nrm, geometry.low_confidence)


def compose(outer, inner):
    """Transform applying ``inner`` first, then ``outer``."""
    return RigidScaleTransform(
        outer.scale * inner.scale,
        _reorthonormalize(outer.rotation @ inner.rotation),
        outer.scale * (outer.rotation @ inner.translation) + outer.translation,
    )


def _reorthonormalize(r):
    # long ICP chains accumulate round-off; snap back only when it matters
    if np.max(np.abs(r.T @ r - np.eye(3))) < 1e-12:
        return r
    u, _, vt = np.linalg.svd(r)
    return u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))]) @ vt


def random_rotation(rng):
    """Uniform rotation from a numpy Generator (quaternion method)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def rotation_angle(r):
    """Geodesic angle of a rotation matrix, radians."""
    c = (np.trace(r) - 1.0) / 2.0
    # arccos loses precision near 0; use the skew part there
    s = np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    return float(np.arctan2(s, np.clip(c, -1.0, 1.0)))

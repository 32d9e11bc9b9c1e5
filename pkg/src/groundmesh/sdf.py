"""Analytic SDF oracles and dense / hierarchical volume decoding."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation

from .geometry import Aabb


class SdfOracle:
    """Batch signed-distance source (negative inside) with a query counter."""

    thread_safe = True

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    @property
    def query_count(self):
        return self._count

    def evaluate(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        with self._lock:
            self._count += len(pts)
        return self._sdf(pts)

    __call__ = evaluate

    def _sdf(self, pts):
        raise NotImplementedError


def _positive(name, value):
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if not np.all(arr > 0):
        raise ValueError(f"{name} must be positive")
    return arr


class Sphere(SdfOracle):
    def __init__(self, center, radius):
        super().__init__()
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        self.radius = float(_positive("radius", radius)[0])

    def _sdf(self, p):
        return np.linalg.norm(p - self.center, axis=1) - self.radius


class Box(SdfOracle):
    def __init__(self, center, half_extents):
        super().__init__()
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        self.half = _positive("half_extents", half_extents).reshape(3)

    def _sdf(self, p):
        q = np.abs(p - self.center) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside


class Torus(SdfOracle):
    """Torus in the xy-plane around ``center``."""

    def __init__(self, center, major, minor):
        super().__init__()
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        self.major = float(_positive("major radius", major)[0])
        self.minor = float(_positive("minor radius", minor)[0])

    def _sdf(self, p):
        d = p - self.center
        ring = np.hypot(d[:, 0], d[:, 1]) - self.major
        return np.hypot(ring, d[:, 2]) - self.minor


class Union(SdfOracle):
    def __init__(self, a, b):
        super().__init__()
        self.a, self.b = a, b

    def _sdf(self, p):
        # components are queried directly so only this oracle's counter moves
        return np.minimum(self.a._sdf(p), self.b._sdf(p))


class Constant(SdfOracle):
    def __init__(self, value):
        super().__init__()
        self.value = float(value)

    def _sdf(self, p):
        return np.full(len(p), self.value)


class Plane(SdfOracle):
    """Half-space ``dot(normal, p) - offset`` (negative below)."""

    def __init__(self, normal, offset):
        super().__init__()
        n = np.asarray(normal, dtype=np.float64).reshape(3)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(offset)

    def _sdf(self, p):
        return p @ self.normal - self.offset


def make_sphere(center, radius):
    return Sphere(center, radius)


def make_box(center, half_extents):
    return Box(center, half_extents)


def make_torus(center, R_major, r_minor):
    return Torus(center, R_major, r_minor)


def make_union(a, b):
    return Union(a, b)


# --- grids ------------------------------------------------------------------


@dataclass(eq=False)
class VoxelGrid:
    """SDF samples on the lattice {0..resolution}^3 spanning ``bounds``.

    Dense grids hold ``values`` for every lattice point. Sparse grids keep
    evaluated samples in ``keys``/``samples`` (sorted linear lattice keys)
    plus the cascade of coarser levels used to fill everything else.
    """

    resolution: int
    bounds: Aabb
    values: np.ndarray | None = None
    keys: np.ndarray | None = None
    samples: np.ndarray | None = None
    levels: list = field(default_factory=list)
    active_cells: np.ndarray | None = None
    surface_found: bool = True

    @property
    def dense(self):
        return self.values is not None

    @property
    def voxel_size(self):
        return self.bounds.extent / self.resolution

    def lattice_key(self, ijk):
        r1 = self.resolution + 1
        ijk = np.asarray(ijk, dtype=np.int64)
        return (ijk[..., 0] * r1 + ijk[..., 1]) * r1 + ijk[..., 2]

    def to_world(self, ijk):
        return self.bounds.min + np.asarray(ijk, dtype=np.float64) * self.voxel_size

    def evaluated_mask(self, ijk):
        """Whether each lattice point holds a decoded (not inherited) value."""
        ijk = np.asarray(ijk, dtype=np.int64)
        if self.dense:
            return np.ones(ijk.shape[:-1], dtype=bool)
        k = self.lattice_key(ijk)
        pos = np.clip(np.searchsorted(self.keys, k), 0, len(self.keys) - 1)
        return self.keys[pos] == k

    def value_at(self, ijk):
        """SDF at lattice points; unevaluated points get the finest enclosing trilinear value."""
        ijk = np.asarray(ijk, dtype=np.int64)
        if self.dense:
            return self.values[ijk[..., 0], ijk[..., 1], ijk[..., 2]]
        shape = ijk.shape[:-1]
        flat = ijk.reshape(-1, 3)
        out = np.empty(len(flat))
        k = self.lattice_key(flat)
        pos = np.clip(np.searchsorted(self.keys, k), 0, max(len(self.keys) - 1, 0))
        found = self.keys[pos] == k if len(self.keys) else np.zeros(len(k), bool)
        out[found] = self.samples[pos[found]]
        todo = np.flatnonzero(~found)
        # walk from the finest cascade level down to the dense coarse grid
        for level in reversed(self.levels):
            if len(todo) == 0:
                break
            vals, ok = level.interpolate(flat[todo], self.resolution)
            out[todo[ok]] = vals[ok]
            todo = todo[~ok]
        if len(todo):
            raise RuntimeError("lattice point outside every decoded level")
        return out.reshape(shape)


@dataclass(eq=False)
class _Level:
    """Sparse lattice samples at one resolution of the refinement cascade."""

    resolution: int
    keys: np.ndarray
    samples: np.ndarray
    dense_values: np.ndarray | None = None

    def lookup(self, ijk):
        ijk = np.asarray(ijk, dtype=np.int64)
        if self.dense_values is not None:
            return self.dense_values[ijk[..., 0], ijk[..., 1], ijk[..., 2]], np.ones(ijk.shape[:-1], bool)
        r1 = self.resolution + 1
        k = (ijk[..., 0] * r1 + ijk[..., 1]) * r1 + ijk[..., 2]
        pos = np.clip(np.searchsorted(self.keys, k), 0, len(self.keys) - 1)
        found = self.keys[pos] == k
        return np.where(found, self.samples[pos], 0.0), found

    def interpolate(self, fine_ijk, fine_res):
        ratio = fine_res // self.resolution
        base = fine_ijk // ratio
        base = np.minimum(base, self.resolution - 1)
        frac = (fine_ijk - base * ratio) / ratio
        corners = base[:, None, :] + _CORNERS[None]
        vals, found = self.lookup(corners)
        ok = found.all(axis=1)
        fx, fy, fz = frac[:, 0:1], frac[:, 1:2], frac[:, 2:3]
        w = np.concatenate([
            (1 - fx) * (1 - fy) * (1 - fz), fx * (1 - fy) * (1 - fz), fx * fy * (1 - fz), (1 - fx) * fy * (1 - fz),
            (1 - fx) * (1 - fy) * fz, fx * (1 - fy) * fz, fx * fy * fz, (1 - fx) * fy * fz,
        ], axis=1)
        # exact lattice hits keep the sample bit for bit
        exact = (frac == 0).all(axis=1)
        out = (w * vals).sum(axis=1)
        out[exact] = vals[exact, 0]
        return out, ok


# table corner order
_CORNERS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
], dtype=np.int64)


@dataclass
class DecodeStats:
    queries_issued: int
    dense_equivalent: int
    reduction: float
    wall_time: float
    surface_found: bool = True

    def to_dict(self):
        return {
            "queries_issued": int(self.queries_issued),
            "dense_equivalent": int(self.dense_equivalent),
            "reduction": float(self.reduction),
            "wall_time": float(self.wall_time),
            "surface_found": bool(self.surface_found),
        }


@dataclass(frozen=True)
class HierarchicalConfig:
    coarse_resolution: int | None = None  # None -> resolution // 8
    band_halfwidth_voxels: float = 1.5
    dilation_cells: int = 1

    def coarse_for(self, resolution):
        coarse = self.coarse_resolution if self.coarse_resolution is not None else resolution // 8
        if coarse < 1 or resolution % coarse:
            raise ValueError(f"coarse resolution {coarse} does not divide {resolution}")
        ratio = resolution // coarse
        if ratio & (ratio - 1):
            raise ValueError(f"resolution / coarse = {ratio} is not a power of two")
        return coarse


def _lattice_world(bounds, resolution, ijk):
    return bounds.min + np.asarray(ijk, dtype=np.float64) * (bounds.extent / resolution)


def _dense_values(oracle, resolution, bounds, slab_points=1 << 19):
    r1 = resolution + 1
    values = np.empty((r1, r1, r1))
    axis = [bounds.min[c] + np.arange(r1) * (bounds.extent[c] / resolution) for c in range(3)]
    yy, zz = np.meshgrid(axis[1], axis[2], indexing="ij")
    plane = np.stack([np.zeros_like(yy), yy, zz], axis=-1).reshape(-1, 3)
    step = max(1, slab_points // (r1 * r1))
    for i0 in range(0, r1, step):
        i1 = min(r1, i0 + step)
        pts = np.repeat(plane[None], i1 - i0, axis=0)
        pts[..., 0] = axis[0][i0:i1, None]
        values[i0:i1] = oracle.evaluate(pts.reshape(-1, 3)).reshape(i1 - i0, r1, r1)
    return values


def dense_decode(oracle, resolution, bounds):
    """Evaluate every one of the (resolution + 1)^3 lattice points."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    t0 = time.perf_counter()
    before = oracle.query_count
    values = _dense_values(oracle, resolution, bounds)
    queries = oracle.query_count - before
    dense_eq = (resolution + 1) ** 3
    stats = DecodeStats(queries, dense_eq, 1.0 - queries / dense_eq, time.perf_counter() - t0)
    return VoxelGrid(resolution, bounds, values=values), stats


def _mark_cells(corner_vals, thr):
    """Cells whose corners straddle zero or come within ``thr`` of it."""
    lo = corner_vals.min(axis=-1)
    hi = corner_vals.max(axis=-1)
    return ((lo < 0) & (hi >= 0)) | (np.abs(corner_vals).min(axis=-1) <= thr)


def _dense_corner_values(values):
    r = values.shape[0] - 1
    return np.stack([values[o[0]:o[0] + r, o[1]:o[1] + r, o[2]:o[2] + r] for o in _CORNERS], axis=-1)


_NEIGHBORS = np.array([[a, b, c] for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)], dtype=np.int64)


def ring_keys(cells, res):
    """Linear keys of ``cells`` and their 26-neighbourhood, clipped to the grid."""
    keys = np.empty(0, dtype=np.int64)
    for off in _NEIGHBORS:
        nb = cells + off
        nb = nb[((nb >= 0) & (nb < res)).all(axis=1)]
        keys = np.union1d(keys, (nb[:, 0] * res + nb[:, 1]) * res + nb[:, 2])
    return keys


def _dilate_sparse(cells, res, steps, allowed_keys):
    """Grow a sparse cell set by ``steps`` rings, staying inside ``allowed_keys``."""
    for _ in range(steps):
        keys = ring_keys(cells, res)
        keys = keys[np.isin(keys, allowed_keys, assume_unique=True)]
        cells = np.stack([keys // (res * res), (keys // res) % res, keys % res], axis=1)
    return cells


def _children(cells):
    kids = (2 * cells[:, None, :] + _CORNERS[None]).reshape(-1, 3)
    return kids


def hierarchical_decode(oracle, resolution, bounds, cfg=HierarchicalConfig()):
    """Coarse dense pass, then refine only cells near the zero level set.

    Each level doubles the resolution inside the marked cells, decoding just
    the lattice points not seen before. A cell is marked when its corners
    change sign or one of them lies within ``band_halfwidth_voxels`` fine
    voxel diagonals of the surface; marks are dilated by ``dilation_cells``.
    """
    coarse = cfg.coarse_for(resolution)
    t0 = time.perf_counter()
    before = oracle.query_count
    fine_diag = float(np.linalg.norm(bounds.extent / resolution))
    thr = cfg.band_halfwidth_voxels * fine_diag

    values0 = _dense_values(oracle, coarse, bounds)
    r1 = coarse + 1
    keys0 = np.arange(r1 ** 3, dtype=np.int64)
    levels = [_Level(coarse, keys0, values0.reshape(-1), dense_values=values0)]

    straddle = _mark_cells(_dense_corner_values(values0), -1.0)
    marked = _mark_cells(_dense_corner_values(values0), thr)
    surface_found = bool(straddle.any())
    dense_eq = (resolution + 1) ** 3
    if not surface_found:
        queries = oracle.query_count - before
        grid = VoxelGrid(resolution, bounds, keys=np.empty(0, np.int64), samples=np.empty(0), levels=levels,
                         active_cells=np.empty((0, 3), np.int64), surface_found=False)
        stats = DecodeStats(queries, dense_eq, 1.0 - queries / dense_eq, time.perf_counter() - t0, False)
        return grid, stats

    if cfg.dilation_cells:
        marked = binary_dilation(marked, np.ones((3, 3, 3), bool), iterations=cfg.dilation_cells)
    cells = np.argwhere(marked).astype(np.int64)

    res = coarse
    known_keys, known_vals = keys0, values0.reshape(-1)
    while res < resolution:
        nres = 2 * res
        n1 = nres + 1
        kids = _children(cells)
        corners = (kids[:, None, :] + _CORNERS[None]).reshape(-1, 3)
        ckeys = np.unique((corners[:, 0] * n1 + corners[:, 1]) * n1 + corners[:, 2])
        cijk = np.stack([ckeys // (n1 * n1), (ckeys // n1) % n1, ckeys % n1], axis=1)
        # points on the previous lattice (all-even coords) were already decoded there
        even = (cijk % 2 == 0).all(axis=1)
        pk = (cijk[even, 0] // 2 * (res + 1) + cijk[even, 1] // 2) * (res + 1) + cijk[even, 2] // 2
        prev = levels[-1]
        old_vals, found = prev.lookup(np.stack([pk // ((res + 1) ** 2), (pk // (res + 1)) % (res + 1), pk % (res + 1)], axis=1))
        vals = np.empty(len(ckeys))
        need = np.ones(len(ckeys), bool)
        ev = np.flatnonzero(even)
        vals[ev[found]] = old_vals[found]
        need[ev[found]] = False
        nidx = np.flatnonzero(need)
        if len(nidx):
            vals[nidx] = oracle.evaluate(_lattice_world(bounds, nres, cijk[nidx]))
        level = _Level(nres, ckeys, vals)
        levels.append(level)
        res = nres
        if res == resolution:
            cells = kids
            break
        kv, _ = level.lookup((kids[:, None, :] + _CORNERS[None]))
        keep = _mark_cells(kv, thr)
        kid_keys = np.sort((kids[:, 0] * res + kids[:, 1]) * res + kids[:, 2])
        cells = kids[keep]
        if cfg.dilation_cells:
            cells = _dilate_sparse(cells, res, cfg.dilation_cells, kid_keys)

    final = levels[-1]
    queries = oracle.query_count - before
    grid = VoxelGrid(resolution, bounds, keys=final.keys, samples=final.samples, levels=levels,
                     active_cells=cells, surface_found=True)
    stats = DecodeStats(queries, dense_eq, 1.0 - queries / dense_eq, time.perf_counter() - t0)
    return grid, stats

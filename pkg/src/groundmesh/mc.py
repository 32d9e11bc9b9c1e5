"""Marching cubes over dense or sparse (hierarchically decoded) voxel grids."""

import numpy as np

from . import _backend
from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS
from .geometry import TriangleMesh
from .sdf import ring_keys

_OFF = np.array(CORNER_OFFSETS, dtype=np.int64)
_EDGE_A = np.array([e[0] for e in EDGE_CORNERS])
_EDGE_B = np.array([e[1] for e in EDGE_CORNERS])
# per table edge: lower lattice endpoint offset and the axis it runs along
_EDGE_LO = np.minimum(_OFF[_EDGE_A], _OFF[_EDGE_B])
_EDGE_AXIS = np.argmax(np.abs(_OFF[_EDGE_A] - _OFF[_EDGE_B]), axis=1)

# the table winds triangles clockwise seen from the positive side; flip to
# get outward (toward positive SDF) normals
_WINDING = [0, 2, 1]


def _triangulate(cells, corner_vals, iso, backend):
    """Triangles of the given cells as canonical lattice edge ids (cell_lo, axis)."""
    kern = _backend.get(backend)
    owner, edges = kern.marching_cells(np.ascontiguousarray(corner_vals), float(iso))
    edges = edges[:, _WINDING]
    lo = cells[owner][:, None, :] + _EDGE_LO[edges]
    axis = _EDGE_AXIS[edges]
    return lo, axis


def _straddles(corner_vals, iso):
    below = corner_vals < iso
    return below.any(axis=-1) & ~below.all(axis=-1)


def _assemble(grid, lo, axis, value_fn, iso):
    r1 = grid.resolution + 1
    key = ((lo[..., 0] * r1 + lo[..., 1]) * r1 + lo[..., 2]) * 3 + axis
    if key.size == 0:
        return TriangleMesh(np.empty((0, 3)), np.empty((0, 3), np.int64))
    ukeys, inverse = np.unique(key.reshape(-1), return_inverse=True)
    faces = inverse.reshape(-1, 3)
    uaxis = ukeys % 3
    cell_key = ukeys // 3
    p0 = np.stack([cell_key // (r1 * r1), (cell_key // r1) % r1, cell_key % r1], axis=1)
    step = np.eye(3, dtype=np.int64)[uaxis]
    v0 = value_fn(p0)
    v1 = value_fn(p0 + step)
    t = (iso - v0) / (v1 - v0)
    pos = p0.astype(np.float64)
    pos[np.arange(len(pos)), uaxis] += t
    verts = grid.bounds.min + pos * grid.voxel_size
    return TriangleMesh(verts, faces)


def _dense_mesh(grid, iso, backend):
    vals = grid.values
    r = grid.resolution
    los, axes = [], []
    slab = max(1, (1 << 20) // (r * r))
    for i0 in range(0, r, slab):
        i1 = min(r, i0 + slab)
        cv = np.stack([vals[i0 + o[0]:i1 + o[0], o[1]:r + o[1], o[2]:r + o[2]] for o in _OFF], axis=-1)
        hit = _straddles(cv, iso)
        idx = np.argwhere(hit)
        if len(idx) == 0:
            continue
        cells = idx + np.array([i0, 0, 0])
        lo, ax = _triangulate(cells, cv[hit], iso, backend)
        los.append(lo)
        axes.append(ax)
    if not los:
        return TriangleMesh(np.empty((0, 3)), np.empty((0, 3), np.int64))
    lo = np.concatenate(los)
    ax = np.concatenate(axes)
    return _assemble(grid, lo, ax, lambda p: vals[p[:, 0], p[:, 1], p[:, 2]], iso)


def _sparse_mesh(grid, iso, backend):
    r = grid.resolution
    if grid.active_cells is None or len(grid.active_cells) == 0:
        return TriangleMesh(np.empty((0, 3)), np.empty((0, 3), np.int64))
    # active cells plus a one-cell ring: ring cells may mix decoded and inherited corners
    ckeys = ring_keys(grid.active_cells, r)
    cells = np.stack([ckeys // (r * r), (ckeys // r) % r, ckeys % r], axis=1)
    r1 = r + 1
    corners = cells[:, None, :] + _OFF[None]
    pkeys, pinv = np.unique(((corners[..., 0] * r1 + corners[..., 1]) * r1 + corners[..., 2]).reshape(-1),
                            return_inverse=True)
    pijk = np.stack([pkeys // (r1 * r1), (pkeys // r1) % r1, pkeys % r1], axis=1)
    pvals = grid.value_at(pijk)
    cv = pvals[pinv.reshape(-1, 8)]
    hit = _straddles(cv, iso)
    lo, ax = _triangulate(cells[hit], cv[hit], iso, backend)

    def value_fn(p):
        k = (p[:, 0] * r1 + p[:, 1]) * r1 + p[:, 2]
        return pvals[np.searchsorted(pkeys, k)]

    return _assemble(grid, lo, ax, value_fn, iso)


def marching_cubes(grid, iso=0.0, backend=None):
    """Isosurface of ``grid`` at ``iso`` with shared vertices on lattice edges.

    Vertices sit on cell edges at the linear zero crossing; faces are wound so
    normals point toward larger SDF values. A grid without a sign change
    yields an empty mesh.
    """
    if grid.dense:
        return _dense_mesh(grid, iso, backend)
    return _sparse_mesh(grid, iso, backend)

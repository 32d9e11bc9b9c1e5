"""Pure numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` module; used when
the extension is not built or ``GROUNDMESH_PURE_PYTHON=1`` is set.
"""

import numpy as np

from ._mc_tables import TRI_TABLE

NBINS = 11

_TRI = np.full((256, 5, 3), -1, dtype=np.int64)
_TRI_COUNT = np.zeros(256, dtype=np.int64)
for _case, _row in enumerate(TRI_TABLE):
    _TRI_COUNT[_case] = len(_row) // 3
    if _row:
        _TRI[_case, : len(_row) // 3] = np.reshape(_row, (-1, 3))


def _bin(x, lo, hi):
    b = np.floor((x - lo) * (NBINS / (hi - lo))).astype(np.int64)
    return np.clip(b, 0, NBINS - 1)


def pair_features(p, n_p, q, n_q):
    """Darboux-frame (alpha, phi, theta) for each source/target pair.

    Returns the three features and a validity mask; pairs with coincident
    points or an offset parallel to the source normal are invalid.
    """
    d = q - p
    dist = np.sqrt(np.einsum("ij,ij->i", d, d))
    vraw = np.cross(d, n_p)
    vnorm = np.sqrt(np.einsum("ij,ij->i", vraw, vraw))
    valid = (dist > 0) & (vnorm > 1e-12 * np.maximum(dist, 1e-300))
    safe_d = np.where(valid, dist, 1.0)
    safe_v = np.where(valid, vnorm, 1.0)
    v = vraw / safe_v[:, None]
    w = np.cross(n_p, v)
    alpha = np.einsum("ij,ij->i", v, n_q)
    phi = np.einsum("ij,ij->i", n_p, d) / safe_d
    theta = np.arctan2(np.einsum("ij,ij->i", w, n_q), np.einsum("ij,ij->i", n_p, n_q))
    return alpha, phi, theta, valid


def spfh_histograms(points, normals, indptr, indices):
    n = len(points)
    out = np.zeros((n, 3 * NBINS))
    row = np.repeat(np.arange(n), np.diff(indptr))
    keep = indices != row
    row, col = row[keep], indices[keep]
    if len(row) == 0:
        return out
    alpha, phi, theta, valid = pair_features(points[row], normals[row], points[col], normals[col])
    row = row[valid]
    counts = np.zeros((n, 3 * NBINS), dtype=np.int64)
    for offset, (feat, lo, hi) in enumerate(((alpha, -1.0, 1.0), (phi, -1.0, 1.0), (theta, -np.pi, np.pi))):
        b = _bin(feat[valid], lo, hi) + offset * NBINS
        np.add.at(counts, (row, b), 1)
    npairs = counts[:, :NBINS].sum(axis=1)
    has = npairs > 0
    out[has] = counts[has] * (100.0 / npairs[has])[:, None]
    return out


def fpfh_from_spfh(spfh, indptr, indices, distances):
    n = len(spfh)
    out = spfh.copy()
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        nb = indices[lo:hi]
        dd = distances[lo:hi]
        sel = (nb != i) & (dd > 0)
        k = int(sel.sum())
        if k == 0:
            continue
        acc = np.zeros(spfh.shape[1])
        for j, w in zip(nb[sel], dd[sel]):
            acc += spfh[j] * (1.0 / w)
        out[i] = spfh[i] + acc * (1.0 / k)
    return out


def feature_argmin(a, b, chunk=256):
    """Index of the nearest row of ``b`` for every row of ``a`` (lowest index on ties)."""
    na = len(a)
    idx = np.empty(na, dtype=np.int64)
    best = np.empty(na)
    bt = np.ascontiguousarray(np.asarray(b).T)
    for s in range(0, na, chunk):
        block = a[s:s + chunk]
        d2 = np.zeros((len(block), len(b)))
        # accumulate per feature in order so sums match the compiled kernel bit for bit
        for c in range(a.shape[1]):
            diff = block[:, c, None] - bt[c][None, :]
            d2 += diff * diff
        j = np.argmin(d2, axis=1)
        idx[s:s + chunk] = j
        best[s:s + chunk] = d2[np.arange(len(j)), j]
    return idx, np.sqrt(best)


def marching_cells(values, iso):
    """Triangles for a batch of cells.

    ``values`` is (n, 8) corner samples in table corner order. Returns
    ``(cell, edges)`` with one row per triangle: owning cell and its three
    table edge ids.
    """
    values = np.asarray(values, dtype=np.float64)
    case = np.zeros(len(values), dtype=np.int64)
    for c in range(8):
        case |= (values[:, c] < iso).astype(np.int64) << c
    ntri = _TRI_COUNT[case]
    cell = np.repeat(np.arange(len(values)), ntri)
    start = np.cumsum(ntri) - ntri
    local = np.arange(len(cell)) - np.repeat(start, ntri)
    edges = _TRI[case[cell], local]
    return cell, edges

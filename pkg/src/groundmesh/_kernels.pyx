# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: point-pair histograms, FPFH weighting, feature search, cube triangulation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, atan2, M_PI

from ._mc_tables import TRI_TABLE

cnp.import_array()

cdef enum:
    NBINS = 11

cdef long[256][16] _tri
cdef int _i, _j
for _i in range(256):
    for _j in range(16):
        _tri[_i][_j] = -1
    for _j, _e in enumerate(TRI_TABLE[_i]):
        _tri[_i][_j] = _e


cdef inline long _bin(double x, double lo, double hi) nogil:
    cdef long b = <long>floor((x - lo) * (NBINS / (hi - lo)))
    if b < 0:
        return 0
    if b > NBINS - 1:
        return NBINS - 1
    return b


def spfh_histograms(const double[:, ::1] points, const double[:, ::1] normals,
                    const long[::1] indptr, const long[::1] indices):
    cdef Py_ssize_t n = points.shape[0]
    out_arr = np.zeros((n, 3 * NBINS))
    cdef double[:, ::1] out = out_arr
    cdef long[33] counts
    cdef Py_ssize_t i, jj, j, c
    cdef long npairs
    cdef double dx, dy, dz, dist, vx, vy, vz, vn, wx, wy, wz
    cdef double alpha, phi, theta, scale
    with nogil:
        for i in range(n):
            for c in range(3 * NBINS):
                counts[c] = 0
            npairs = 0
            for jj in range(indptr[i], indptr[i + 1]):
                j = indices[jj]
                if j == i:
                    continue
                dx = points[j, 0] - points[i, 0]
                dy = points[j, 1] - points[i, 1]
                dz = points[j, 2] - points[i, 2]
                dist = sqrt(dx * dx + dy * dy + dz * dz)
                # v = d x n_p
                vx = dy * normals[i, 2] - dz * normals[i, 1]
                vy = dz * normals[i, 0] - dx * normals[i, 2]
                vz = dx * normals[i, 1] - dy * normals[i, 0]
                vn = sqrt(vx * vx + vy * vy + vz * vz)
                if not (dist > 0) or not (vn > 1e-12 * (dist if dist > 1e-300 else 1e-300)):
                    continue
                vx = vx / vn
                vy = vy / vn
                vz = vz / vn
                wx = normals[i, 1] * vz - normals[i, 2] * vy
                wy = normals[i, 2] * vx - normals[i, 0] * vz
                wz = normals[i, 0] * vy - normals[i, 1] * vx
                alpha = vx * normals[j, 0] + vy * normals[j, 1] + vz * normals[j, 2]
                phi = (normals[i, 0] * dx + normals[i, 1] * dy + normals[i, 2] * dz) / dist
                theta = atan2(wx * normals[j, 0] + wy * normals[j, 1] + wz * normals[j, 2],
                              normals[i, 0] * normals[j, 0] + normals[i, 1] * normals[j, 1]
                              + normals[i, 2] * normals[j, 2])
                counts[_bin(alpha, -1.0, 1.0)] += 1
                counts[NBINS + _bin(phi, -1.0, 1.0)] += 1
                counts[2 * NBINS + _bin(theta, -M_PI, M_PI)] += 1
                npairs += 1
            if npairs > 0:
                scale = 100.0 / npairs
                for c in range(3 * NBINS):
                    out[i, c] = counts[c] * scale
    return out_arr


def fpfh_from_spfh(const double[:, ::1] spfh, const long[::1] indptr,
                   const long[::1] indices, const double[::1] distances):
    cdef Py_ssize_t n = spfh.shape[0], nb = spfh.shape[1]
    out_arr = np.array(spfh, copy=True)
    cdef double[:, ::1] out = out_arr
    acc_arr = np.zeros(nb)
    cdef double[::1] acc = acc_arr
    cdef Py_ssize_t i, jj, j, c
    cdef long k
    cdef double w, invk
    with nogil:
        for i in range(n):
            for c in range(nb):
                acc[c] = 0.0
            k = 0
            for jj in range(indptr[i], indptr[i + 1]):
                j = indices[jj]
                if j == i or not (distances[jj] > 0):
                    continue
                w = 1.0 / distances[jj]
                for c in range(nb):
                    acc[c] += spfh[j, c] * w
                k += 1
            if k > 0:
                invk = 1.0 / k
                for c in range(nb):
                    out[i, c] = spfh[i, c] + acc[c] * invk
    return out_arr


def feature_argmin(const double[:, ::1] a, const double[:, ::1] b, chunk=None):
    cdef Py_ssize_t na = a.shape[0], nbr = b.shape[0], dim = a.shape[1]
    idx_arr = np.empty(na, dtype=np.int64)
    best_arr = np.empty(na)
    cdef long[::1] idx = idx_arr
    cdef double[::1] best = best_arr
    cdef Py_ssize_t i, j, c
    cdef double d2, diff, cur
    cdef long arg
    with nogil:
        for i in range(na):
            cur = 1e308
            arg = 0
            for j in range(nbr):
                d2 = 0.0
                for c in range(dim):
                    diff = a[i, c] - b[j, c]
                    d2 = d2 + diff * diff
                if d2 < cur:
                    cur = d2
                    arg = j
            idx[i] = arg
            best[i] = cur
    return idx_arr, np.sqrt(best_arr)


def marching_cells(values, double iso):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], i, t, total = 0
    cdef int c
    case_arr = np.zeros(n, dtype=np.int64)
    cdef long[::1] case = case_arr
    cdef long cs
    with nogil:
        for i in range(n):
            cs = 0
            for c in range(8):
                if v[i, c] < iso:
                    cs = cs | (1 << c)
            case[i] = cs
            t = 0
            while _tri[cs][t] != -1:
                t += 3
            total += t // 3
    cell_arr = np.empty(total, dtype=np.int64)
    edges_arr = np.empty((total, 3), dtype=np.int64)
    cdef long[::1] cell = cell_arr
    cdef long[:, ::1] edges = edges_arr
    cdef Py_ssize_t m = 0
    with nogil:
        for i in range(n):
            cs = case[i]
            t = 0
            while _tri[cs][t] != -1:
                cell[m] = i
                edges[m, 0] = _tri[cs][t]
                edges[m, 1] = _tri[cs][t + 1]
                edges[m, 2] = _tri[cs][t + 2]
                m += 1
                t += 3
    return cell_arr, edges_arr

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twin of ``_kernels_py``.

Semantics (including accumulation order and tie handling) match the
numpy fallback bitwise; see tests/test_backends.py.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs
from libcpp.algorithm cimport nth_element, partial_sort
from libcpp.pair cimport pair
from libcpp.vector cimport vector

cnp.import_array()

BACKEND = "compiled"


def chebyshev_distances(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] x = a
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1]
    out = np.zeros((n, n))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, d
    cdef double v, m
    for i in range(n):
        for j in range(i + 1, n):
            m = 0.0
            for d in range(dim):
                v = fabs(x[i, d] - x[j, d])
                if v > m:
                    m = v
            o[i, j] = m
            o[j, i] = m
    return out


def sq_euclidean_distances(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] x = a
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1]
    out = np.zeros((n, n))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, d
    cdef double v, s
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for d in range(dim):
                v = x[i, d] - x[j, d]
                s = s + v * v
            o[i, j] = s
            o[j, i] = s
    return out


def brute_knn(a, Py_ssize_t k, bint chebyshev=False):
    d = chebyshev_distances(a) if chebyshev else sq_euclidean_distances(a)
    cdef double[:, ::1] dm = d
    cdef Py_ssize_t n = dm.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    cdef long long[:, ::1] o = out
    cdef vector[pair[double, long long]] row
    cdef Py_ssize_t i, j, t
    row.resize(n)
    for i in range(n):
        for j in range(n):
            row[j].first = INFINITY if j == i else dm[i, j]
            row[j].second = j
        partial_sort(row.begin(), row.begin() + k, row.end())
        for t in range(k):
            o[i, t] = row[t].second
    return out


cdef double _kth_smallest(double* buf, Py_ssize_t n, Py_ssize_t k) noexcept nogil:
    nth_element(buf, buf + (k - 1), buf + n)
    return buf[k - 1]


def cmi_counts_conditional(d_xz, d_z, d_y, perm, Py_ssize_t k):
    cdef double[:, ::1] dxz = np.ascontiguousarray(d_xz, dtype=np.float64)
    cdef double[:, ::1] dz = np.ascontiguousarray(d_z, dtype=np.float64)
    cdef double[:, ::1] dy = np.ascontiguousarray(d_y, dtype=np.float64)
    cdef long long[::1] p = np.ascontiguousarray(perm, dtype=np.int64)
    cdef Py_ssize_t n = dxz.shape[0]
    kz_arr = np.empty(n, dtype=np.int64)
    kxz_arr = np.empty(n, dtype=np.int64)
    kyz_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] kz = kz_arr, kxz = kxz_arr, kyz = kyz_arr
    cdef vector[double] joint, dyrow, scratch
    joint.resize(n); dyrow.resize(n); scratch.resize(n)
    cdef Py_ssize_t i, j
    cdef long long pi, cz, cxz, cyz, self_in
    cdef double eps, v, w
    for i in range(n):
        pi = p[i]
        for j in range(n):
            v = dy[pi, p[j]]
            dyrow[j] = v
            w = dxz[i, j]
            joint[j] = v if v > w else w
        joint[i] = INFINITY
        for j in range(n):
            scratch[j] = joint[j]
        eps = _kth_smallest(scratch.data(), n, k)
        self_in = 1 if eps > 0.0 else 0
        cz = -self_in; cxz = -self_in; cyz = -self_in
        for j in range(n):
            if dz[i, j] < eps:
                cz += 1
            if dxz[i, j] < eps:
                cxz += 1
            v = dyrow[j]
            w = dz[i, j]
            if (v if v > w else w) < eps:
                cyz += 1
        kz[i] = cz; kxz[i] = cxz; kyz[i] = cyz
    return kz_arr, kxz_arr, kyz_arr


def cmi_counts_unconditional(d_x, d_y, perm, Py_ssize_t k):
    cdef double[:, ::1] dx = np.ascontiguousarray(d_x, dtype=np.float64)
    cdef double[:, ::1] dy = np.ascontiguousarray(d_y, dtype=np.float64)
    cdef long long[::1] p = np.ascontiguousarray(perm, dtype=np.int64)
    cdef Py_ssize_t n = dx.shape[0]
    kx_arr = np.empty(n, dtype=np.int64)
    ky_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] kx = kx_arr, ky = ky_arr
    cdef vector[double] joint, dyrow, scratch
    joint.resize(n); dyrow.resize(n); scratch.resize(n)
    cdef Py_ssize_t i, j
    cdef long long pi, cx, cy, self_in
    cdef double eps, v, w
    for i in range(n):
        pi = p[i]
        for j in range(n):
            v = dy[pi, p[j]]
            dyrow[j] = v
            w = dx[i, j]
            joint[j] = v if v > w else w
        joint[i] = INFINITY
        for j in range(n):
            scratch[j] = joint[j]
        eps = _kth_smallest(scratch.data(), n, k)
        self_in = 1 if eps > 0.0 else 0
        cx = -self_in; cy = -self_in
        for j in range(n):
            if dx[i, j] < eps:
                cx += 1
            if dyrow[j] < eps:
                cy += 1
        kx[i] = cx; ky[i] = cy
    return kx_arr, ky_arr


def restricted_permutation(neighbors, order, u):
    cdef long long[:, ::1] nb = np.ascontiguousarray(neighbors, dtype=np.int64)
    cdef long long[::1] od = np.ascontiguousarray(order, dtype=np.int64)
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t n = nb.shape[0], c = nb.shape[1]
    donor_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] donor = donor_arr
    used_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] used = used_arr
    cdef vector[long long] free
    free.reserve(c)
    cdef Py_ssize_t t, m
    cdef long long i, cand, pick, idx
    for t in range(n):
        i = od[t]
        free.clear()
        for m in range(c):
            cand = nb[i, m]
            if not used[cand]:
                free.push_back(cand)
        if free.size() > 0:
            idx = <long long>(uu[t] * free.size())
            if idx > <long long>free.size() - 1:
                idx = <long long>free.size() - 1
            pick = free[idx]
        else:
            idx = <long long>(uu[t] * c)
            if idx > c - 1:
                idx = c - 1
            pick = nb[i, idx]
        donor[i] = pick
        used[pick] = 1
    return donor_arr

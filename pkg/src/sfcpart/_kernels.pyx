# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Twin of ``_kernels_py``; outputs are bit-identical."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()

KEY_WIDTH = 64


def quantize_interleave(coords, int bits):
    cdef const double[:, ::1] c = np.ascontiguousarray(coords, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], d = c.shape[1], i, k
    cdef int b
    if d * bits > KEY_WIDTH:
        raise ValueError(f"{d} dims x {bits} bits exceeds {KEY_WIDTH}-bit key")
    out = np.zeros(n, dtype=np.uint64)
    cdef uint64_t[::1] key = out
    cdef uint64_t side = (<uint64_t>1) << bits
    cdef double fside = <double>side
    cdef double v
    cdef uint64_t acc, q
    cdef uint64_t qbuf[64]
    for i in range(n):
        for k in range(d):
            v = floor(c[i, k] * fside)
            if v < 0:
                v = 0
            elif v > fside - 1:
                v = fside - 1
            qbuf[k] = <uint64_t>v
        acc = 0
        for b in range(bits - 1, -1, -1):
            for k in range(d):
                acc = (acc << 1) | ((qbuf[k] >> b) & 1)
        key[i] = acc
    return out


def range_bbox(const double[:, ::1] coords, const int64_t[::1] order, Py_ssize_t start, Py_ssize_t stop):
    cdef Py_ssize_t d = coords.shape[1], i, k
    lo = np.empty(d)
    hi = np.empty(d)
    cdef double[::1] lo_v = lo, hi_v = hi
    cdef double v
    cdef int64_t r
    r = order[start]
    for k in range(d):
        lo_v[k] = coords[r, k]
        hi_v[k] = coords[r, k]
    for i in range(start + 1, stop):
        r = order[i]
        for k in range(d):
            v = coords[r, k]
            if v < lo_v[k]:
                lo_v[k] = v
            elif v > hi_v[k]:
                hi_v[k] = v
    return lo, hi


def partition_range(const double[:, ::1] coords, int64_t[::1] order, Py_ssize_t start,
                    Py_ssize_t stop, int dim, double value):
    cdef Py_ssize_t i, nl = 0, nr = 0
    cdef int64_t r
    buf = np.empty(stop - start, dtype=np.int64)
    cdef int64_t[::1] right = buf
    for i in range(start, stop):
        r = order[i]
        if coords[r, dim] <= value:
            order[start + nl] = r
            nl += 1
        else:
            right[nr] = r
            nr += 1
    for i in range(nr):
        order[start + nl + i] = right[i]
    return start + nl


def knapsack_floor(weights, int64_t nparts, bint integral):
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0], i
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] ranks = out
    cdef int64_t itotal = 0, iacc = 0, r
    cdef double total = 0.0, acc = 0.0
    if integral:
        for i in range(n):
            itotal += <int64_t>w[i]
        for i in range(n):
            r = (iacc * nparts) // itotal
            ranks[i] = r if r < nparts - 1 else nparts - 1
            iacc += <int64_t>w[i]
    else:
        for i in range(n):
            total += w[i]
        for i in range(n):
            r = <int64_t>floor(acc * nparts / total)
            ranks[i] = r if r < nparts - 1 else nparts - 1
            acc += w[i]
    return out


cdef Py_ssize_t _lower_bound(const double[::1] a, Py_ssize_t n, double x) nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef Py_ssize_t _upper_bound(const double[::1] a, Py_ssize_t n, double x) nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def window_reach(prefix, Py_ssize_t nparts, double lower, double width, double eps):
    cdef const double[::1] pre = np.ascontiguousarray(prefix, dtype=np.float64)
    cdef Py_ssize_t m = pre.shape[0], n = m - 1, k, a, b
    lo_a = np.zeros(nparts, dtype=np.int64)
    hi_a = np.zeros(nparts, dtype=np.int64)
    cdef int64_t[::1] lo = lo_a, hi = hi_a
    for k in range(1, nparts):
        a = _lower_bound(pre, m, pre[lo[k - 1]] + lower - eps)
        b = _upper_bound(pre, m, pre[hi[k - 1]] + lower + width + eps) - 1
        if a > n:
            return lo_a, hi_a, False
        lo[k] = a
        hi[k] = b if b > a else a
    ok = pre[lo[nparts - 1]] <= pre[n] - lower + eps
    return lo_a, hi_a, ok

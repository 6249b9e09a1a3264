# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: xoshiro256++ bulk generation and ball-tree kNN search.

Every function here has a pure-Python twin in ``_fallback.py`` that produces
bit-identical results. Keep the two in lockstep.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdint cimport uint64_t

cnp.import_array()


cdef inline uint64_t _rotl(uint64_t x, int k) noexcept nogil:
    return (x << k) | (x >> (64 - k))


def xoshiro_fill(uint64_t[::1] state, Py_ssize_t n):
    """Draw ``n`` raw 64-bit outputs, advancing ``state`` (length 4) in place."""
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef uint64_t s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3]
    cdef uint64_t t
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _rotl(s0 + s3, 23) + s0
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out


cdef inline double _dist(const double[:, ::1] a, Py_ssize_t i,
                         const double[::1] q) noexcept nogil:
    cdef double acc = 0.0, diff
    cdef Py_ssize_t j
    for j in range(q.shape[0]):
        diff = a[i, j] - q[j]
        acc = acc + diff * diff
    return sqrt(acc)


cdef struct _Heap:
    double* dist
    Py_ssize_t* idx
    Py_ssize_t size
    Py_ssize_t k


cdef inline bint _better(double d1, Py_ssize_t i1, double d2, Py_ssize_t i2) noexcept nogil:
    return d1 < d2 or (d1 == d2 and i1 < i2)


cdef inline void _push(_Heap* h, double d, Py_ssize_t i) noexcept nogil:
    # sorted insertion; k is small
    cdef Py_ssize_t pos
    if h.size == h.k:
        if not _better(d, i, h.dist[h.k - 1], h.idx[h.k - 1]):
            return
        pos = h.k - 1
    else:
        pos = h.size
        h.size += 1
    while pos > 0 and _better(d, i, h.dist[pos - 1], h.idx[pos - 1]):
        h.dist[pos] = h.dist[pos - 1]
        h.idx[pos] = h.idx[pos - 1]
        pos -= 1
    h.dist[pos] = d
    h.idx[pos] = i


cdef Py_ssize_t _search(Py_ssize_t node, double lb,
                        const double[:, ::1] points, const cnp.intp_t[::1] order,
                        const cnp.intp_t[::1] start, const cnp.intp_t[::1] end,
                        const cnp.intp_t[::1] left, const cnp.intp_t[::1] right,
                        const double[:, ::1] centroid, const double[::1] radius,
                        const double[::1] q, Py_ssize_t exclude, _Heap* h) noexcept nogil:
    cdef Py_ssize_t visits = 1, p, pid, c1, c2
    cdef double worst, d, lb1, lb2, tmp
    if h.size == h.k:
        worst = h.dist[h.k - 1]
        if lb > worst + 1e-10 * worst:
            return visits
    if left[node] < 0:
        for p in range(start[node], end[node]):
            pid = order[p]
            if pid == exclude:
                continue
            d = _dist(points, pid, q)
            _push(h, d, pid)
        return visits
    c1 = left[node]
    c2 = right[node]
    lb1 = _dist(centroid, c1, q) - radius[c1]
    lb2 = _dist(centroid, c2, q) - radius[c2]
    if lb1 < 0.0:
        lb1 = 0.0
    if lb2 < 0.0:
        lb2 = 0.0
    if lb2 < lb1:
        c1, c2 = c2, c1
        tmp = lb1
        lb1 = lb2
        lb2 = tmp
    visits += _search(c1, lb1, points, order, start, end, left, right,
                      centroid, radius, q, exclude, h)
    visits += _search(c2, lb2, points, order, start, end, left, right,
                      centroid, radius, q, exclude, h)
    return visits


def knn_query(const double[:, ::1] points, const cnp.intp_t[::1] order,
              const cnp.intp_t[::1] start, const cnp.intp_t[::1] end,
              const cnp.intp_t[::1] left, const cnp.intp_t[::1] right,
              const double[:, ::1] centroid, const double[::1] radius,
              const double[::1] q, Py_ssize_t k, Py_ssize_t exclude):
    """Exact k nearest neighbours of ``q``; returns (indices, distances, visits).

    Ties are broken by ascending point index. ``exclude`` is a point index to
    skip, or -1.
    """
    dist_out = np.empty(k, dtype=np.float64)
    idx_out = np.empty(k, dtype=np.intp)
    cdef double[::1] dv = dist_out
    cdef cnp.intp_t[::1] iv = idx_out
    cdef _Heap h
    h.dist = &dv[0]
    h.idx = <Py_ssize_t*> &iv[0]
    h.size = 0
    h.k = k
    cdef double lb0
    cdef Py_ssize_t visits
    with nogil:
        lb0 = _dist(centroid, 0, q) - radius[0]
        if lb0 < 0.0:
            lb0 = 0.0
        visits = _search(0, lb0, points, order, start, end, left, right,
                         centroid, radius, q, exclude, &h)
    return idx_out[:h.size], dist_out[:h.size], visits

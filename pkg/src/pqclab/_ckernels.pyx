# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline void _push(double[::1] hk, int[::1] hv, Py_ssize_t *size,
                       double key, int val) noexcept nogil:
    cdef Py_ssize_t i = size[0]
    cdef Py_ssize_t parent
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if hk[parent] < key or (hk[parent] == key and hv[parent] <= val):
            break
        hk[i] = hk[parent]
        hv[i] = hv[parent]
        i = parent
    hk[i] = key
    hv[i] = val


cdef inline void _pop(double[::1] hk, int[::1] hv, Py_ssize_t *size,
                      double *key, int *val) noexcept nogil:
    cdef Py_ssize_t n, i, child
    cdef double lk
    cdef int lv
    key[0] = hk[0]
    val[0] = hv[0]
    size[0] -= 1
    n = size[0]
    if n == 0:
        return
    lk = hk[n]
    lv = hv[n]
    i = 0
    while True:
        child = 2 * i + 1
        if child >= n:
            break
        if child + 1 < n and (hk[child + 1] < hk[child] or
                              (hk[child + 1] == hk[child] and hv[child + 1] < hv[child])):
            child += 1
        if lk < hk[child] or (lk == hk[child] and lv <= hv[child]):
            break
        hk[i] = hk[child]
        hv[i] = hv[child]
        i = child
    hk[i] = lk
    hv[i] = lv


def dijkstra(nbr, cost, opp, sources):
    cdef int[:, ::1] nb = np.ascontiguousarray(nbr, dtype=np.int32)
    cdef double[:, ::1] cs = np.ascontiguousarray(cost, dtype=np.float64)
    cdef int[::1] op = np.ascontiguousarray(opp, dtype=np.int32)
    cdef int[::1] src = np.ascontiguousarray(sources, dtype=np.int32)
    cdef Py_ssize_t n = nb.shape[0]
    cdef Py_ssize_t n_act = nb.shape[1]
    dist_arr = np.full(n, np.inf, dtype=np.float64)
    cdef double[::1] dist = dist_arr
    cdef unsigned char[::1] done = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t cap = n * n_act + src.shape[0] + 1
    cdef double[::1] hk = np.empty(cap, dtype=np.float64)
    cdef int[::1] hv = np.empty(cap, dtype=np.int32)
    cdef Py_ssize_t size = 0
    cdef Py_ssize_t i, a
    cdef int s, v, u
    cdef double d, nd
    with nogil:
        for i in range(src.shape[0]):
            s = src[i]
            if dist[s] > 0.0:
                dist[s] = 0.0
                _push(hk, hv, &size, 0.0, s)
        while size > 0:
            _pop(hk, hv, &size, &d, &v)
            if done[v]:
                continue
            done[v] = 1
            for a in range(n_act):
                u = nb[v, a]
                if u < 0 or done[u]:
                    continue
                nd = d + cs[u, op[a]]
                if nd < dist[u]:
                    dist[u] = nd
                    _push(hk, hv, &size, nd, u)
    return dist_arr


def im2col(x, int k, int stride):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t b = xv.shape[0], h = xv.shape[1], w = xv.shape[2], c = xv.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    out = np.empty((b * ho * wo, k * k * c), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t n, y, xx, ch, i, j, row, col
    with nogil:
        for n in range(b):
            for y in range(ho):
                for xx in range(wo):
                    row = (n * ho + y) * wo + xx
                    col = 0
                    for i in range(k):
                        for j in range(k):
                            for ch in range(c):
                                ov[row, col] = xv[n, y * stride + i, xx * stride + j, ch]
                                col += 1
    return out


def col2im(cols, shape, int k, int stride):
    cdef Py_ssize_t b = shape[0], h = shape[1], w = shape[2], c = shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    cdef double[:, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64)
    out = np.zeros((b, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t n, y, xx, ch, i, j, row, base
    # (i, j) outermost so accumulation order matches the NumPy fallback
    with nogil:
        for i in range(k):
            for j in range(k):
                base = (i * k + j) * c
                for n in range(b):
                    for y in range(ho):
                        for xx in range(wo):
                            row = (n * ho + y) * wo + xx
                            for ch in range(c):
                                ov[n, y * stride + i, xx * stride + j, ch] += cv[row, base + ch]
    return out

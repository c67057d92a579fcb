# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stereo-matching kernels. Arrays are C-contiguous; cost volumes are [H, W, D]."""

import numpy as np

ctypedef unsigned long long u64

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def census_transform(const int[:, ::1] img, int radius):
    """Bit k set where neighbor k of the (2r+1)^2 window is darker than the center."""
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    padded_arr = np.pad(np.asarray(img), radius, mode="edge")
    cdef const int[:, ::1] p = padded_arr
    out_arr = np.zeros((h, w), dtype=np.uint64)
    cdef u64[:, ::1] out = out_arr
    cdef Py_ssize_t y, x
    cdef int dy, dx, center, k = 2 * radius + 1
    cdef u64 code, bit
    with nogil:
        for y in range(h):
            for x in range(w):
                center = p[y + radius, x + radius]
                code = 0
                bit = 1
                for dy in range(k):
                    for dx in range(k):
                        if dy == radius and dx == radius:
                            continue
                        if p[y + dy, x + dx] < center:
                            code |= bit
                        bit <<= 1
                out[y, x] = code
    return out_arr


def census_cost(const u64[:, ::1] ref, const u64[:, ::1] other, int n_disp, double max_cost):
    """Hamming distance between ref(x) and other(x - d); max_cost where x - d < 0."""
    cdef Py_ssize_t h = ref.shape[0], w = ref.shape[1]
    out_arr = np.empty((h, w, n_disp), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t y, x, d
    with nogil:
        for y in range(h):
            for x in range(w):
                for d in range(n_disp):
                    if x - d < 0:
                        out[y, x, d] = max_cost
                    else:
                        out[y, x, d] = __builtin_popcountll(ref[y, x] ^ other[y, x - d])
    return out_arr


def aggregate_path(const double[:, :, ::1] cost, double p1, double p2, int dy, int dx):
    """One SGM scanline recursion along direction (dy, dx)."""
    cdef Py_ssize_t h = cost.shape[0], w = cost.shape[1], n = cost.shape[2]
    out_arr = np.empty((h, w, n), dtype=np.float64)
    cdef double[:, :, ::1] L = out_arr
    cdef Py_ssize_t y0 = 0 if dy >= 0 else h - 1, ystep = 1 if dy >= 0 else -1
    cdef Py_ssize_t x0 = 0 if dx >= 0 else w - 1, xstep = 1 if dx >= 0 else -1
    cdef Py_ssize_t iy, ix, y, x, py, px, d
    cdef double m, v, t
    with nogil:
        for iy in range(h):
            y = y0 + iy * ystep
            for ix in range(w):
                x = x0 + ix * xstep
                py = y - dy
                px = x - dx
                if py < 0 or py >= h or px < 0 or px >= w:
                    for d in range(n):
                        L[y, x, d] = cost[y, x, d]
                    continue
                m = L[py, px, 0]
                for d in range(1, n):
                    if L[py, px, d] < m:
                        m = L[py, px, d]
                for d in range(n):
                    v = L[py, px, d]
                    if d > 0:
                        t = L[py, px, d - 1] + p1
                        if t < v:
                            v = t
                    if d < n - 1:
                        t = L[py, px, d + 1] + p1
                        if t < v:
                            v = t
                    t = m + p2
                    if t < v:
                        v = t
                    L[y, x, d] = cost[y, x, d] + v - m
    return out_arr

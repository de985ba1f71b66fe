# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: bilinear warp (forward/backward) and SAD block matching."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor
from libc.stdlib cimport llabs

cnp.import_array()


cdef inline double _clamp(double v, double lo, double hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def warp_forward(const double[:, :, ::1] x, const double[:, :, ::1] flow):
    cdef Py_ssize_t ch = x.shape[0], h = x.shape[1], w = x.shape[2]
    out_arr = np.empty((ch, h, w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, i, j, x0, y0, x1, y1
    cdef double sx, sy, wx, wy
    with nogil:
        for i in range(h):
            for j in range(w):
                sx = _clamp(j + flow[0, i, j], 0.0, w - 1.0)
                sy = _clamp(i + flow[1, i, j], 0.0, h - 1.0)
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                y1 = y0 + 1 if y0 + 1 < h else h - 1
                wx = sx - x0
                wy = sy - y0
                for c in range(ch):
                    out[c, i, j] = ((1.0 - wy) * ((1.0 - wx) * x[c, y0, x0] + wx * x[c, y0, x1])
                                    + wy * ((1.0 - wx) * x[c, y1, x0] + wx * x[c, y1, x1]))
    return out_arr


def warp_backward(const double[:, :, ::1] g, const double[:, :, ::1] flow):
    cdef Py_ssize_t ch = g.shape[0], h = g.shape[1], w = g.shape[2]
    out_arr = np.zeros((ch, h, w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, i, j, x0, y0, x1, y1
    cdef double sx, sy, wx, wy, gv
    with nogil:
        for c in range(ch):
            for i in range(h):
                for j in range(w):
                    sx = _clamp(j + flow[0, i, j], 0.0, w - 1.0)
                    sy = _clamp(i + flow[1, i, j], 0.0, h - 1.0)
                    x0 = <Py_ssize_t>floor(sx)
                    y0 = <Py_ssize_t>floor(sy)
                    x1 = x0 + 1 if x0 + 1 < w else w - 1
                    y1 = y0 + 1 if y0 + 1 < h else h - 1
                    wx = sx - x0
                    wy = sy - y0
                    gv = g[c, i, j]
                    out[c, y0, x0] += gv * ((1.0 - wy) * (1.0 - wx))
                    out[c, y0, x1] += gv * ((1.0 - wy) * wx)
                    out[c, y1, x0] += gv * (wy * (1.0 - wx))
                    out[c, y1, x1] += gv * (wy * wx)
    return out_arr


def block_match(const cnp.int64_t[:, :, ::1] prev, const cnp.int64_t[:, :, ::1] curr,
                Py_ssize_t block, Py_ssize_t radius):
    from ._fallback import candidate_offsets
    cands = np.asarray(candidate_offsets(radius), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] cv = cands
    cdef Py_ssize_t ncand = cands.shape[0]
    cdef Py_ssize_t ch = curr.shape[0], h = curr.shape[1], w = curr.shape[2]
    cdef Py_ssize_t nby = (h + block - 1) // block, nbx = (w + block - 1) // block
    # edge padding replaces per-pixel index clamping
    padded_arr = np.ascontiguousarray(np.pad(np.asarray(prev), ((0, 0), (radius, radius), (radius, radius)),
                                             mode="edge"))
    cdef const cnp.int64_t[:, :, ::1] pp = padded_arr
    out_arr = np.empty((2, nby, nbx), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] out = out_arr
    sad_arr = np.empty((nby, nbx), dtype=np.int64)
    best_arr = np.full((nby, nbx), -1, dtype=np.int64)
    bestk_arr = np.zeros((nby, nbx), dtype=np.int64)
    row_arr = np.empty(w, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] sad = sad_arr
    cdef cnp.int64_t[:, ::1] best = best_arr
    cdef cnp.int64_t[:, ::1] best_k = bestk_arr
    cdef cnp.int64_t[::1] row = row_arr
    cdef Py_ssize_t by, bx, k, c, i, j, oy, ox
    cdef cnp.int64_t acc
    cdef const cnp.int64_t* crow
    cdef const cnp.int64_t* prow
    with nogil:
        for k in range(ncand):
            oy = cv[k, 0] + radius
            ox = cv[k, 1] + radius
            sad[:, :] = 0
            for c in range(ch):
                for i in range(h):
                    crow = &curr[c, i, 0]
                    prow = &pp[c, i + oy, ox]
                    # full-row, branch-free pass so the compiler can vectorize it
                    for j in range(w):
                        row[j] = llabs(crow[j] - prow[j])
                    by = i // block
                    for bx in range(nbx):
                        acc = 0
                        for j in range(bx * block, min(bx * block + block, w)):
                            acc = acc + row[j]
                        sad[by, bx] += acc
            # candidates arrive in tie-break order, so only a strict improvement wins
            for by in range(nby):
                for bx in range(nbx):
                    if best[by, bx] < 0 or sad[by, bx] < best[by, bx]:
                        best[by, bx] = sad[by, bx]
                        best_k[by, bx] = k
        for by in range(nby):
            for bx in range(nbx):
                out[0, by, bx] = cv[best_k[by, bx], 1]
                out[1, by, bx] = cv[best_k[by, bx], 0]
    return out_arr

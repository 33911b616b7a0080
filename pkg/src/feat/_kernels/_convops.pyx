# Compiled twin of numpy_backend. Tap accumulation order in col2im3 must stay
# ascending-k to remain bit-identical with the fallback.

import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col3(cnp.ndarray[cnp.float64_t, ndim=3] x):
    cdef Py_ssize_t c = x.shape[0]
    cdef Py_ssize_t h = x.shape[1]
    cdef Py_ssize_t w = x.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cols = np.zeros((c * 9, h * w), dtype=np.float64)
    cdef double[:, :, :] xv = x
    cdef double[:, :] cv = cols
    cdef Py_ssize_t ci, k, ky, kx, y, x0, sy, row, x_lo, x_hi, base, shift
    for ci in range(c):
        for k in range(9):
            ky = k // 3
            kx = k % 3
            row = ci * 9 + k
            # Valid x0 span for this tap; border columns stay zero.
            x_lo = 1 - kx if kx < 1 else 0
            x_hi = w if kx <= 1 else w - 1
            shift = kx - 1
            for y in range(h):
                sy = y + ky - 1
                if sy < 0 or sy >= h:
                    continue
                base = y * w
                for x0 in range(x_lo, x_hi):
                    cv[row, base + x0] = xv[ci, sy, x0 + shift]
    return cols


def col2im3(cnp.ndarray[cnp.float64_t, ndim=2] cols, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t c = cols.shape[0] // 9
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.zeros((c, h, w), dtype=np.float64)
    cdef double[:, :] cv = cols
    cdef double[:, :, :] ov = out
    cdef Py_ssize_t ci, k, ky, kx, y, x0, dy, dx, row
    for k in range(9):
        ky = k // 3
        kx = k % 3
        for ci in range(c):
            row = ci * 9 + k
            for y in range(h):
                dy = y + ky - 1
                if dy < 0 or dy >= h:
                    continue
                for x0 in range(w):
                    dx = x0 + kx - 1
                    if 0 <= dx < w:
                        ov[ci, dy, dx] += cv[row, y * w + x0]
    return out

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``.

Summation orders follow the numpy fallback so both backends agree to
rounding.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1
    cdef Py_ssize_t ow = (wp - kw) // stride + 1
    cdef Py_ssize_t ckk = c * kh * kw
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n * oh * ow, ckk), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, ch, ki, kj, row, col, y0, x0
    for b in range(n):
        for i in range(oh):
            y0 = i * stride
            for j in range(ow):
                x0 = j * stride
                row = (b * oh + i) * ow + j
                col = 0
                for ch in range(c):
                    for ki in range(kh):
                        for kj in range(kw):
                            out[row, col] = xp[b, ch, y0 + ki, x0 + kj]
                            col += 1
    return out_arr


def col2im(real[:, ::1] cols, tuple shape, int kh, int kw, int stride):
    cdef Py_ssize_t n = shape[0], c = shape[1], hp = shape[2], wp = shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1
    cdef Py_ssize_t ow = (wp - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, ch, ki, kj, row, base
    # tap-major order matches the numpy fallback's accumulation order
    for ki in range(kh):
        for kj in range(kw):
            for b in range(n):
                for i in range(oh):
                    for j in range(ow):
                        row = (b * oh + i) * ow + j
                        base = ki * kw + kj
                        for ch in range(c):
                            out[b, ch, i * stride + ki, j * stride + kj] += cols[row, ch * kh * kw + base]
    return out_arr


def box_mean(double[:, ::1] img, int r):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t k = 2 * r + 1
    cdef Py_ssize_t hp = h + 2 * r, wp = w + 2 * r
    s_arr = np.zeros((hp + 1, wp + 1), dtype=np.float64)
    cdef double[:, ::1] s = s_arr
    cdef Py_ssize_t y, x, sy, sx
    cdef double v
    # integral image of the edge-replicated input, built row by row
    for y in range(hp):
        sy = y - r
        if sy < 0:
            sy = 0
        elif sy >= h:
            sy = h - 1
        for x in range(wp):
            sx = x - r
            if sx < 0:
                sx = 0
            elif sx >= w:
                sx = w - 1
            s[y + 1, x + 1] = img[sy, sx]
    for y in range(1, hp + 1):
        for x in range(1, wp + 1):
            s[y, x] += s[y - 1, x]
    for y in range(1, hp + 1):
        for x in range(1, wp + 1):
            s[y, x] += s[y, x - 1]
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double norm = <double>(k * k)
    for y in range(h):
        for x in range(w):
            v = s[y + k, x + k] - s[y, x + k] - s[y + k, x] + s[y, x]
            out[y, x] = v / norm
    return out_arr


def correlate_sparse(real[:, ::1] img, real[:, ::1] kernel):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1]
    cdef Py_ssize_t ch = kh // 2, cw = kw // 2
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((h, w), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t ki, kj, y, x, sy, sx
    cdef real kv
    for ki in range(kh):
        for kj in range(kw):
            kv = kernel[ki, kj]
            if kv == 0:
                continue
            for y in range(h):
                sy = y + ki - ch
                if sy < 0 or sy >= h:
                    continue
                for x in range(w):
                    sx = x + kj - cw
                    if sx < 0 or sx >= w:
                        continue
                    out[y, x] += kv * img[sy, sx]
    return out_arr


def lcs_length(const long long[::1] a, const long long[::1] b):
    cdef Py_ssize_t m = a.shape[0], n = b.shape[0]
    if m == 0 or n == 0:
        return 0
    prev_arr = np.zeros(n + 1, dtype=np.int64)
    cur_arr = np.zeros(n + 1, dtype=np.int64)
    cdef long long[::1] prev = prev_arr
    cdef long long[::1] cur = cur_arr
    cdef long long[::1] tmp
    cdef Py_ssize_t i, j
    for i in range(m):
        cur[0] = 0
        for j in range(1, n + 1):
            if a[i] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif cur[j - 1] > prev[j]:
                cur[j] = cur[j - 1]
            else:
                cur[j] = prev[j]
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[n])

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Bit-identical to py_backend: float32 arithmetic with the
same per-output-element accumulation order (build uses -ffp-contract=off so
mul/add round separately, matching numpy)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

F32 = np.float32


def conv2d_forward(cnp.float32_t[:, :, ::1] xpad, cnp.float32_t[:, :, :, ::1] w,
                   cnp.float32_t[::1] b, int stride):
    cdef int C = xpad.shape[0], Hp = xpad.shape[1], Wp = xpad.shape[2]
    cdef int F = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef int ho = (Hp - KH) // stride + 1
    cdef int wo = (Wp - KW) // stride + 1
    out = np.empty((F, ho, wo), dtype=F32)
    cdef cnp.float32_t[:, :, ::1] y = out
    cdef int f, i, j, c, kh, kw
    cdef float acc
    with nogil:
        for f in range(F):
            for i in range(ho):
                for j in range(wo):
                    acc = b[f]
                    for c in range(C):
                        for kh in range(KH):
                            for kw in range(KW):
                                acc = acc + w[f, c, kh, kw] * xpad[c, i * stride + kh, j * stride + kw]
                    y[f, i, j] = acc
    return out


def conv2d_backward_input(cnp.float32_t[:, :, ::1] dy, cnp.float32_t[:, :, :, ::1] w,
                          int stride, int hp, int wp):
    cdef int F = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2]
    cdef int C = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    out = np.zeros((C, hp, wp), dtype=F32)
    cdef cnp.float32_t[:, :, ::1] dxpad = out
    cdef int f, kh, kw, c, i, j
    cdef float g
    with nogil:
        for f in range(F):
            for kh in range(KH):
                for kw in range(KW):
                    for c in range(C):
                        for i in range(ho):
                            for j in range(wo):
                                dxpad[c, i * stride + kh, j * stride + kw] = (
                                    dxpad[c, i * stride + kh, j * stride + kw]
                                    + w[f, c, kh, kw] * dy[f, i, j])
    return out


def conv2d_backward_weights(cnp.float32_t[:, :, ::1] dy, cnp.float32_t[:, :, ::1] xpad,
                            int stride, int kh_size, int kw_size):
    cdef int F = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2]
    cdef int C = xpad.shape[0]
    dw_arr = np.zeros((F, C, kh_size, kw_size), dtype=F32)
    db_arr = np.zeros(F, dtype=F32)
    cdef cnp.float32_t[:, :, :, ::1] dw = dw_arr
    cdef cnp.float32_t[::1] db = db_arr
    cdef int f, c, kh, kw, i, j
    cdef float acc
    with nogil:
        for f in range(F):
            for c in range(C):
                for kh in range(kh_size):
                    for kw in range(kw_size):
                        acc = 0.0
                        for i in range(ho):
                            for j in range(wo):
                                acc = acc + dy[f, i, j] * xpad[c, i * stride + kh, j * stride + kw]
                        dw[f, c, kh, kw] = acc
            acc = 0.0
            for i in range(ho):
                for j in range(wo):
                    acc = acc + dy[f, i, j]
            db[f] = acc
    return dw_arr, db_arr


def fc_forward(cnp.float32_t[::1] x, cnp.float32_t[:, ::1] w, cnp.float32_t[::1] b):
    cdef int O = w.shape[0], D = w.shape[1]
    out = np.empty(O, dtype=F32)
    cdef cnp.float32_t[::1] y = out
    cdef int o, d
    cdef float acc
    with nogil:
        for o in range(O):
            acc = b[o]
            for d in range(D):
                acc = acc + w[o, d] * x[d]
            y[o] = acc
    return out


def fc_backward_input(cnp.float32_t[::1] dy, cnp.float32_t[:, ::1] w):
    cdef int O = w.shape[0], D = w.shape[1]
    out = np.zeros(D, dtype=F32)
    cdef cnp.float32_t[::1] dx = out
    cdef int o, d
    cdef float acc
    with nogil:
        for d in range(D):
            acc = 0.0
            for o in range(O):
                acc = acc + w[o, d] * dy[o]
            dx[d] = acc
    return out


def fc_backward_weights(cnp.float32_t[::1] dy, cnp.float32_t[::1] x):
    cdef int O = dy.shape[0], D = x.shape[0]
    dw_arr = np.empty((O, D), dtype=F32)
    cdef cnp.float32_t[:, ::1] dw = dw_arr
    cdef int o, d
    with nogil:
        for o in range(O):
            for d in range(D):
                dw[o, d] = dy[o] * x[d]
    return dw_arr, np.asarray(dy).copy()


def maxpool_forward(cnp.float32_t[:, :, ::1] x, int size, int stride):
    cdef int C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef int ho = (H - size) // stride + 1
    cdef int wo = (W - size) // stride + 1
    y_arr = np.empty((C, ho, wo), dtype=F32)
    idx_arr = np.empty((C, ho, wo), dtype=np.int64)
    cdef cnp.float32_t[:, :, ::1] y = y_arr
    cdef cnp.int64_t[:, :, ::1] idx = idx_arr
    cdef int c, i, j, wi, wj, r0, c0
    cdef float best, v
    cdef cnp.int64_t bidx
    with nogil:
        for c in range(C):
            for i in range(ho):
                for j in range(wo):
                    r0 = i * stride
                    c0 = j * stride
                    best = x[c, r0, c0]
                    bidx = r0 * W + c0
                    for wi in range(size):
                        for wj in range(size):
                            if wi == 0 and wj == 0:
                                continue
                            v = x[c, r0 + wi, c0 + wj]
                            if v > best:
                                best = v
                                bidx = (r0 + wi) * W + (c0 + wj)
                    y[c, i, j] = best
                    idx[c, i, j] = bidx
    return y_arr, idx_arr


def maxpool_backward(cnp.float32_t[:, :, ::1] dy, cnp.int64_t[:, :, ::1] idx, int h, int w):
    cdef int C = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2]
    out = np.zeros((C, h * w), dtype=F32)
    cdef cnp.float32_t[:, ::1] dx = out
    cdef int c, i, j
    cdef cnp.int64_t t
    with nogil:
        for c in range(C):
            for i in range(ho):
                for j in range(wo):
                    t = idx[c, i, j]
                    dx[c, t] = dx[c, t] + dy[c, i, j]
    return out.reshape(C, h, w)


def avgpool_forward(cnp.float32_t[:, :, ::1] x, int size, int stride):
    cdef int C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef int ho = (H - size) // stride + 1
    cdef int wo = (W - size) // stride + 1
    out = np.empty((C, ho, wo), dtype=F32)
    cdef cnp.float32_t[:, :, ::1] y = out
    cdef float inv = <float> (1.0 / (size * size))
    cdef int c, i, j, wi, wj
    cdef float acc
    with nogil:
        for c in range(C):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for wi in range(size):
                        for wj in range(size):
                            acc = acc + x[c, i * stride + wi, j * stride + wj]
                    y[c, i, j] = acc * inv
    return out


def avgpool_backward(cnp.float32_t[:, :, ::1] dy, int size, int stride, int h, int w):
    cdef int C = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2]
    out = np.zeros((C, h, w), dtype=F32)
    cdef cnp.float32_t[:, :, ::1] dx = out
    cdef float inv = <float> (1.0 / (size * size))
    cdef int c, i, j, wi, wj
    with nogil:
        for wi in range(size):
            for wj in range(size):
                for c in range(C):
                    for i in range(ho):
                        for j in range(wo):
                            dx[c, i * stride + wi, j * stride + wj] = (
                                dx[c, i * stride + wi, j * stride + wj] + dy[c, i, j] * inv)
    return out

"""Numpy fallback kernels.

Reference semantics for both backends: every output element accumulates its
terms sequentially in (channel, kernel-row, kernel-col) order for conv, input
index order for fully-connected, and window row-major order for pooling, all
in float32. The loops below keep that per-element order while vectorizing
across output positions, so the compiled core can reproduce the exact bits
with plain sequential C loops.

Conv kernels take pre-padded inputs; padding/cropping is done by the caller.
"""

import numpy as np

F32 = np.float32


def conv2d_forward(xpad, w, b, stride):
    """xpad (C,Hp,Wp), w (F,C,KH,KW), b (F,) -> y (F,HO,WO)."""
    C, Hp, Wp = xpad.shape
    F, _, KH, KW = w.shape
    ho = (Hp - KH) // stride + 1
    wo = (Wp - KW) // stride + 1
    y = np.empty((F, ho, wo), dtype=F32)
    y[:] = b[:, None, None]
    for c in range(C):
        for kh in range(KH):
            for kw in range(KW):
                patch = xpad[c, kh : kh + stride * ho : stride, kw : kw + stride * wo : stride]
                y += w[:, c, kh, kw][:, None, None] * patch
    return y


def conv2d_backward_input(dy, w, stride, hp, wp):
    """dy (F,HO,WO), w (F,C,KH,KW) -> dxpad (C,Hp,Wp)."""
    F, ho, wo = dy.shape
    _, C, KH, KW = w.shape
    dxpad = np.zeros((C, hp, wp), dtype=F32)
    for f in range(F):
        for kh in range(KH):
            for kw in range(KW):
                view = dxpad[:, kh : kh + stride * ho : stride, kw : kw + stride * wo : stride]
                view += w[f, :, kh, kw][:, None, None] * dy[f]
    return dxpad


def conv2d_backward_weights(dy, xpad, stride, kh_size, kw_size):
    """dy (F,HO,WO), xpad (C,Hp,Wp) -> (dw (F,C,KH,KW), db (F,))."""
    F, ho, wo = dy.shape
    C = xpad.shape[0]
    dw = np.zeros((F, C, kh_size, kw_size), dtype=F32)
    db = np.zeros(F, dtype=F32)
    for i in range(ho):
        for j in range(wo):
            patch = xpad[:, i * stride : i * stride + kh_size, j * stride : j * stride + kw_size]
            dw += dy[:, i, j][:, None, None, None] * patch[None, :, :, :]
            db += dy[:, i, j]
    return dw, db


def fc_forward(x, w, b):
    """x (D,), w (O,D), b (O,) -> y (O,)."""
    y = b.copy()
    for d in range(x.shape[0]):
        y += w[:, d] * x[d]
    return y


def fc_backward_input(dy, w):
    """dy (O,), w (O,D) -> dx (D,)."""
    dx = np.zeros(w.shape[1], dtype=F32)
    for o in range(w.shape[0]):
        dx += w[o] * dy[o]
    return dx


def fc_backward_weights(dy, x):
    """dy (O,), x (D,) -> (dw (O,D), db (O,))."""
    return dy[:, None] * x[None, :], dy.copy()


def maxpool_forward(x, size, stride):
    """x (C,H,W) -> (y (C,HO,WO), idx (C,HO,WO) flat per-channel argmax).

    First-occurrence (window row-major) tie-break via strict >.
    """
    C, H, W = x.shape
    ho = (H - size) // stride + 1
    wo = (W - size) // stride + 1
    rows = (np.arange(ho) * stride)[:, None]
    cols = (np.arange(wo) * stride)[None, :]
    y = x[:, 0 : stride * ho : stride, 0 : stride * wo : stride].copy()
    idx = np.broadcast_to(rows * W + cols, (C, ho, wo)).copy()
    for wi in range(size):
        for wj in range(size):
            if wi == 0 and wj == 0:
                continue
            cand = x[:, wi : wi + stride * ho : stride, wj : wj + stride * wo : stride]
            cand_idx = (rows + wi) * W + (cols + wj)
            better = cand > y
            y = np.where(better, cand, y)
            idx = np.where(better, cand_idx, idx)
    return y, idx.astype(np.int64)


def maxpool_backward(dy, idx, h, w):
    """Scatter dy back to the argmax positions (row-major accumulation)."""
    C = dy.shape[0]
    dx = np.zeros((C, h * w), dtype=F32)
    for c in range(C):
        np.add.at(dx[c], idx[c].ravel(), dy[c].ravel())
    return dx.reshape(C, h, w)


def avgpool_forward(x, size, stride):
    """x (C,H,W) -> y (C,HO,WO); mean = row-major sum * (1/size^2)."""
    C, H, W = x.shape
    ho = (H - size) // stride + 1
    wo = (W - size) // stride + 1
    acc = np.zeros((C, ho, wo), dtype=F32)
    for wi in range(size):
        for wj in range(size):
            acc += x[:, wi : wi + stride * ho : stride, wj : wj + stride * wo : stride]
    return acc * F32(1.0 / (size * size))


def avgpool_backward(dy, size, stride, h, w):
    """Spread dy * (1/size^2) uniformly over each window."""
    C, ho, wo = dy.shape
    g = dy * F32(1.0 / (size * size))
    dx = np.zeros((C, h, w), dtype=F32)
    for wi in range(size):
        for wj in range(size):
            dx[:, wi : wi + stride * ho : stride, wj : wj + stride * wo : stride] += g
    return dx

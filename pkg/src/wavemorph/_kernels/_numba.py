"""numba-compiled kernels.

Convolutions pack each sample with an explicit im2col loop and hand the
product to BLAS through ``np.dot``; pooling and the dilated wavelet filters
are plain loops. Compiled functions are cached on disk.
"""
import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def _filter_last(x, taps, d):
    K, H, W = x.shape
    L = taps.size
    out = np.zeros_like(x)
    for k in range(K):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for t in range(L):
                    acc += taps[t] * x[k, i, (j - t * d) % W]
                out[k, i, j] = acc
    return out


@njit(cache=True)
def _filter_middle(x, taps, d):
    K, H, W = x.shape
    L = taps.size
    out = np.zeros_like(x)
    for k in range(K):
        for i in range(H):
            for t in range(L):
                src = (i - t * d) % H
                tap = taps[t]
                for j in range(W):
                    out[k, i, j] += tap * x[k, src, j]
    return out


def circular_filter(x, taps, dilation, axis):
    x = np.asarray(x)
    shape = x.shape
    nd = x.ndim
    axis = axis % nd
    if axis not in (nd - 1, nd - 2):
        raise ValueError("circular_filter works on one of the two trailing axes")
    x3 = np.ascontiguousarray(x.reshape((-1,) + shape[-2:]))
    taps = np.ascontiguousarray(taps, dtype=x3.dtype)
    if axis == nd - 1:
        out = _filter_last(x3, taps, int(dilation))
    else:
        out = _filter_middle(x3, taps, int(dilation))
    return out.reshape(shape)


@njit(cache=True)
def _im2col(x, k, col):
    C, H, W = x.shape
    p = k // 2
    for c in range(C):
        for dy in range(k):
            for dx in range(k):
                row = (c * k + dy) * k + dx
                for i in range(H):
                    ii = i + dy - p
                    base = i * W
                    if ii < 0 or ii >= H:
                        for j in range(W):
                            col[row, base + j] = 0.0
                        continue
                    for j in range(W):
                        jj = j + dx - p
                        if jj < 0 or jj >= W:
                            col[row, base + j] = 0.0
                        else:
                            col[row, base + j] = x[c, ii, jj]


@njit(cache=True)
def _col2im_add(col, k, dx):
    C, H, W = dx.shape
    p = k // 2
    for c in range(C):
        for dy in range(k):
            for kx in range(k):
                row = (c * k + dy) * k + kx
                for i in range(H):
                    ii = i + dy - p
                    if ii < 0 or ii >= H:
                        continue
                    base = i * W
                    for j in range(W):
                        jj = j + kx - p
                        if jj >= 0 and jj < W:
                            dx[c, ii, jj] += col[row, base + j]


@njit(cache=True)
def _conv_forward(x, w, b):
    B, C, H, W = x.shape
    N = w.shape[0]
    k = w.shape[2]
    wm = w.reshape(N, C * k * k)
    col = np.empty((C * k * k, H * W), dtype=x.dtype)
    out = np.empty((B, N, H, W), dtype=x.dtype)
    for s in range(B):
        _im2col(x[s], k, col)
        o = np.dot(wm, col)
        for n in range(N):
            bn = b[n]
            for i in range(H):
                for j in range(W):
                    out[s, n, i, j] = o[n, i * W + j] + bn
    return out


@njit(cache=True)
def _conv_backward(dout, x, w, need_dx):
    B, C, H, W = x.shape
    N = w.shape[0]
    k = w.shape[2]
    wm = w.reshape(N, C * k * k)
    wt = np.ascontiguousarray(wm.T)
    col = np.empty((C * k * k, H * W), dtype=x.dtype)
    dwm = np.zeros((N, C * k * k), dtype=x.dtype)
    db = np.zeros(N, dtype=x.dtype)
    if need_dx:
        dx = np.zeros_like(x)
    else:
        dx = np.zeros((0, 0, 0, 0), dtype=x.dtype)
    for s in range(B):
        _im2col(x[s], k, col)
        d = np.ascontiguousarray(dout[s]).reshape(N, H * W)
        dwm += np.dot(d, col.T)
        for n in range(N):
            acc = 0.0
            for q in range(H * W):
                acc += d[n, q]
            db[n] += acc
        if need_dx:
            dcol = np.dot(wt, d)
            _col2im_add(dcol, k, dx[s])
    return dx, dwm.reshape(w.shape), db


def conv2d_forward(x, w, b):
    """Stride-1 'same' cross-correlation, odd square kernel, zero padding."""
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    b = np.ascontiguousarray(b, dtype=x.dtype)
    return _conv_forward(x, w, b)


def conv2d_backward(dout, x, w, need_dx=True):
    x = np.ascontiguousarray(x)
    dout = np.ascontiguousarray(dout, dtype=x.dtype)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    dx, dw, db = _conv_backward(dout, x, w, bool(need_dx))
    return (dx if need_dx else None), dw, db


@njit(cache=True)
def _pool_forward(x):
    B, C, H, W = x.shape
    Hp = H // 2
    Wp = W // 2
    out = np.empty((B, C, Hp, Wp), dtype=x.dtype)
    idx = np.empty((B, C, Hp, Wp), dtype=np.int8)
    for s in range(B):
        for c in range(C):
            for i in range(Hp):
                for j in range(Wp):
                    best = x[s, c, 2 * i, 2 * j]
                    arg = 0
                    v = x[s, c, 2 * i, 2 * j + 1]
                    if v > best:
                        best = v
                        arg = 1
                    v = x[s, c, 2 * i + 1, 2 * j]
                    if v > best:
                        best = v
                        arg = 2
                    v = x[s, c, 2 * i + 1, 2 * j + 1]
                    if v > best:
                        best = v
                        arg = 3
                    out[s, c, i, j] = best
                    idx[s, c, i, j] = arg
    return out, idx


@njit(cache=True)
def _pool_backward(dout, idx):
    B, C, Hp, Wp = dout.shape
    dx = np.zeros((B, C, 2 * Hp, 2 * Wp), dtype=dout.dtype)
    for s in range(B):
        for c in range(C):
            for i in range(Hp):
                for j in range(Wp):
                    a = idx[s, c, i, j]
                    dx[s, c, 2 * i + a // 2, 2 * j + a % 2] = dout[s, c, i, j]
    return dx


def maxpool2_forward(x):
    """2x2/stride-2 max pool; ties resolve to the first window element in row-major order."""
    return _pool_forward(np.ascontiguousarray(x))


def maxpool2_backward(dout, idx):
    return _pool_backward(np.ascontiguousarray(dout), np.ascontiguousarray(idx))

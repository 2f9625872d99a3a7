"""Pure-numpy kernels (vectorised; no compilation)."""
import numpy as np

NAME = "numpy"


def circular_filter(x, taps, dilation, axis):
    # out[i] = sum_t taps[t] * x[(i - t*dilation) mod n]
    out = np.zeros_like(x)
    for t, tap in enumerate(taps):
        out += tap * np.roll(x, t * dilation, axis=axis)
    return out


def conv2d_forward(x, w, b):
    """Stride-1 'same' cross-correlation, odd square kernel, zero padding."""
    B, C, H, W = x.shape
    N, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    acc = np.zeros((N, B, H, W), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            acc += np.tensordot(w[:, :, dy, dx], xp[:, :, dy:dy + H, dx:dx + W], axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3) + b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(dout, x, w, need_dx=True):
    B, C, H, W = x.shape
    N, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp) if need_dx else None
    for dy in range(k):
        for dx in range(k):
            window = xp[:, :, dy:dy + H, dx:dx + W]
            dw[:, :, dy, dx] = np.tensordot(dout, window, axes=([0, 2, 3], [0, 2, 3]))
            if need_dx:
                # (B, H, W, C) -> (B, C, H, W)
                dxp[:, :, dy:dy + H, dx:dx + W] += np.tensordot(
                    dout, w[:, :, dy, dx], axes=([1], [0])
                ).transpose(0, 3, 1, 2)
    db = dout.sum(axis=(0, 2, 3))
    dx_out = np.ascontiguousarray(dxp[:, :, p:p + H, p:p + W]) if need_dx else None
    return dx_out, dw, db


def maxpool2_forward(x):
    """2x2/stride-2 max pool; ties resolve to the first window element in row-major order."""
    B, C, H, W = x.shape
    win = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    idx = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(dout, idx):
    B, C, Hp, Wp = dout.shape
    onehot = idx[..., None] == np.arange(4, dtype=np.int8)
    win = onehot * dout[..., None]
    dx = win.reshape(B, C, Hp, Wp, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * Hp, 2 * Wp)
    return np.ascontiguousarray(dx)

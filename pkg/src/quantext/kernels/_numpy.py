"""Pure numpy implementations of the hot-loop kernels.

These are the reference semantics for the compiled extension and the fallback
when it is unavailable. All convolutions use same-padding with odd kernel
widths; layouts are channels-last:

    conv1d:     x (B, n, c_in),        w (kw, c_in, c_out),      b (c_out,)
    conv2d:     x (B, H, W, c_in),     w (kh, kw, c_in, c_out),  b (c_out,)
    maxpool1d:  x (B, n, c) -> y (B, ceil(n/window), c) plus argmax indices
    span_outer: s (B, n, d), e (B, n, d) -> (B, n, n, d) elementwise products

Shape validation happens in the calling layer; kernels assume valid inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    kw, c_in, c_out = w.shape
    n = x.shape[1]
    half = kw // 2
    xp = np.pad(x, ((0, 0), (half, half), (0, 0)))
    # (B, n, c_in, kw) -> (B, n, kw*c_in)
    win = sliding_window_view(xp, kw, axis=1)
    cols = win.transpose(0, 1, 3, 2).reshape(x.shape[0], n, kw * c_in)
    y = cols @ w.reshape(kw * c_in, c_out)
    y += b
    return y


def conv1d_backward(x, w, gy):
    kw, c_in, c_out = w.shape
    bsz, n, _ = x.shape
    half = kw // 2
    xp = np.pad(x, ((0, 0), (half, half), (0, 0)))
    win = sliding_window_view(xp, kw, axis=1)  # (B, n, c_in, kw)
    gw = np.tensordot(win, gy, axes=((0, 1), (0, 1)))  # (c_in, kw, c_out)
    gw = gw.transpose(1, 0, 2).copy()
    gb = gy.sum(axis=(0, 1), dtype=np.float64).astype(w.dtype)
    gxp = np.zeros_like(xp)
    for t in range(kw):
        gxp[:, t : t + n, :] += gy @ w[t].T
    gx = gxp[:, half : half + n, :] if half else gxp
    return np.ascontiguousarray(gx), gw, gb


def conv2d_forward(x, w, b):
    kh, kw, c_in, c_out = w.shape
    bsz, h, wd, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (B, h, wd, c_in, kh, kw)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(bsz, h, wd, kh * kw * c_in)
    y = cols @ w.reshape(kh * kw * c_in, c_out)
    y += b
    return y


def conv2d_backward(x, w, gy):
    kh, kw, c_in, c_out = w.shape
    bsz, h, wd, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    gw = np.tensordot(win, gy, axes=((0, 1, 2), (0, 1, 2)))  # (c_in, kh, kw, c_out)
    gw = gw.transpose(1, 2, 0, 3).copy()
    gb = gy.sum(axis=(0, 1, 2), dtype=np.float64).astype(w.dtype)
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i : i + h, j : j + wd, :] += gy @ w[i, j].T
    gx = gxp[:, ph : ph + h, pw : pw + wd, :]
    return np.ascontiguousarray(gx), gw, gb


def maxpool1d_forward(x, window: int):
    bsz, n, c = x.shape
    m = -(-n // window)
    pad = m * window - n
    if pad:
        fill = np.full((bsz, pad, c), -np.inf, dtype=x.dtype)
        xw = np.concatenate([x, fill], axis=1)
    else:
        xw = x
    xw = xw.reshape(bsz, m, window, c)
    local = xw.argmax(axis=2)
    y = np.take_along_axis(xw, local[:, :, None, :], axis=2)[:, :, 0, :]
    idx = local + (np.arange(m, dtype=np.int64) * window)[None, :, None]
    return np.ascontiguousarray(y), idx


def maxpool1d_backward(idx, gy, n: int):
    bsz, m, c = gy.shape
    gx = np.zeros((bsz, n, c), dtype=gy.dtype)
    # windows are disjoint, so each input position receives at most one write
    np.put_along_axis(gx, idx, gy, axis=1)
    return gx


def span_outer_forward(s, e):
    return np.ascontiguousarray(s[:, :, None, :] * e[:, None, :, :])


def span_outer_backward(s, e, g):
    gs = np.einsum("bijk,bjk->bik", g, e)
    ge = np.einsum("bijk,bik->bjk", g, s)
    return np.ascontiguousarray(gs), np.ascontiguousarray(ge)

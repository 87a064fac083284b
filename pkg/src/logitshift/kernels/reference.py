"""Numpy fallback for the conv/pool kernels.

Forward paths accumulate in the same per-element order as the compiled
backend (bias first, then kernel taps in (dy, dx, in_channel) order), so both
backends produce bitwise-identical forward activations.  Backward paths use
numpy reductions whose summation order differs from the compiled loops; they
agree to float64 roundoff, which the kernel tests pin down.

Activation layout is (rows, cols, channels), float64, C-contiguous.
Convolution weights are (out_channels, k_rows, k_cols, in_channels).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((padding, padding), (padding, padding), (0, 0)))


def conv2d_forward(x, w, b, stride: int, padding: int) -> np.ndarray:
    """Cross-correlation with zero padding; out[i,j,o] = b[o] + sum x*w."""
    kh, kw = w.shape[1], w.shape[2]
    xp = _pad(x, padding)
    h, wid = xp.shape[0], xp.shape[1]
    out_h = (h - kh) // stride + 1
    out_w = (wid - kw) // stride + 1
    out = np.empty((out_h, out_w, w.shape[0]), dtype=np.float64)
    out[:] = b
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[dy : dy + (out_h - 1) * stride + 1 : stride,
                       dx : dx + (out_w - 1) * stride + 1 : stride, :]
            for ci in range(w.shape[3]):
                out += patch[:, :, ci, None] * w[None, None, :, dy, dx, ci]
    return out


def conv2d_backward(x, w, stride: int, padding: int, grad_out):
    """Gradients of conv2d_forward wrt input, weights and bias."""
    kh, kw = w.shape[1], w.shape[2]
    out_h, out_w = grad_out.shape[0], grad_out.shape[1]
    xp = _pad(x, padding)
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    db = grad_out.sum(axis=(0, 1))
    for dy in range(kh):
        for dx in range(kw):
            rows = slice(dy, dy + (out_h - 1) * stride + 1, stride)
            cols = slice(dx, dx + (out_w - 1) * stride + 1, stride)
            patch = xp[rows, cols, :]
            # dw[o,dy,dx,c] = sum_ij grad_out[i,j,o] * patch[i,j,c]
            dw[:, dy, dx, :] = np.tensordot(grad_out, patch, axes=([0, 1], [0, 1]))
            dxp[rows, cols, :] += grad_out @ w[:, dy, dx, :]
    if padding:
        dx_ = dxp[padding:-padding, padding:-padding, :]
    else:
        dx_ = dxp
    return np.ascontiguousarray(dx_), dw, db


def maxpool_forward(x, win_h: int, win_w: int, stride_h: int, stride_w: int):
    """Max pooling; returns (values, argmax_rows, argmax_cols).

    Argmax coordinates are absolute input positions; ties resolve to the
    first maximum in row-major window order.
    """
    windows = sliding_window_view(x, (win_h, win_w), axis=(0, 1))
    windows = windows[::stride_h, ::stride_w]  # (out_h, out_w, C, win_h, win_w)
    out_h, out_w, chans = windows.shape[:3]
    flat = windows.reshape(out_h, out_w, chans, win_h * win_w)
    k = flat.argmax(axis=3)
    values = np.take_along_axis(flat, k[..., None], axis=3)[..., 0]
    base_r = (np.arange(out_h) * stride_h)[:, None, None]
    base_c = (np.arange(out_w) * stride_w)[None, :, None]
    arg_rows = base_r + k // win_w
    arg_cols = base_c + k % win_w
    return (
        np.ascontiguousarray(values),
        np.ascontiguousarray(arg_rows, dtype=np.int64),
        np.ascontiguousarray(arg_cols, dtype=np.int64),
    )


def maxpool_backward(in_h: int, in_w: int, arg_rows, arg_cols, grad_out):
    """Scatter grad_out back to the recorded argmax positions."""
    chans = grad_out.shape[2]
    dx = np.zeros((in_h, in_w, chans), dtype=np.float64)
    ch_idx = np.broadcast_to(np.arange(chans), grad_out.shape)
    np.add.at(dx, (arg_rows.ravel(), arg_cols.ravel(), ch_idx.ravel()), grad_out.ravel())
    return dx

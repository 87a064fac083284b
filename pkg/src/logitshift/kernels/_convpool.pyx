# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled conv/pool kernels.

Forward accumulation order (bias first, then taps in (dy, dx, in_channel)
order) matches kernels/reference.py exactly so both backends produce
bitwise-identical forward activations.  Inputs may be read-only arrays
(immutable tensors), hence the const memoryviews.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def _padded(x, int padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    xp = np.zeros((x.shape[0] + 2 * padding, x.shape[1] + 2 * padding, x.shape[2]))
    xp[padding:padding + x.shape[0], padding:padding + x.shape[1], :] = x
    return xp


def conv2d_forward(x, w, b, int stride, int padding):
    cdef const double[:, :, ::1] xv = _padded(x, padding)
    cdef const double[:, :, :, ::1] wv = np.ascontiguousarray(w)
    cdef const double[::1] bv = np.ascontiguousarray(b)
    cdef int kh = wv.shape[1], kw = wv.shape[2]
    cdef int cin = wv.shape[3], cout = wv.shape[0]
    cdef int out_h = (xv.shape[0] - kh) // stride + 1
    cdef int out_w = (xv.shape[1] - kw) // stride + 1
    out = np.empty((out_h, out_w, cout))
    cdef double[:, :, ::1] ov = out
    cdef int io, jo, co, dy, dx, ci, r, c
    cdef double acc
    with nogil:
        for io in range(out_h):
            for jo in range(out_w):
                for co in range(cout):
                    acc = bv[co]
                    for dy in range(kh):
                        r = io * stride + dy
                        for dx in range(kw):
                            c = jo * stride + dx
                            for ci in range(cin):
                                acc += xv[r, c, ci] * wv[co, dy, dx, ci]
                    ov[io, jo, co] = acc
    return out


def conv2d_backward(x, w, int stride, int padding, grad_out):
    cdef const double[:, :, ::1] xv = _padded(x, padding)
    cdef const double[:, :, :, ::1] wv = np.ascontiguousarray(w)
    cdef const double[:, :, ::1] gv = np.ascontiguousarray(grad_out)
    cdef int kh = wv.shape[1], kw = wv.shape[2]
    cdef int cin = wv.shape[3], cout = wv.shape[0]
    cdef int out_h = gv.shape[0], out_w = gv.shape[1]
    dxp = np.zeros((xv.shape[0], xv.shape[1], xv.shape[2]))
    dw = np.zeros((cout, kh, kw, cin))
    db = np.zeros(cout)
    cdef double[:, :, ::1] dxv = dxp
    cdef double[:, :, :, ::1] dwv = dw
    cdef double[::1] dbv = db
    cdef int io, jo, co, dy, dx, ci, r, c
    cdef double g
    with nogil:
        for io in range(out_h):
            for jo in range(out_w):
                for co in range(cout):
                    g = gv[io, jo, co]
                    dbv[co] += g
                    for dy in range(kh):
                        r = io * stride + dy
                        for dx in range(kw):
                            c = jo * stride + dx
                            for ci in range(cin):
                                dwv[co, dy, dx, ci] += xv[r, c, ci] * g
                                dxv[r, c, ci] += wv[co, dy, dx, ci] * g
    if padding:
        return np.ascontiguousarray(dxp[padding:-padding, padding:-padding, :]), dw, db
    return dxp, dw, db


def maxpool_forward(x, int win_h, int win_w, int stride_h, int stride_w):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x)
    cdef int h = xv.shape[0], wid = xv.shape[1], chans = xv.shape[2]
    cdef int out_h = (h - win_h) // stride_h + 1
    cdef int out_w = (wid - win_w) // stride_w + 1
    out = np.empty((out_h, out_w, chans))
    arg_r = np.empty((out_h, out_w, chans), dtype=np.int64)
    arg_c = np.empty((out_h, out_w, chans), dtype=np.int64)
    cdef double[:, :, ::1] ov = out
    cdef cnp.int64_t[:, :, ::1] rv = arg_r
    cdef cnp.int64_t[:, :, ::1] cv = arg_c
    cdef int io, jo, ch, dy, dx, r0, c0, br, bc
    cdef double best, v
    with nogil:
        for io in range(out_h):
            r0 = io * stride_h
            for jo in range(out_w):
                c0 = jo * stride_w
                for ch in range(chans):
                    best = xv[r0, c0, ch]
                    br = r0
                    bc = c0
                    for dy in range(win_h):
                        for dx in range(win_w):
                            v = xv[r0 + dy, c0 + dx, ch]
                            if v > best:
                                best = v
                                br = r0 + dy
                                bc = c0 + dx
                    ov[io, jo, ch] = best
                    rv[io, jo, ch] = br
                    cv[io, jo, ch] = bc
    return out, arg_r, arg_c


def maxpool_backward(int in_h, int in_w, arg_rows, arg_cols, grad_out):
    cdef const cnp.int64_t[:, :, ::1] rv = np.ascontiguousarray(arg_rows)
    cdef const cnp.int64_t[:, :, ::1] cv = np.ascontiguousarray(arg_cols)
    cdef const double[:, :, ::1] gv = np.ascontiguousarray(grad_out)
    cdef int out_h = gv.shape[0], out_w = gv.shape[1], chans = gv.shape[2]
    dx = np.zeros((in_h, in_w, chans))
    cdef double[:, :, ::1] dxv = dx
    cdef int io, jo, ch
    with nogil:
        for io in range(out_h):
            for jo in range(out_w):
                for ch in range(chans):
                    dxv[rv[io, jo, ch], cv[io, jo, ch], ch] += gv[io, jo, ch]
    return dx

# cython: language_level=3
"""Compiled float32 twins of the numpy kernels.

Same contracts as quantext.kernels._numpy: channels-last layouts,
same-padding convolutions with odd widths, maxpool ties to the first index.
Weight and bias gradients accumulate in double before the final float32
cast, matching the numpy implementation's wide accumulators.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef cnp.float32_t f32
ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


def conv1d_forward(const f32[:, :, ::1] x, const f32[:, :, ::1] w,
                   const f32[::1] b):
    cdef Py_ssize_t bsz = x.shape[0], n = x.shape[1], ci = x.shape[2]
    cdef Py_ssize_t kw = w.shape[0], co = w.shape[2]
    cdef Py_ssize_t half = kw // 2
    cdef Py_ssize_t bt, i, t, ic, oc, src
    cdef f32 acc
    # (kw, ci, co) -> (kw, co, ci) so the reduction axis is contiguous
    wt_arr = np.ascontiguousarray(np.asarray(w).transpose(0, 2, 1))
    cdef f32[:, :, ::1] wt = wt_arr
    y_arr = np.empty((bsz, n, co), dtype=np.float32)
    cdef f32[:, :, ::1] y = y_arr
    for bt in range(bsz):
        for i in range(n):
            for oc in range(co):
                acc = b[oc]
                for t in range(kw):
                    src = i + t - half
                    if src < 0 or src >= n:
                        continue
                    for ic in range(ci):
                        acc += x[bt, src, ic] * wt[t, oc, ic]
                y[bt, i, oc] = acc
    return y_arr


def conv1d_backward(const f32[:, :, ::1] x, const f32[:, :, ::1] w,
                    const f32[:, :, ::1] gy):
    cdef Py_ssize_t bsz = x.shape[0], n = x.shape[1], ci = x.shape[2]
    cdef Py_ssize_t kw = w.shape[0], co = w.shape[2]
    cdef Py_ssize_t half = kw // 2
    cdef Py_ssize_t bt, i, t, ic, oc, src
    cdef f32 g, acc
    # gx is a correlation of gy with the kernel flipped along its width,
    # so it reuses the forward loop shape with a contiguous reduction
    wflip_arr = np.ascontiguousarray(np.asarray(w)[::-1])
    cdef f32[:, :, ::1] wflip = wflip_arr
    gx_arr = np.empty((bsz, n, ci), dtype=np.float32)
    gwt_acc = np.zeros((kw, co, ci), dtype=np.float64)
    gb_acc = np.zeros(co, dtype=np.float64)
    cdef f32[:, :, ::1] gx = gx_arr
    cdef f64[:, :, ::1] gwt = gwt_acc
    cdef f64[::1] gb = gb_acc
    for bt in range(bsz):
        for i in range(n):
            for ic in range(ci):
                acc = 0.0
                for t in range(kw):
                    src = i + t - half
                    if src < 0 or src >= n:
                        continue
                    for oc in range(co):
                        acc += gy[bt, src, oc] * wflip[t, ic, oc]
                gx[bt, i, ic] = acc
    # per-batch float32 partials keep the inner loop SIMD friendly while the
    # cross-batch reduction stays in double
    gwl_arr = np.zeros((kw, co, ci), dtype=np.float32)
    cdef f32[:, :, ::1] gwl = gwl_arr
    for bt in range(bsz):
        gwl_arr.fill(0.0)
        for i in range(n):
            for oc in range(co):
                g = gy[bt, i, oc]
                gb[oc] += g
                for t in range(kw):
                    src = i + t - half
                    if src < 0 or src >= n:
                        continue
                    for ic in range(ci):
                        gwl[t, oc, ic] += x[bt, src, ic] * g
        for t in range(kw):
            for oc in range(co):
                for ic in range(ci):
                    gwt[t, oc, ic] += gwl[t, oc, ic]
    gw = gwt_acc.transpose(0, 2, 1).astype(np.float32)
    return (gx_arr, np.ascontiguousarray(gw), gb_acc.astype(np.float32))


def conv2d_forward(const f32[:, :, :, ::1] x, const f32[:, :, :, ::1] w,
                   const f32[::1] b):
    cdef Py_ssize_t bsz = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t ci = x.shape[3], kh = w.shape[0], kw = w.shape[1]
    cdef Py_ssize_t co = w.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t bt, i, j, u, v, ic, oc, si, sj
    cdef f32 acc
    wt_arr = np.ascontiguousarray(np.asarray(w).transpose(0, 1, 3, 2))
    cdef f32[:, :, :, ::1] wt = wt_arr
    y_arr = np.empty((bsz, h, wd, co), dtype=np.float32)
    cdef f32[:, :, :, ::1] y = y_arr
    for bt in range(bsz):
        for i in range(h):
            for j in range(wd):
                for oc in range(co):
                    acc = b[oc]
                    for u in range(kh):
                        si = i + u - ph
                        if si < 0 or si >= h:
                            continue
                        for v in range(kw):
                            sj = j + v - pw
                            if sj < 0 or sj >= wd:
                                continue
                            for ic in range(ci):
                                acc += x[bt, si, sj, ic] * wt[u, v, oc, ic]
                    y[bt, i, j, oc] = acc
    return y_arr


def conv2d_backward(const f32[:, :, :, ::1] x, const f32[:, :, :, ::1] w,
                    const f32[:, :, :, ::1] gy):
    cdef Py_ssize_t bsz = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t ci = x.shape[3], kh = w.shape[0], kw = w.shape[1]
    cdef Py_ssize_t co = w.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t bt, i, j, u, v, ic, oc, si, sj
    cdef f32 g, acc
    wflip_arr = np.ascontiguousarray(np.asarray(w)[::-1, ::-1])
    cdef f32[:, :, :, ::1] wflip = wflip_arr
    gx_arr = np.empty((bsz, h, wd, ci), dtype=np.float32)
    gwt_acc = np.zeros((kh, kw, co, ci), dtype=np.float64)
    gb_acc = np.zeros(co, dtype=np.float64)
    cdef f32[:, :, :, ::1] gx = gx_arr
    cdef f64[:, :, :, ::1] gwt = gwt_acc
    cdef f64[::1] gb = gb_acc
    for bt in range(bsz):
        for i in range(h):
            for j in range(wd):
                for ic in range(ci):
                    acc = 0.0
                    for u in range(kh):
                        si = i + u - ph
                        if si < 0 or si >= h:
                            continue
                        for v in range(kw):
                            sj = j + v - pw
                            if sj < 0 or sj >= wd:
                                continue
                            for oc in range(co):
                                acc += gy[bt, si, sj, oc] * wflip[u, v, ic, oc]
                    gx[bt, i, j, ic] = acc
    gwl_arr = np.zeros((kh, kw, co, ci), dtype=np.float32)
    cdef f32[:, :, :, ::1] gwl = gwl_arr
    for bt in range(bsz):
        gwl_arr.fill(0.0)
        for i in range(h):
            for j in range(wd):
                for oc in range(co):
                    g = gy[bt, i, j, oc]
                    gb[oc] += g
                    for u in range(kh):
                        si = i + u - ph
                        if si < 0 or si >= h:
                            continue
                        for v in range(kw):
                            sj = j + v - pw
                            if sj < 0 or sj >= wd:
                                continue
                            for ic in range(ci):
                                gwl[u, v, oc, ic] += x[bt, si, sj, ic] * g
        for u in range(kh):
            for v in range(kw):
                for oc in range(co):
                    for ic in range(ci):
                        gwt[u, v, oc, ic] += gwl[u, v, oc, ic]
    gw = gwt_acc.transpose(0, 1, 3, 2).astype(np.float32)
    return (gx_arr, np.ascontiguousarray(gw), gb_acc.astype(np.float32))


def maxpool1d_forward(const f32[:, :, ::1] x, int window):
    cdef Py_ssize_t bsz = x.shape[0], n = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t m = (n + window - 1) // window
    cdef Py_ssize_t bt, p, k, ch, start, stop, best
    cdef f32 val, cur
    y_arr = np.empty((bsz, m, c), dtype=np.float32)
    idx_arr = np.empty((bsz, m, c), dtype=np.int64)
    cdef f32[:, :, ::1] y = y_arr
    cdef i64[:, :, ::1] idx = idx_arr
    for bt in range(bsz):
        for p in range(m):
            start = p * window
            stop = start + window
            if stop > n:
                stop = n
            for ch in range(c):
                best = start
                val = x[bt, start, ch]
                for k in range(start + 1, stop):
                    cur = x[bt, k, ch]
                    if cur > val:
                        val = cur
                        best = k
                y[bt, p, ch] = val
                idx[bt, p, ch] = best
    return y_arr, idx_arr


def maxpool1d_backward(const i64[:, :, ::1] idx, const f32[:, :, ::1] gy,
                       int n):
    cdef Py_ssize_t bsz = gy.shape[0], m = gy.shape[1], c = gy.shape[2]
    cdef Py_ssize_t bt, p, ch
    gx_arr = np.zeros((bsz, n, c), dtype=np.float32)
    cdef f32[:, :, ::1] gx = gx_arr
    for bt in range(bsz):
        for p in range(m):
            for ch in range(c):
                gx[bt, idx[bt, p, ch], ch] += gy[bt, p, ch]
    return gx_arr


def span_outer_forward(const f32[:, :, ::1] s, const f32[:, :, ::1] e):
    cdef Py_ssize_t bsz = s.shape[0], n = s.shape[1], d = s.shape[2]
    cdef Py_ssize_t bt, i, j, k
    out_arr = np.empty((bsz, n, n, d), dtype=np.float32)
    cdef f32[:, :, :, ::1] out = out_arr
    for bt in range(bsz):
        for i in range(n):
            for j in range(n):
                for k in range(d):
                    out[bt, i, j, k] = s[bt, i, k] * e[bt, j, k]
    return out_arr


def span_outer_backward(const f32[:, :, ::1] s, const f32[:, :, ::1] e,
                        const f32[:, :, :, ::1] g):
    cdef Py_ssize_t bsz = s.shape[0], n = s.shape[1], d = s.shape[2]
    cdef Py_ssize_t bt, i, j, k
    gs_arr = np.zeros((bsz, n, d), dtype=np.float32)
    ge_arr = np.zeros((bsz, n, d), dtype=np.float32)
    cdef f32[:, :, ::1] gs = gs_arr
    cdef f32[:, :, ::1] ge = ge_arr
    # one sweep over the (i, j) grid; both updates are contiguous in k
    for bt in range(bsz):
        for i in range(n):
            for j in range(n):
                for k in range(d):
                    gs[bt, i, k] += g[bt, i, j, k] * e[bt, j, k]
                    ge[bt, j, k] += g[bt, i, j, k] * s[bt, i, k]
    return gs_arr, ge_arr

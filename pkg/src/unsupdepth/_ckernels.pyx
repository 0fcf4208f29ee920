# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], hp = x.shape[2], wp = x.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // sh + 1, wo = (wp - kw) // sw + 1
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c * kh * kw, ho * wo), dtype=dtype)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t b, ci, i, j, oy, ox, row, y0
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ci * kh + i) * kw + j
                        for oy in range(ho):
                            y0 = oy * sh + i
                            for ox in range(wo):
                                o[b, row, oy * wo + ox] = x[b, ci, y0, ox * sw + j]
    return out


def col2im(real[:, :, ::1] cols, int c, int hp, int wp, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t ho = (hp - kh) // sh + 1, wo = (wp - kw) // sw + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ci, i, j, oy, ox, row, y0
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ci * kh + i) * kw + j
                        for oy in range(ho):
                            y0 = oy * sh + i
                            for ox in range(wo):
                                o[b, ci, y0, ox * sw + j] += cols[b, row, oy * wo + ox]
    return out


def maxpool_forward(real[:, :, :, ::1] x, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], hp = x.shape[2], wp = x.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // sh + 1, wo = (wp - kw) // sw + 1
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c, ho, wo), dtype=dtype)
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef real[:, :, :, ::1] o = out
    cdef cnp.int64_t[:, :, :, ::1] a = arg
    cdef Py_ssize_t b, ci, oy, ox, i, j, best_idx
    cdef real best, v
    with nogil:
        for b in range(n):
            for ci in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        best = x[b, ci, oy * sh, ox * sw]
                        best_idx = (oy * sh) * wp + ox * sw
                        for i in range(kh):
                            for j in range(kw):
                                v = x[b, ci, oy * sh + i, ox * sw + j]
                                # strict '>' keeps the first maximum in scan order
                                if v > best:
                                    best = v
                                    best_idx = (oy * sh + i) * wp + ox * sw + j
                        o[b, ci, oy, ox] = best
                        a[b, ci, oy, ox] = best_idx
    return out, arg


def maxpool_backward(real[:, :, :, ::1] g, cnp.int64_t[:, :, :, ::1] arg, int hp, int wp):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], ho = g.shape[2], wo = g.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, hp * wp), dtype=dtype)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t b, ci, oy, ox
    with nogil:
        for b in range(n):
            for ci in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        o[b, ci, arg[b, ci, oy, ox]] += g[b, ci, oy, ox]
    return out.reshape(n, c, hp, wp)


def warp_forward(real[:, :, :, ::1] right, real[:, :, ::1] disp):
    cdef Py_ssize_t n = right.shape[0], c = right.shape[1], h = right.shape[2], w = right.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    valid = np.zeros((n, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    cdef real[:, :, ::1] m = valid
    cdef Py_ssize_t b, ci, y, x, x0, x1
    cdef double xs, a
    with nogil:
        for b in range(n):
            for y in range(h):
                for x in range(w):
                    xs = x + <double>disp[b, y, x]
                    if xs < 0.0 or xs > w - 1:
                        continue
                    x0 = <Py_ssize_t>floor(xs)
                    a = xs - x0
                    x1 = x0 + 1 if x0 < w - 1 else x0
                    m[b, y, x] = 1
                    for ci in range(c):
                        o[b, ci, y, x] = <real>((1.0 - a) * right[b, ci, y, x0] + a * right[b, ci, y, x1])
    return out, valid


def warp_backward(real[:, :, :, ::1] right, real[:, :, ::1] disp, real[:, :, :, ::1] grad):
    cdef Py_ssize_t n = right.shape[0], c = right.shape[1], h = right.shape[2], w = right.shape[3]
    dtype = np.float32 if real is float else np.float64
    g_right = np.zeros((n, c, h, w), dtype=dtype)
    g_disp = np.zeros((n, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] gr = g_right
    cdef real[:, :, ::1] gd = g_disp
    cdef Py_ssize_t b, ci, y, x, x0, x1
    cdef double xs, a, acc, go
    with nogil:
        for b in range(n):
            for y in range(h):
                for x in range(w):
                    xs = x + <double>disp[b, y, x]
                    if xs < 0.0 or xs > w - 1:
                        continue
                    x0 = <Py_ssize_t>floor(xs)
                    a = xs - x0
                    x1 = x0 + 1 if x0 < w - 1 else x0
                    acc = 0.0
                    for ci in range(c):
                        go = grad[b, ci, y, x]
                        gr[b, ci, y, x0] += <real>((1.0 - a) * go)
                        gr[b, ci, y, x1] += <real>(a * go)
                        acc = acc + go * (<double>right[b, ci, y, x1] - <double>right[b, ci, y, x0])
                    gd[b, y, x] = <real>acc
    return g_right, g_disp


def hs_redblack(double[:, ::1] d, double[:, ::1] num, double[:, ::1] diag,
                double gamma, int max_iter, double tol):
    """Red-black Gauss-Seidel on (diag + gamma*n_p) D_p = num_p + gamma * sum_q D_q.

    Updates ``d`` in place; returns (sweeps, last max change).
    """
    cdef Py_ssize_t h = d.shape[0], w = d.shape[1]
    cdef Py_ssize_t it, colour, i, j
    cdef double s, cnt, den, new, change = 0.0
    cdef int sweeps = 0
    with nogil:
        for it in range(max_iter):
            change = 0.0
            for colour in range(2):
                for i in range(h):
                    for j in range(w):
                        if (i + j) % 2 != colour:
                            continue
                        s = 0.0
                        cnt = 0.0
                        if i > 0:
                            s = s + d[i - 1, j]
                            cnt = cnt + 1.0
                        if i < h - 1:
                            s = s + d[i + 1, j]
                            cnt = cnt + 1.0
                        if j > 0:
                            s = s + d[i, j - 1]
                            cnt = cnt + 1.0
                        if j < w - 1:
                            s = s + d[i, j + 1]
                            cnt = cnt + 1.0
                        den = diag[i, j] + gamma * cnt
                        if den <= 0.0:
                            continue
                        new = (num[i, j] + gamma * s) / den
                        if fabs(new - d[i, j]) > change:
                            change = fabs(new - d[i, j])
                        d[i, j] = new
            sweeps += 1
            if change < tol:
                break
    return sweeps, change

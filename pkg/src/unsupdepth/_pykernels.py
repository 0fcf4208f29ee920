"""Pure-numpy versions of the inner loops in ``_ckernels.pyx``.

Same signatures and the same floating-point operation order where it matters,
so both backends agree to rounding (bitwise for the red-black solver).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, kh, kw, sh, sw):
    # (N, C, Ho, Wo, kh, kw) strided view, no copy
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]


def im2col(x, kh, kw, sh, sw):
    n, c = x.shape[:2]
    win = _windows(x, kh, kw, sh, sw)
    ho, wo = win.shape[2:4]
    # rows ordered (c, i, j); columns (oy, ox)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols)


def col2im(cols, c, hp, wp, kh, kw, sh, sw):
    n = cols.shape[0]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    blocks = cols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += blocks[:, :, i, j]
    return out


def maxpool_forward(x, kh, kw, sh, sw):
    n, c, hp, wp = x.shape
    win = _windows(x, kh, kw, sh, sw)
    ho, wo = win.shape[2:4]
    flat = win.reshape(n, c, ho, wo, kh * kw)
    # np.argmax returns the first maximum in scan order
    local = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    li, lj = np.divmod(local, kw)
    oy = np.arange(ho)[:, None] * sh
    ox = np.arange(wo)[None, :] * sw
    arg = ((oy + li) * wp + ox + lj).astype(np.int64)
    return np.ascontiguousarray(out), arg


def maxpool_backward(g, arg, hp, wp):
    n, c = g.shape[:2]
    out = np.zeros((n * c, hp * wp), dtype=g.dtype)
    rows = np.repeat(np.arange(n * c), g.shape[2] * g.shape[3])
    np.add.at(out, (rows, arg.reshape(-1)), g.reshape(-1))
    return out.reshape(n, c, hp, wp)


def _warp_coords(disp, w):
    xs = np.arange(w, dtype=np.float64)[None, None, :] + disp.astype(np.float64)
    valid = (xs >= 0.0) & (xs <= w - 1)
    xs_safe = np.where(valid, xs, 0.0)
    x0 = np.floor(xs_safe).astype(np.int64)
    a = xs_safe - x0
    x1 = np.where(x0 < w - 1, x0 + 1, x0)
    return valid, x0, x1, a


def warp_forward(right, disp):
    n, c, h, w = right.shape
    valid, x0, x1, a = _warp_coords(disp, w)
    r = right.astype(np.float64)
    v0 = np.take_along_axis(r, np.broadcast_to(x0[:, None], r.shape), axis=3)
    v1 = np.take_along_axis(r, np.broadcast_to(x1[:, None], r.shape), axis=3)
    out = (1.0 - a[:, None]) * v0 + a[:, None] * v1
    out = np.where(valid[:, None], out, 0.0).astype(right.dtype)
    return out, valid.astype(right.dtype)


def warp_backward(right, disp, grad):
    n, c, h, w = right.shape
    valid, x0, x1, a = _warp_coords(disp, w)
    r = right.astype(np.float64)
    go = np.where(valid[:, None], grad.astype(np.float64), 0.0)
    v0 = np.take_along_axis(r, np.broadcast_to(x0[:, None], r.shape), axis=3)
    v1 = np.take_along_axis(r, np.broadcast_to(x1[:, None], r.shape), axis=3)
    g_disp = np.sum(go * (v1 - v0), axis=1)

    g_right = np.zeros((n * c * h, w), dtype=np.float64)
    rows = np.broadcast_to(np.arange(n * c * h).reshape(n, c, h, 1), (n, c, h, w)).reshape(-1)
    cols0 = np.broadcast_to(x0[:, None], (n, c, h, w)).reshape(-1)
    cols1 = np.broadcast_to(x1[:, None], (n, c, h, w)).reshape(-1)
    np.add.at(g_right, (rows, cols0), ((1.0 - a[:, None]) * go).reshape(-1))
    np.add.at(g_right, (rows, cols1), (a[:, None] * go).reshape(-1))
    return g_right.reshape(n, c, h, w).astype(right.dtype), g_disp.astype(right.dtype)


def _neighbour_sums(d):
    s = np.zeros_like(d)
    cnt = np.zeros_like(d)
    s[1:, :] += d[:-1, :]
    cnt[1:, :] += 1.0
    s[:-1, :] += d[1:, :]
    cnt[:-1, :] += 1.0
    s[:, 1:] += d[:, :-1]
    cnt[:, 1:] += 1.0
    s[:, :-1] += d[:, 1:]
    cnt[:, :-1] += 1.0
    return s, cnt


def hs_redblack(d, num, diag, gamma, max_iter, tol):
    h, w = d.shape
    ii, jj = np.indices((h, w))
    colours = [((ii + jj) % 2) == k for k in (0, 1)]
    sweeps = 0
    change = 0.0
    for _ in range(max_iter):
        change = 0.0
        for sel in colours:
            s, cnt = _neighbour_sums(d)
            den = diag + gamma * cnt
            upd = sel & (den > 0.0)
            new = (num[upd] + gamma * s[upd]) / den[upd]
            if new.size:
                change = max(change, float(np.max(np.abs(new - d[upd]))))
            d[upd] = new
        sweeps += 1
        if change < tol:
            break
    return sweeps, change

"""Differentiable primitives over :class:`~unsupdepth.tensor.Tensor`.

Image tensors are ``(N, C, H, W)``; single images ``(C, H, W)`` are accepted
by the spatial ops and come back without the batch axis.  Padding arguments
accept an int, ``(ph, pw)`` or ``(top, bottom, left, right)``.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigurationError
from .tensor import Tensor, make_result


def _pair(v, what="value"):
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    v = tuple(int(e) for e in v)
    if len(v) != 2:
        raise ConfigurationError(f"{what} must be an int or a pair, got {v}")
    return v


def pad4(pad):
    """Normalise padding to ``(top, bottom, left, right)``."""
    if isinstance(pad, (int, np.integer)):
        p = int(pad)
        return p, p, p, p
    pad = tuple(int(p) for p in pad)
    if len(pad) == 2:
        return pad[0], pad[0], pad[1], pad[1]
    if len(pad) == 4:
        return pad
    raise ConfigurationError(f"padding must have 1, 2 or 4 entries, got {pad}")


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _batched(fn):
    """Let a 4-D op accept a single (C, H, W) image."""

    def wrapper(x, *args, **kwargs):
        if x.ndim == 3:
            out = fn(reshape(x, (1,) + x.shape), *args, **kwargs)
            return reshape(out, out.shape[1:])
        if x.ndim != 4:
            raise ConfigurationError(f"{fn.__name__} expects (N,C,H,W) or (C,H,W), got {x.shape}")
        return fn(x, *args, **kwargs)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum (broadcasting)."""
    b = _as_tensor(b, a)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), bw, "add")


elementwise_sum = add


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return make_result(out, (a, b), bw, "sub")


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; ``b`` may be a tensor, array or scalar."""
    b = _as_tensor(b, a)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(out, (a, b), bw, "mul")


def scale(x: Tensor, s: float) -> Tensor:
    s = x.dtype.type(s)
    return make_result(x.data * s, (x,), lambda g: (g * s,), "scale")


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = np.asarray(x.data.sum(axis=axis))

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), bw, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return scale(sum(x), 1.0 / n)


# ------------------------------------------------------------ crop and pad


def crop_pad(x: Tensor, offsets) -> Tensor:
    """Per-side crop (negative) or zero-pad (positive): ``(top, bottom, left, right)``."""
    t, b, l, r = pad4(offsets)
    h, w = x.shape[-2:]
    y0, y1 = max(-t, 0), h - max(-b, 0)
    x0, x1 = max(-l, 0), w - max(-r, 0)
    if y1 <= y0 or x1 <= x0:
        raise ConfigurationError(f"crop {offsets} leaves nothing of a {h}x{w} map")
    cropped = x.data[..., y0:y1, x0:x1]
    lead = [(0, 0)] * (x.ndim - 2)
    pt, pb, pl, pr = max(t, 0), max(b, 0), max(l, 0), max(r, 0)
    out = np.pad(cropped, lead + [(pt, pb), (pl, pr)])

    def bw(g):
        gi = np.zeros_like(x.data)
        gi[..., y0:y1, x0:x1] = g[..., pt:pt + (y1 - y0), pl:pl + (x1 - x0)]
        return (gi,)

    return make_result(out, (x,), bw, "crop_pad")


def edge_pad(x: Tensor, pad) -> Tensor:
    """Replicate-border padding."""
    t, b, l, r = pad4(pad)
    lead = [(0, 0)] * (x.ndim - 2)
    out = np.pad(x.data, lead + [(t, b), (l, r)], mode="edge")
    h, w = x.shape[-2:]

    def bw(g):
        gc = g[..., l:l + w].copy()
        if l:
            gc[..., 0] += g[..., :l].sum(axis=-1)
        if r:
            gc[..., -1] += g[..., l + w:].sum(axis=-1)
        gr = gc[..., t:t + h, :].copy()
        if t:
            gr[..., 0, :] += gc[..., :t, :].sum(axis=-2)
        if b:
            gr[..., -1, :] += gc[..., t + h:, :].sum(axis=-2)
        return (gr,)

    return make_result(out, (x,), bw, "edge_pad")


# ------------------------------------------------------------ convolution


def conv_output_size(size: int, k: int, stride: int, pad_lo: int, pad_hi: int) -> int:
    return (size + pad_lo + pad_hi - k) // stride + 1


@_batched
def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, pad=0) -> Tensor:
    """Cross-correlation of ``x`` (N,Cin,H,W) with ``weight`` (Cout,Cin,kh,kw)."""
    sh, sw = _pair(stride, "stride")
    t, b, l, r = pad4(pad)
    if min(sh, sw) < 1 or min(t, b, l, r) < 0:
        raise ConfigurationError(f"conv2d: bad stride {stride} or pad {pad}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ConfigurationError(f"conv2d: input has {cin} channels, kernel expects {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise ConfigurationError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    hp, wp = h + t + b, w + l + r
    ho, wo = conv_output_size(h, kh, sh, t, b), conv_output_size(w, kw, sw, l, r)
    if ho < 1 or wo < 1 or hp < kh or wp < kw:
        raise ConfigurationError(f"conv2d: {kh}x{kw} kernel does not fit a padded {hp}x{wp} input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (t, b), (l, r))) if (t or b or l or r) else x.data
    cols = kernels.im2col(np.ascontiguousarray(xp), kh, kw, sh, sw)
    w2 = weight.data.reshape(cout, -1)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, cout, ho, wo)

    def bw(g):
        g2 = np.ascontiguousarray(g.reshape(n, cout, ho * wo))
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gb = g2.sum(axis=(0, 2)) if bias is not None else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2)
            gxp = kernels.col2im(np.ascontiguousarray(gcols), cin, hp, wp, kh, kw, sh, sw)
            gx = gxp[:, :, t:t + h, l:l + w]
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, bw, "conv2d")


@_batched
def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, crop=0) -> Tensor:
    """Transposed convolution; ``weight`` is (Cin, Cout, kh, kw).

    Output size is ``(H-1)*stride + kh`` minus the ``crop`` on each side.
    """
    sh, sw = _pair(stride, "stride")
    t, b, l, r = pad4(crop)
    n, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin:
        raise ConfigurationError(f"conv_transpose2d: input has {cin} channels, kernel expects {wcin}")
    hf, wf = (h - 1) * sh + kh, (w - 1) * sw + kw
    ho, wo = hf - t - b, wf - l - r
    if ho < 1 or wo < 1:
        raise ConfigurationError("conv_transpose2d: crop removes the whole output")
    w2 = weight.data.reshape(cin, cout * kh * kw)
    xf = x.data.reshape(n, cin, h * w)
    cols = np.matmul(w2.T, xf)
    full = kernels.col2im(np.ascontiguousarray(cols), cout, hf, wf, kh, kw, sh, sw)
    out = full[:, :, t:t + ho, l:l + wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        gfull = np.zeros((n, cout, hf, wf), dtype=g.dtype)
        gfull[:, :, t:t + ho, l:l + wo] = g
        gcols = kernels.im2col(gfull, kh, kw, sh, sw)
        gx = np.matmul(w2, gcols).reshape(x.shape) if x.requires_grad else None
        gw = np.tensordot(xf, gcols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, bw, "conv_transpose2d")


def bilinear_kernel(factor: int, channels: int = 1, dtype=None) -> np.ndarray:
    """Separable bilinear interpolation filter as a (C, C, K, K) transposed-conv weight."""
    if factor < 2:
        raise ConfigurationError("upsampling factor must be >= 2")
    k = 2 * factor - factor % 2
    centre = (k - 1) / 2.0
    taps = 1.0 - np.abs(np.arange(k) - centre) / factor
    filt = np.outer(taps, taps)
    weight = np.zeros((channels, channels, k, k), dtype=dtype or np.float64)
    for c in range(channels):
        weight[c, c] = filt
    return weight


def upsample_crop(factor: int) -> int:
    k = 2 * factor - factor % 2
    return (k + factor) // 2


@_batched
def bilinear_upsample(x: Tensor, factor: int = 2, kernel: Tensor | None = None) -> Tensor:
    """Upsample by an integer factor with a (learnable) transposed convolution.

    Borders are replicated first, so a constant map stays constant.  With the
    default bilinear kernel this is half-pixel-centred linear interpolation.
    """
    if factor < 2:
        raise ConfigurationError("upsampling factor must be >= 2")
    if kernel is None:
        kernel = Tensor(bilinear_kernel(factor, x.shape[1], x.dtype), dtype=x.dtype)
    padded = edge_pad(x, 1)
    return conv_transpose2d(padded, kernel, None, stride=factor, crop=upsample_crop(factor))


# ------------------------------------------------------------ pooling / LRN


@_batched
def maxpool2d(x: Tensor, window=3, stride=2, pad=0) -> Tensor:
    """Max pooling with ``-inf`` padding; ties send the gradient to the first element."""
    kh, kw = _pair(window, "window")
    sh, sw = _pair(stride, "stride")
    t, b, l, r = pad4(pad)
    n, c, h, w = x.shape
    hp, wp = h + t + b, w + l + r
    if kh > hp or kw > wp or min(sh, sw) < 1:
        raise ConfigurationError(f"maxpool2d: {kh}x{kw} window larger than padded {hp}x{wp} input")
    xp = x.data
    if t or b or l or r:
        xp = np.pad(xp, ((0, 0), (0, 0), (t, b), (l, r)), constant_values=-np.inf)
    out, arg = kernels.maxpool_forward(np.ascontiguousarray(xp), kh, kw, sh, sw)
    if out.size == 0:
        raise ConfigurationError("maxpool2d: empty output")

    def bw(g):
        gp = kernels.maxpool_backward(np.ascontiguousarray(g), arg, hp, wp)
        return (gp[:, :, t:t + h, l:l + w],)

    return make_result(out, (x,), bw, "maxpool2d")


@_batched
def lrn(x: Tensor, depth_radius: int = 2, alpha: float = 1e-4, beta: float = 0.75, k: float = 2.0) -> Tensor:
    """Cross-channel normalisation ``x_c / (k + alpha * sum_{|c'-c|<=r} x_c'^2) ** beta``."""
    if depth_radius < 0:
        raise ConfigurationError("lrn: depth_radius must be >= 0")
    if k <= 0:
        raise ConfigurationError("lrn: k must be > 0")
    r = int(depth_radius)

    def window_sum(v):
        cs = np.cumsum(np.pad(v, ((0, 0), (r + 1, r), (0, 0), (0, 0))), axis=1)
        return cs[:, 2 * r + 1:] - cs[:, :-(2 * r + 1)]

    xd = x.data
    den = k + alpha * window_sum(xd * xd)
    scale_ = den ** (-beta)
    out = xd * scale_

    def bw(g):
        inner = window_sum(g * xd * scale_ / den)
        return (g * scale_ - 2.0 * alpha * beta * xd * inner,)

    return make_result(out.astype(x.dtype), (x,), bw, "lrn")


# ------------------------------------------------------------ scanline warp


def scanline_warp(right: Tensor, disparity: Tensor):
    """Sample ``right`` at ``(x + D(x, y), y)`` with horizontal linear interpolation.

    ``right`` is (N,C,H,W) and ``disparity`` (N,1,H,W) or (N,H,W).  Returns the
    warped tensor and a float validity mask (N,H,W); samples falling outside
    ``[0, W-1]`` are zero and masked.
    """
    squeeze = right.ndim == 3
    if squeeze:
        right = reshape(right, (1,) + right.shape)
        disparity = reshape(disparity, (1,) + disparity.shape)
    n, c, h, w = right.shape
    d = disparity.data.reshape(disparity.shape[0], *disparity.shape[-2:])
    if d.shape != (n, h, w):
        raise ConfigurationError(f"disparity shape {disparity.shape} does not match image {right.shape}")
    d = np.ascontiguousarray(d, dtype=right.dtype)
    r = np.ascontiguousarray(right.data)
    out, valid = kernels.warp_forward(r, d)

    def bw(g):
        g_right, g_disp = kernels.warp_backward(r, d, np.ascontiguousarray(g, dtype=r.dtype))
        return g_right, g_disp.reshape(disparity.shape)

    warped = make_result(out, (right, disparity), bw, "scanline_warp")
    if squeeze:
        warped = reshape(warped, warped.shape[1:])
        valid = valid[0]
    return warped, valid

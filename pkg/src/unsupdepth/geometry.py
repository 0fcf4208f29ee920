"""Fixed stereo decoder: scanline inverse warp, photometric and smoothness
losses, their weighted sum, the first-order warp model, and depth conversion.

Disparity convention: the left pixel ``x`` is reconstructed from the right
image at ``x + D(x)``; positive ``D`` means nearer.  Depth is ``d = fB / D``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigurationError
from .tensor import Tensor

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.01


@dataclass(frozen=True)
class Calibration:
    focal_px: float
    baseline_m: float

    def __post_init__(self):
        if not (self.focal_px > 0 and self.baseline_m > 0):
            raise ConfigurationError("focal length and baseline must be positive")
        if not np.isfinite(self.focal_px * self.baseline_m):
            raise ConfigurationError("fB must be finite")

    @property
    def fB(self) -> float:
        return self.focal_px * self.baseline_m

    def scaled(self, factor: float) -> "Calibration":
        """Calibration of the same rig imaged at ``factor`` times the width."""
        return Calibration(self.focal_px * factor, self.baseline_m)


@dataclass
class LossBreakdown:
    recons: Tensor
    smooth: Tensor
    total: Tensor
    gamma: float
    empty_mask: bool = False

    def values(self) -> dict:
        return {"recons": self.recons.item(), "smooth": self.smooth.item(), "total": self.total.item()}


def _as_batch(t: Tensor, image: bool) -> Tensor:
    # images -> (N,C,H,W); disparities -> (N,1,H,W)
    if image:
        if t.ndim == 3:
            return ops.reshape(t, (1,) + t.shape)
        return t
    if t.ndim == 2:
        return ops.reshape(t, (1, 1) + t.shape)
    if t.ndim == 3:
        return ops.reshape(t, (t.shape[0], 1) + t.shape[1:])
    return t


def inverse_warp(right: Tensor, disparity: Tensor):
    """Reconstruct the left view from ``right`` and a disparity map.

    Accepts ``right`` as (C,H,W) with disparity (H,W), or batched
    (N,C,H,W) with (N,1,H,W)/(N,H,W).  Returns ``(warped, valid_mask)`` shaped
    like the inputs.
    """
    single = right.ndim == 3
    r = _as_batch(right, image=True)
    d = _as_batch(disparity, image=False)
    if d.shape[-2:] != r.shape[-2:]:
        raise ConfigurationError(
            f"disparity resolution {d.shape[-2:]} must equal image resolution {r.shape[-2:]}"
        )
    warped, valid = ops.scanline_warp(r, d)
    if single:
        return ops.reshape(warped, right.shape), valid[0]
    return warped, valid


def photometric_loss(left: Tensor, warped: Tensor, mask: np.ndarray):
    """Squared colour difference summed over channels, averaged over valid pixels.

    Batched inputs are averaged per sample then across the batch.  Returns
    ``(loss, empty)`` where ``empty`` flags samples with no valid pixel
    (their contribution is zero).
    """
    if left.shape != warped.shape:
        raise ConfigurationError(f"left {left.shape} and warped {warped.shape} differ")
    lb = _as_batch(left, image=True)
    wb = _as_batch(warped, image=True)
    m = np.asarray(mask, dtype=left.dtype).reshape(lb.shape[0], 1, *lb.shape[-2:])
    counts = m.reshape(m.shape[0], -1).sum(axis=1)
    empty = bool(np.any(counts == 0))
    if empty:
        logger.warning("photometric_loss: sample with no valid pixels contributes 0")
    # per-sample weight 1/(count * N) folds the per-sample mean and batch mean together
    weights = np.where(counts > 0, 1.0 / np.maximum(counts, 1) / lb.shape[0], 0.0).astype(left.dtype)
    diff = ops.sub(wb, lb)
    weighted = ops.mul(ops.square(diff), m * weights[:, None, None, None])
    return ops.sum(weighted), empty


def smoothness_loss(disparity: Tensor) -> Tensor:
    """Mean of squared forward differences over all horizontal and vertical pairs."""
    d = _as_batch(disparity, image=False)
    n, _, h, w = d.shape
    if h < 2 or w < 2:
        raise ConfigurationError("smoothness_loss needs a map of at least 2x2")
    dx = ops.sub(ops.crop_pad(d, (0, 0, -1, 0)), ops.crop_pad(d, (0, 0, 0, -1)))
    dy = ops.sub(ops.crop_pad(d, (-1, 0, 0, 0)), ops.crop_pad(d, (0, -1, 0, 0)))
    terms = h * (w - 1) + (h - 1) * w
    total = ops.add(ops.sum(ops.square(dx)), ops.sum(ops.square(dy)))
    return ops.scale(total, 1.0 / (terms * n))


def total_loss(left: Tensor, right: Tensor, disparity: Tensor, gamma: float = DEFAULT_GAMMA) -> LossBreakdown:
    """Photometric reconstruction error plus ``gamma`` times the smoothness prior."""
    if gamma < 0:
        raise ConfigurationError("gamma must be >= 0")
    warped, mask = inverse_warp(right, disparity)
    recons, empty = photometric_loss(left, warped, mask)
    smooth = smoothness_loss(disparity)
    total = ops.add(recons, ops.scale(smooth, gamma))
    return LossBreakdown(recons, smooth, total, gamma, empty)


# ------------------------------------------------------- first-order warp


def horizontal_gradient(image: np.ndarray) -> np.ndarray:
    """Central differences along x with replicated edges."""
    p = np.pad(image, [(0, 0)] * (image.ndim - 1) + [(1, 1)], mode="edge")
    return 0.5 * (p[..., 2:] - p[..., :-2])


def _numpy_warp(image: np.ndarray, disparity: np.ndarray):
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    warped, mask = inverse_warp(Tensor(img, dtype=np.float64), Tensor(np.asarray(disparity, np.float64)))
    out = warped.data[0] if squeeze else warped.data
    return out, mask


def linearized_warp(right, d_prev, d_new):
    """``I2(x + D_prev) + (D_new - D_prev) * I2x(x + D_prev)``.

    ``right`` is (C,H,W) or (H,W); disparities (H,W).  The horizontal gradient
    is taken with central differences and sampled at the warped location the
    same way as the image.
    """
    right = np.asarray(right.data if isinstance(right, Tensor) else right, dtype=np.float64)
    d_prev = np.asarray(d_prev.data if isinstance(d_prev, Tensor) else d_prev, dtype=np.float64)
    d_new = np.asarray(d_new.data if isinstance(d_new, Tensor) else d_new, dtype=np.float64)
    if d_prev.shape != d_new.shape:
        raise ConfigurationError("D_prev and D_new must have equal shapes")
    base, _ = _numpy_warp(right, d_prev)
    grad, _ = _numpy_warp(horizontal_gradient(right), d_prev)
    return base + (d_new - d_prev) * grad


# ------------------------------------------------------- depth conversion


def disparity_to_depth(disparity, cal: Calibration, clamp=(1.0, 50.0)) -> np.ndarray:
    """``d = fB / max(D, fB/d_max)`` clamped to ``[d_min, d_max]``."""
    d_min, d_max = float(clamp[0]), float(clamp[1])
    if not (0 < d_min < d_max):
        raise ConfigurationError(f"clamp bounds must satisfy 0 < d_min < d_max, got {clamp}")
    D = np.asarray(disparity.data if isinstance(disparity, Tensor) else disparity, dtype=np.float64)
    depth = cal.fB / np.maximum(D, cal.fB / d_max)
    return np.clip(depth, d_min, d_max)


def depth_to_disparity(depth, cal: Calibration) -> np.ndarray:
    return cal.fB / np.asarray(depth, dtype=np.float64)

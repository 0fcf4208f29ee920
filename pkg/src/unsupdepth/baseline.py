"""Variational Horn-Schunck stereo and proxy-supervised training.

The stereo energy at one pyramid level is::

    E(D) = sum_valid sum_c (I2_c(x + D) - I1_c(x))**2 + gamma * sum_edges (D_p - D_q)**2

Each warp linearises the data term about the current disparity and solves
the resulting sparse linear system with red-black Gauss-Seidel.  A
backtracking step keeps the true energy non-increasing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .dataio import StereoSample, downsample, flip_swap, resample
from .errors import ConfigurationError
from .geometry import horizontal_gradient

logger = logging.getLogger(__name__)


@dataclass
class HSConfig:
    pyramid_levels: int = 6
    pyramid_scale: float = 0.5
    warp_iterations: int = 1000
    gamma_hs: float = 0.01
    inner_tol: float = 1e-6
    inner_iterations: int = 100
    warp_tol: float = 1e-4  # stop warping once max |dD| falls below this
    min_level_size: int = 6  # coarsest level keeps at least this many rows and columns

    def __post_init__(self):
        if not (0 < self.pyramid_scale < 1):
            raise ConfigurationError("pyramid_scale must lie in (0, 1)")
        if self.pyramid_levels < 1:
            raise ConfigurationError("pyramid_levels must be >= 1")
        if self.gamma_hs < 0 or self.warp_iterations < 1 or self.inner_iterations < 1:
            raise ConfigurationError("gamma_hs >= 0 and iteration counts >= 1 required")

    def level_sizes(self, hw) -> list:
        """Fine-to-coarse resolutions, stopping before a level gets too small."""
        h, w = hw
        sizes = [(h, w)]
        for k in range(1, self.pyramid_levels):
            s = self.pyramid_scale**k
            lh, lw = int(round(h * s)), int(round(w * s))
            if min(lh, lw) < self.min_level_size:
                break
            sizes.append((lh, lw))
        return sizes


@dataclass
class LevelTrace:
    size: tuple
    init: np.ndarray  # disparity the level started from
    energies: list = field(default_factory=list)  # energy before the first warp, then after each
    warps: int = 0
    inner_sweeps: list = field(default_factory=list)
    converged_inner: bool = True


@dataclass
class HSTrace:
    levels: list = field(default_factory=list)  # coarse to fine


def _as_image(x) -> np.ndarray:
    arr = np.asarray(getattr(x, "data", x), dtype=np.float64)
    return arr[None] if arr.ndim == 2 else arr


def _warp(img: np.ndarray, disp: np.ndarray):
    warped, valid = kernels.warp_forward(img[None], disp[None])
    return warped[0], valid[0] > 0


def hs_energy(left: np.ndarray, right: np.ndarray, disp: np.ndarray, gamma: float) -> float:
    """True (non-linearised) energy at one level."""
    warped, valid = _warp(right, disp)
    data = float(np.sum(((warped - left) ** 2) * valid[None]))
    smooth = float(np.sum(np.diff(disp, axis=0) ** 2) + np.sum(np.diff(disp, axis=1) ** 2))
    return data + gamma * smooth


def upscale_level(disp: np.ndarray, out_hw) -> np.ndarray:
    """Bilinear upscaling with values scaled by the width ratio."""
    return resample(disp, out_hw) * (out_hw[1] / disp.shape[1])


def _solve_level(left, right, disp, cfg: HSConfig, trace: LevelTrace) -> np.ndarray:
    grad_right = horizontal_gradient(right)
    gamma = cfg.gamma_hs
    energy = hs_energy(left, right, disp, gamma)
    trace.energies.append(energy)
    for _ in range(cfg.warp_iterations):
        warped, valid = _warp(right, disp)
        gx, _ = _warp(grad_right, disp)
        it = warped - left
        a = np.sum(gx * gx, axis=0) * valid
        b = np.sum(gx * it, axis=0) * valid
        target = disp.copy()
        sweeps, change = kernels.hs_redblack(target, np.ascontiguousarray(a * disp - b), np.ascontiguousarray(a),
                                             gamma, cfg.inner_iterations, cfg.inner_tol)
        trace.inner_sweeps.append(sweeps)
        if change >= cfg.inner_tol:
            trace.converged_inner = False
        step = target - disp
        t = 1.0
        accepted = None
        while t >= 1.0 / 64:
            cand = disp + t * step
            e = hs_energy(left, right, cand, gamma)
            if e <= energy:
                accepted = (cand, e)
                break
            t *= 0.5
        if accepted is None:
            break
        moved = float(np.max(np.abs(accepted[0] - disp))) if disp.size else 0.0
        disp, energy = accepted
        trace.energies.append(energy)
        trace.warps += 1
        if moved < cfg.warp_tol:
            break
    if not trace.converged_inner:
        logger.debug("hs_stereo: inner solve hit its iteration cap at level %s", trace.size)
    return disp


def hs_stereo(left, right=None, cfg: Optional[HSConfig] = None, return_trace: bool = False):
    """Disparity of the left view by coarse-to-fine Horn-Schunck with iterative warping.

    Accepts a :class:`StereoSample` or two (C,H,W)/(H,W) arrays.
    """
    if isinstance(left, StereoSample):
        left, right = left.left, left.right
    cfg = cfg or HSConfig()
    left, right = _as_image(left), _as_image(right)
    if left.shape != right.shape:
        raise ConfigurationError("left and right images differ in shape")
    sizes = cfg.level_sizes(left.shape[1:])
    trace = HSTrace()
    disp = None
    for hw in reversed(sizes):
        l_k, r_k = downsample(left, hw), downsample(right, hw)
        disp = np.zeros(hw) if disp is None else upscale_level(disp, hw)
        level = LevelTrace(size=hw, init=disp.copy())
        disp = _solve_level(l_k, r_k, disp, cfg, level)
        trace.levels.append(level)
    return (disp, trace) if return_trace else disp


# ------------------------------------------------------------- proxy labels


@dataclass
class ProxyLabel:
    disparity: np.ndarray
    valid: np.ndarray
    id: str = ""

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.disparity.shape:
            raise ConfigurationError("label disparity and validity differ in shape")


@dataclass
class ProxyLabelSet:
    labels: list
    hole_fraction: float  # in-frame pixels failing the consistency check
    out_of_frame_fraction: float


def consistency_mask(d_left: np.ndarray, d_right: np.ndarray, threshold: float = 1.0):
    """``(consistent, in_frame)``: ``|D_lr(x) - D_rl(x + D_lr(x))| <= threshold``."""
    h, w = d_left.shape
    xs = np.arange(w)[None, :] + d_left
    in_frame = (xs >= 0) & (xs <= w - 1)
    xc = np.clip(xs, 0, w - 1)
    x0 = np.minimum(np.floor(xc).astype(int), w - 2 if w > 1 else 0)
    a = xc - x0
    rows = np.arange(h)[:, None]
    x1 = np.minimum(x0 + 1, w - 1)
    sampled = d_right[rows, x0] * (1 - a) + d_right[rows, x1] * a
    return (np.abs(d_left - sampled) <= threshold) & in_frame, in_frame


def _right_disparity_hs(sample: StereoSample, cfg: HSConfig) -> np.ndarray:
    mirrored = flip_swap(StereoSample(sample.left, sample.right, sample.calibration))
    return hs_stereo(mirrored.left, mirrored.right, cfg)[:, ::-1]


def make_proxy_labels(dataset: Sequence[StereoSample], engine: str = "hs", holes: bool = False,
                      cfg: Optional[HSConfig] = None, threshold: float = 1.0) -> ProxyLabelSet:
    """Labels from a stereo engine; ``holes`` invalidates left-right inconsistent pixels.

    ``engine="oracle"`` uses the synthetic ground truth as the stereo output,
    which isolates the effect of the holes from stereo errors.
    """
    if engine not in ("hs", "oracle"):
        raise ConfigurationError(f"unknown proxy engine {engine!r}")
    cfg = cfg or HSConfig()
    labels, n_holes, n_out, n_total = [], 0, 0, 0
    for s in dataset:
        if engine == "oracle":
            if s.gt_disparity is None:
                raise ConfigurationError(f"oracle engine needs ground truth on sample {s.id}")
            d_lr = s.gt_disparity.copy()
        else:
            d_lr = hs_stereo(s.left, s.right, cfg)
        valid = np.ones(d_lr.shape, bool)
        if holes:
            if engine == "oracle":
                if s.gt_disparity_right is None:
                    raise ConfigurationError(f"hole injection needs right-view disparity on sample {s.id}")
                d_rl = s.gt_disparity_right
            else:
                d_rl = _right_disparity_hs(s, cfg)
            consistent, in_frame = consistency_mask(d_lr, d_rl, threshold)
            valid = consistent
            n_holes += int(np.sum(in_frame & ~consistent))
            n_out += int(np.sum(~in_frame))
        n_total += d_lr.size
        labels.append(ProxyLabel(d_lr, valid, s.id))
    frac = n_holes / n_total if n_total else 0.0
    out = n_out / n_total if n_total else 0.0
    logger.info("proxy labels: %d samples, hole fraction %.4f, out-of-frame %.4f", len(labels), frac, out)
    return ProxyLabelSet(labels, frac, out)


def resize_labels(label: ProxyLabel, out_hw) -> ProxyLabel:
    """Nearest-neighbour resampling of value and validity together; values scaled by the width ratio."""
    h, w = label.disparity.shape
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return label
    ys = np.minimum(((np.arange(oh) + 0.5) * h / oh).astype(int), h - 1)
    xs = np.minimum(((np.arange(ow) + 0.5) * w / ow).astype(int), w - 1)
    idx = np.ix_(ys, xs)
    return ProxyLabel(label.disparity[idx] * (ow / w), label.valid[idx], label.id)


def train_proxy_supervised(net, dataset: Sequence[StereoSample], labels, opt=None, train=None, seed: int = 0):
    """Stage-wise training on the masked least-squares disparity loss."""
    from .trainer import OptimizerConfig, TrainConfig, Trainer

    if isinstance(labels, ProxyLabelSet):
        labels = labels.labels
    train = train or TrainConfig()
    if train.mode != "proxy":
        train = TrainConfig(**{**train.__dict__, "mode": "proxy"})
    return Trainer(opt or OptimizerConfig(), train, seed).run(net, dataset, labels=labels)

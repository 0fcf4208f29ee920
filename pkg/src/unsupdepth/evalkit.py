"""Depth error measures, the evaluation protocol, and error heat-maps."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .dataio import StereoSample, resample
from .errors import EvaluationError
from .geometry import Calibration, disparity_to_depth

CSV_FIELDS = ("name", "rms", "log_rms", "abs_rel", "sq_rel", "acc_1", "acc_2", "acc_3", "n_pixels")
METRIC_KEYS = CSV_FIELDS[1:-1]
THRESHOLD = 1.25


@dataclass
class MetricsReport:
    rms: float
    log_rms: float
    abs_rel: float
    sq_rel: float
    acc_1: float
    acc_2: float
    acc_3: float
    n_pixels: int

    def row(self) -> tuple:
        return tuple(getattr(self, k) for k in METRIC_KEYS)

    def to_text(self) -> str:
        lines = [f"{k}={getattr(self, k):.6g}" for k in METRIC_KEYS]
        lines.append(f"n_pixels={self.n_pixels}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(pred, gt, valid_mask=None) -> MetricsReport:
    """Error and accuracy measures between positive depth maps on valid pixels.

    ``log_rms`` uses the natural logarithm.  ``acc_k`` counts pixels with
    ``max(d/g, g/d) < 1.25**k``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise EvaluationError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    mask = np.ones(gt.shape, bool) if valid_mask is None else np.asarray(valid_mask, bool)
    if mask.shape != gt.shape:
        raise EvaluationError("valid mask shape differs from ground truth")
    d, g = pred[mask], gt[mask]
    if d.size == 0:
        raise EvaluationError("no valid pixels to evaluate")
    if np.any(d <= 0) or np.any(g <= 0) or not (np.all(np.isfinite(d)) and np.all(np.isfinite(g))):
        raise EvaluationError("depths must be finite and positive on valid pixels")
    diff = d - g
    ratio = np.maximum(d / g, g / d)
    return MetricsReport(
        rms=float(np.sqrt(np.mean(diff**2))),
        log_rms=float(np.sqrt(np.mean(np.log(d / g) ** 2))),
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        acc_1=float(np.mean(ratio < THRESHOLD)),
        acc_2=float(np.mean(ratio < THRESHOLD**2)),
        acc_3=float(np.mean(ratio < THRESHOLD**3)),
        n_pixels=int(d.size),
    )


def upscale_disparity(disp: np.ndarray, out_hw) -> np.ndarray:
    """Bilinear upscaling with values rescaled by the width ratio."""
    disp = np.asarray(disp, dtype=np.float64)
    if disp.shape == tuple(out_hw):
        return disp
    return resample(disp, out_hw) * (out_hw[1] / disp.shape[1])


def evaluation_protocol(pred_disp, sample: StereoSample, crop=None, clamp=(1.0, 50.0),
                        valid_mask: Optional[np.ndarray] = None) -> MetricsReport:
    """Upscale to capture resolution, convert to clamped depth, crop, and score.

    ``crop`` is ``(y0, y1, x0, x1)`` at capture resolution (default: whole image).
    """
    if sample.gt_disparity is None:
        raise EvaluationError(f"sample {sample.id} has no ground truth")
    pred_depth, gt_depth = protocol_depths(pred_disp, sample, clamp)
    h, w = gt_depth.shape
    y0, y1, x0, x1 = crop if crop is not None else (0, h, 0, w)
    if not (0 <= y0 < y1 <= h and 0 <= x0 < x1 <= w):
        raise EvaluationError(f"crop {crop} outside {h}x{w} image")
    mask = np.ones((h, w), bool) if valid_mask is None else np.asarray(valid_mask, bool)
    sl = (slice(y0, y1), slice(x0, x1))
    return compute_metrics(pred_depth[sl], gt_depth[sl], mask[sl])


def protocol_depths(pred_disp, sample: StereoSample, clamp=(1.0, 50.0)):
    """``(pred_depth, gt_depth)`` at capture resolution, both clamped."""
    hw = sample.resolution
    cal: Calibration = sample.calibration
    raw = np.asarray(getattr(pred_disp, "data", pred_disp))
    disp = upscale_disparity(raw.reshape(raw.shape[-2:]), hw)
    return disparity_to_depth(disp, cal, clamp), disparity_to_depth(sample.gt_disparity, cal, clamp)


# ----------------------------------------------------------------- outputs

# black -> blue -> cyan -> yellow -> red -> white, at errors scaled to [0, 1]
RAMP_STOPS = np.array([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
RAMP_COLORS = np.array(
    [[0, 0, 0], [0, 0, 255], [0, 255, 255], [255, 255, 0], [255, 0, 0], [255, 255, 255]], dtype=np.float64
)


def color_ramp(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] (clipped) to uint8 RGB through the fixed ramp."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    rgb = np.stack([np.interp(v, RAMP_STOPS, RAMP_COLORS[:, c]) for c in range(3)], axis=-1)
    return np.rint(rgb).astype(np.uint8)


def error_heatmap(pred, gt, max_error: Optional[float] = None, path=None) -> np.ndarray:
    """Per-pixel ``|pred - gt|`` through the fixed ramp; ``max_error`` maps to white.

    ``max_error`` defaults to the largest error (or 1 if all are zero), so an
    exact prediction is uniformly black.  Returns (H, W, 3) uint8; writes
    PNG/PPM when ``path`` is given.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise EvaluationError("heat-map inputs differ in shape")
    err = np.abs(pred - gt)
    scale = max_error if max_error is not None else (float(err.max()) or 1.0)
    img = color_ramp(err / scale)
    if path is not None:
        Image.fromarray(img, mode="RGB").save(Path(path))
    return img


def inverse_depth_image(depth: np.ndarray, path=None) -> np.ndarray:
    """Inverse depth scaled to [0, 1] and written as 8-bit gray."""
    inv = 1.0 / np.asarray(depth, dtype=np.float64)
    lo, hi = inv.min(), inv.max()
    norm = (inv - lo) / (hi - lo) if hi > lo else np.zeros_like(inv)
    img = np.rint(norm * 255).astype(np.uint8)
    if path is not None:
        Image.fromarray(img, mode="L").save(Path(path))
    return img


def append_csv(path, name: str, report: MetricsReport) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_FIELDS)
        w.writerow([name, *(f"{v:.6g}" for v in report.row()), report.n_pixels])


def mean_report(reports) -> MetricsReport:
    """Pixel-weighted average of per-sample reports (rms-type terms averaged in the square)."""
    reports = list(reports)
    if not reports:
        raise EvaluationError("no reports to average")
    n = np.array([r.n_pixels for r in reports], dtype=np.float64)
    wts = n / n.sum()

    def avg(k):
        return float(np.sum(wts * np.array([getattr(r, k) for r in reports])))

    def avg_sq(k):
        return float(np.sqrt(np.sum(wts * np.array([getattr(r, k) ** 2 for r in reports]))))

    return MetricsReport(
        rms=avg_sq("rms"), log_rms=avg_sq("log_rms"), abs_rel=avg("abs_rel"), sq_rel=avg("sq_rel"),
        acc_1=avg("acc_1"), acc_2=avg("acc_2"), acc_3=avg("acc_3"), n_pixels=int(n.sum()),
    )

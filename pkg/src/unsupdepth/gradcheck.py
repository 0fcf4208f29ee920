"""Central finite-difference checks of the tape gradients.

Every check reduces an op's output to a scalar with fixed random weights,
so gradients are O(1) and relative errors are meaningful.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .encoder import NetworkConfig, build_network
from .geometry import inverse_warp, photometric_loss, smoothness_loss, total_loss
from .tensor import Tape, Tensor, backward, default_dtype

OP_TOL = 1e-4
COMPOSITE_TOL = 1e-3
STEP = 1e-5
FLOOR = 1e-8  # relative errors use max(|a|, |n|, FLOOR) as denominator


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_error < self.tol

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name:<22} max_rel_err={self.max_rel_error:.3e} n={self.n_checked} tol={self.tol:g}"


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)


def analytic_grads(fn: Callable, inputs: Sequence[Tensor]) -> list:
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        out = fn(*inputs)
    backward(tape, out)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]


def check_function(name: str, fn: Callable, inputs: Sequence[Tensor], tol: float = OP_TOL, step: float = STEP,
                   max_entries: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                   exclude: Optional[Callable] = None, which: Optional[Sequence[int]] = None,
                   probe: Optional[Callable] = None, retries: int = 2) -> CheckResult:
    """Compare tape gradients of scalar ``fn(*inputs)`` with central differences.

    ``max_entries`` samples that many entries per input; ``exclude(i, flat)``
    returns True for entries to skip (e.g. at interpolation knots).
    ``probe()`` returns the warp sample positions of the latest evaluation;
    when the two evaluations straddle a knot the step shrinks tenfold, and
    after ``retries`` such attempts the entry is skipped.
    """
    rng = rng or np.random.default_rng(0)
    grads = analytic_grads(fn, inputs)
    worst, count = 0.0, 0
    for i, t in enumerate(inputs):
        if which is not None and i not in which:
            continue
        flat_idx = np.arange(t.data.size)
        if max_entries is not None and t.data.size > max_entries:
            flat_idx = rng.choice(t.data.size, size=max_entries, replace=False)
        data = t.data.reshape(-1)  # view, perturbed in place
        for k in flat_idx:
            if exclude is not None and exclude(i, int(k)):
                continue
            orig = data[k]
            h = step
            for _ in range(retries + 1):
                data[k] = orig + h
                f_plus = fn(*inputs).item()
                pos_plus = probe() if probe else None
                data[k] = orig - h
                f_minus = fn(*inputs).item()
                pos_minus = probe() if probe else None
                data[k] = orig
                if probe is None or np.array_equal(np.floor(pos_plus), np.floor(pos_minus)):
                    break
                h *= 0.1
            else:
                continue
            numeric = (f_plus - f_minus) / (2 * h)
            worst = max(worst, relative_error(float(grads[i].reshape(-1)[k]), numeric))
            count += 1
    return CheckResult(name, worst, count, tol)


def _leaf(rng, shape, scale=1.0, positive=False):
    x = rng.standard_normal(shape) * scale
    if positive:
        x = np.abs(x) + 0.1
    return Tensor(x, requires_grad=True, dtype=np.float64)


def _projector(rng, shape):
    r = rng.standard_normal(shape)
    return lambda t: ops.sum(ops.mul(t, r.astype(t.dtype)))


def warp_knot_filter(disp: np.ndarray, width: int, margin: float):
    """Exclusion predicate for disparity entries whose sample lands near an integer."""
    xs = np.arange(width)[None, None, :] + disp.reshape(disp.shape[0], -1, width)
    frac = np.abs(xs - np.round(xs)).reshape(-1)
    return lambda flat: frac[flat] < margin


def op_suite(seed: int = 0, step: float = STEP) -> list:
    """One result per differentiable primitive (64-bit)."""
    rng = np.random.default_rng(seed)
    res = []

    def run(name, fn, inputs, **kw):
        res.append(check_function(name, fn, inputs, step=step, rng=rng, **kw))

    with default_dtype(np.float64):
        a, b = _leaf(rng, (2, 3, 4, 5)), _leaf(rng, (2, 3, 4, 5))
        p = _projector(rng, (2, 3, 4, 5))
        run("add", lambda x, y: p(ops.add(x, y)), [a, b])
        run("sub", lambda x, y: p(ops.sub(x, y)), [a, b])
        run("mul", lambda x, y: p(ops.mul(x, y)), [a, b])
        run("scale", lambda x: p(ops.scale(x, 1.7)), [a])
        run("square", lambda x: p(ops.square(x)), [a])
        run("relu", lambda x: p(ops.relu(x)), [a])
        run("sum_axis", lambda x: ops.sum(ops.square(ops.sum(x, axis=1))), [a])
        run("mean", lambda x: ops.mean(ops.square(x)), [a])
        pr = _projector(rng, (2, 60))
        run("reshape", lambda x: pr(ops.reshape(x, (2, 60))), [a])
        pc = _projector(rng, (2, 3, 5, 4))
        run("crop_pad", lambda x: pc(ops.crop_pad(x, (-1, 2, 1, -2))), [a])
        pe = _projector(rng, (2, 3, 6, 8))
        run("edge_pad", lambda x: pe(ops.edge_pad(x, (1, 1, 2, 1))), [a])

        x = _leaf(rng, (2, 3, 9, 11))
        w = _leaf(rng, (4, 3, 3, 3))
        bias = _leaf(rng, (4,))
        pcv = _projector(rng, (2, 4, 5, 6))
        run("conv2d", lambda x, w, b: pcv(ops.conv2d(x, w, b, stride=2, pad=1)), [x, w, bias])

        xt = _leaf(rng, (2, 3, 4, 5))
        wt = _leaf(rng, (3, 2, 4, 4))
        bt = _leaf(rng, (2,))
        pt = _projector(rng, (2, 2, 8, 10))
        run("conv_transpose2d", lambda x, w, b: pt(ops.conv_transpose2d(x, w, b, stride=2, crop=1)), [xt, wt, bt])

        xu = _leaf(rng, (2, 1, 4, 6))
        ku = Tensor(ops.bilinear_kernel(2, 1, np.float64) + 0.05 * rng.standard_normal((1, 1, 4, 4)),
                    requires_grad=True, dtype=np.float64)
        pu = _projector(rng, (2, 1, 8, 12))
        run("bilinear_upsample", lambda x, k: pu(ops.bilinear_upsample(x, 2, k)), [xu, ku])

        xp = _leaf(rng, (2, 3, 9, 9))
        pp = _projector(rng, (2, 3, 4, 4))
        run("maxpool2d", lambda x: pp(ops.maxpool2d(x, 3, 2, (0, 1, 0, 1))), [xp])

        xl = _leaf(rng, (2, 7, 4, 5), scale=3.0)
        pl = _projector(rng, (2, 7, 4, 5))
        run("lrn", lambda x: pl(ops.lrn(x, 2, alpha=0.05, beta=0.75, k=2.0)), [xl])

        # warp: exclude disparity entries whose sample sits within 10 steps of a knot
        n, c, h, wd = 2, 3, 5, 9
        right = _leaf(rng, (n, c, h, wd))
        disp = Tensor(rng.uniform(-1.0, 5.0, size=(n, 1, h, wd)), requires_grad=True, dtype=np.float64)
        near_knot = warp_knot_filter(disp.data, wd, 10 * step)
        pw = _projector(rng, (n, c, h, wd))

        def warp_fn(r, d):
            return pw(inverse_warp(r, d)[0])

        run("inverse_warp", warp_fn, [right, disp], exclude=lambda i, k: i == 1 and near_knot(k))

        left = _leaf(rng, (n, c, h, wd))
        warped = _leaf(rng, (n, c, h, wd))
        mask = rng.random((n, h, wd)) > 0.3
        run("photometric_loss", lambda l, w: photometric_loss(l, w, mask)[0], [left, warped])
        run("smoothness_loss", lambda d: smoothness_loss(d), [disp])

        def total_fn(l, r, d):
            return total_loss(l, r, d, gamma=0.01).total

        run("total_loss", total_fn, [left, right, disp], exclude=lambda i, k: i == 2 and near_knot(k))
    return res


def composite_check(seed: int = 0, stages: int = 2, per_tensor: int = 5, batch: int = 1,
                    step: float = STEP, cfg: Optional[NetworkConfig] = None) -> CheckResult:
    """Full desk network plus the training loss, against a sample of every parameter tensor.

    Parameters are re-drawn at random (including the zero-initialised ones)
    so every path carries gradient.
    """
    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        cfg = cfg or NetworkConfig.desk()
        net = build_network(cfg, "desk", seed=seed, dtype=np.float64, stages=stages)
        for name, p in net.named_parameters():
            fan_in = max(1, int(np.prod(p.shape[1:])))
            p.data = rng.uniform(-1, 1, p.shape) * np.sqrt(6.0 / fan_in)
            if name.endswith(".bias"):
                p.data = np.full(p.shape, 0.05)  # keep most units alive
            if name.startswith("f7") or name.startswith("skip"):
                p.data = p.data * 0.05  # keep disparities within a few pixels
        h, w = cfg.input_size
        image = rng.uniform(-0.5, 0.5, size=(batch, cfg.in_channels, h, w))
        oh, ow = net.output_resolution()
        left = Tensor(rng.uniform(-0.5, 0.5, size=(batch, cfg.in_channels, oh, ow)), dtype=np.float64)
        right = Tensor(rng.uniform(-0.5, 0.5, size=(batch, cfg.in_channels, oh, ow)), dtype=np.float64)
        names = [k for k, _ in net.named_parameters()]
        params = [p for _, p in net.named_parameters()]

        last = {}

        def loss_fn(*_):
            disp = net.forward(Tensor(image, dtype=np.float64))
            last["pos"] = np.arange(ow) + disp.data
            return total_loss(left, right, disp, gamma=0.01).total

        res = check_function("composite_network", loss_fn, params, tol=COMPOSITE_TOL, step=step,
                             max_entries=per_tensor, rng=rng, probe=lambda: last["pos"])
        res.name = f"composite_network[{len(names)} tensors]"
        return res


def run_suite(seed: int = 0, composite: bool = True) -> tuple:
    """``(results, seconds)`` for the whole suite."""
    t0 = time.perf_counter()
    results = op_suite(seed)
    if composite:
        results.append(composite_check(seed))
    return results, time.perf_counter() - t0


def format_report(results: Sequence[CheckResult], seconds: Optional[float] = None) -> str:
    lines = [r.line() for r in results]
    ok = all(r.passed for r in results)
    tail = f"{'ALL PASSED' if ok else 'FAILURES'}: {sum(r.passed for r in results)}/{len(results)}"
    if seconds is not None:
        tail += f" in {seconds:.1f}s"
    return "\n".join(lines + [tail])

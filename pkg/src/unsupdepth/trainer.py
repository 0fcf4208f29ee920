"""Stage-wise coarse-to-fine training with momentum SGD.

The schedule is a list of phases: the coarse network, then one phase per
grown stage, then an optional fine-tune on the 8x augmented set.  A
:class:`TrainState` captures everything needed to resume bit-exactly at an
epoch boundary.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .dataio import StereoSample, augment, resize_for_stage
from .encoder import Network, grow_stage
from .errors import ConfigurationError, DivergenceError, NumericError
from .geometry import total_loss
from .tensor import Tape, Tensor, backward

logger = logging.getLogger(__name__)

CURVE_FIELDS = ("epoch", "stage", "lr", "recons", "smooth", "total")


@dataclass
class OptimizerConfig:
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr0: float = 0.01
    alpha: float = 0.0005
    stage_lr_divisor: float = 4.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (np.isfinite(v) and v >= 0):
                raise ConfigurationError(f"optimizer {k} must be finite and >= 0, got {v}")
        if self.momentum >= 1:
            raise ConfigurationError("momentum must be < 1")
        if self.stage_lr_divisor <= 0:
            raise ConfigurationError("stage_lr_divisor must be > 0")


@dataclass
class TrainConfig:
    """Schedule and plumbing around the optimizer."""

    batch_size: int = 16
    epochs_coarse: int = 200
    epochs_finer: int = 100
    n_stages: int = 2
    finetune_epochs: int = 0
    gamma: float = 0.01
    decay_index: str = "stage"  # "stage": n restarts at 1 per phase; "global": keeps counting
    divergence_factor: float = 2.0
    divergence_patience: int = 3
    mode: str = "unsupervised"  # or "proxy"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if min(self.epochs_coarse, self.epochs_finer, self.finetune_epochs, self.n_stages) < 0:
            raise ConfigurationError("epoch counts and n_stages must be >= 0")
        if self.decay_index not in ("stage", "global"):
            raise ConfigurationError("decay_index must be 'stage' or 'global'")
        if self.mode not in ("unsupervised", "proxy"):
            raise ConfigurationError("mode must be 'unsupervised' or 'proxy'")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be >= 0")

    def phases(self) -> list:
        """``[(name, stage rank, epochs)]``; rank counts grown stages."""
        out = [("coarse", 0, self.epochs_coarse)]
        out += [(f"stage{k}", k, self.epochs_finer) for k in range(1, self.n_stages + 1)]
        if self.finetune_epochs:
            out.append(("finetune", self.n_stages, self.finetune_epochs))
        return out


def lr_schedule(lr0: float, n: int, alpha: float) -> float:
    """Learning rate for epoch ``n`` (1-based): ``lr0 / (1 + alpha*n)**(n - 1)``."""
    if n < 1:
        raise ConfigurationError(f"epoch index must be >= 1, got {n}")
    return lr0 / (1.0 + alpha * n) ** (n - 1)


@dataclass
class TrainState:
    epoch: int = 0  # last completed epoch within the current phase
    phase: int = 0
    global_epoch: int = 0
    seed: int = 0
    velocity: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    rng_state: Optional[dict] = None
    best: float = float("inf")
    bad_epochs: int = 0
    done: bool = False

    def rng(self) -> np.random.Generator:
        g = np.random.default_rng(self.seed)
        if self.rng_state is not None:
            g.bit_generator.state = self.rng_state
        return g

    def to_manifest(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "velocity"}
        return d


def sgd_step(params: Sequence[Tensor], state: TrainState, cfg: OptimizerConfig, lr: float, names=None) -> None:
    """Heavy-ball update ``v = mu*v - lr*(g + wd*p); p = p + v`` in place."""
    names = names or [p.name or str(i) for i, p in enumerate(params)]
    updates = []
    for name, p in zip(names, params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = cfg.momentum * v - lr * (g + cfg.weight_decay * p.data)
        if not np.isfinite(v).all():
            raise NumericError(f"non-finite update for parameter {name}")
        updates.append((name, p, v.astype(p.data.dtype, copy=False)))
    # commit only once every update is known to be finite
    for name, p, v in updates:
        state.velocity[name] = v
        p.data = p.data + v


# ------------------------------------------------------------------ losses


@dataclass
class Batch:
    image: np.ndarray  # network input, native resolution
    left: np.ndarray  # loss-resolution views
    right: np.ndarray
    target: Optional[np.ndarray] = None  # proxy disparity (N,1,h,w)
    valid: Optional[np.ndarray] = None


def unsupervised_loss(disp: Tensor, batch: Batch, gamma: float):
    parts = total_loss(Tensor(batch.left, dtype=disp.dtype), Tensor(batch.right, dtype=disp.dtype), disp, gamma)
    return parts.total, {"recons": parts.recons.item(), "smooth": parts.smooth.item()}


def proxy_loss(disp: Tensor, batch: Batch, gamma: float = 0.0):
    """Mean squared disparity error over valid label pixels (0 when none are valid)."""
    valid = batch.valid.astype(disp.dtype)
    count = float(valid.sum())
    diff = ops.sub(disp, batch.target.astype(disp.dtype))
    w = valid / count if count > 0 else valid
    loss = ops.sum(ops.mul(ops.square(diff), w))
    return loss, {"recons": loss.item(), "smooth": 0.0}


LOSSES = {"unsupervised": unsupervised_loss, "proxy": proxy_loss}


# ---------------------------------------------------------------- training


class StageData:
    """A dataset prepared for one output resolution, stacked for batching."""

    def __init__(self, samples: Sequence[StereoSample], out_hw, dtype, labels=None):
        if not samples:
            raise ConfigurationError("empty dataset")
        small = [resize_for_stage(s, out_hw) for s in samples]
        self.image = np.stack([s.left for s in samples]).astype(dtype)
        self.left = np.stack([s.left for s in small]).astype(dtype)
        self.right = np.stack([s.right for s in small]).astype(dtype)
        self.target = self.valid = None
        if labels is not None:
            from .baseline import resize_labels  # local import: baseline depends on trainer

            lab = [resize_labels(l, out_hw) for l in labels]
            self.target = np.stack([l.disparity for l in lab])[:, None].astype(dtype)
            self.valid = np.stack([l.valid for l in lab])[:, None].astype(dtype)

    def __len__(self) -> int:
        return self.image.shape[0]

    def batch(self, idx) -> Batch:
        t = None if self.target is None else self.target[idx]
        v = None if self.valid is None else self.valid[idx]
        return Batch(self.image[idx], self.left[idx], self.right[idx], t, v)


def run_epoch(net: Network, data: StageData, order: np.ndarray, cfg: OptimizerConfig, state: TrainState,
              lr: float, batch_size: int, loss_fn, gamma: float) -> dict:
    """One pass over ``order``; returns sample-weighted mean loss parts."""
    names = [k for k, _ in net.named_parameters()]
    params = [p for _, p in net.named_parameters()]
    sums = {"recons": 0.0, "smooth": 0.0, "total": 0.0}
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        batch = data.batch(idx)
        net.zero_grad()
        # non-finite values are caught by the op checks; numpy's own warnings would only repeat them
        with np.errstate(over="ignore", invalid="ignore"), Tape() as tape:
            disp = net.forward(Tensor(batch.image, dtype=net.dtype))
            loss, parts = loss_fn(disp, batch, gamma)
        with np.errstate(over="ignore", invalid="ignore"):
            backward(tape, loss)
        sgd_step(params, state, cfg, lr, names)
        k = len(idx)
        sums["recons"] += parts["recons"] * k
        sums["smooth"] += parts["smooth"] * k
        sums["total"] += loss.item() * k
    return {k: v / len(order) for k, v in sums.items()}


def evaluate_loss(net: Network, data: StageData, loss_fn, gamma: float, batch_size: int = 16) -> float:
    total = 0.0
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        batch = data.batch(idx)
        disp = net.forward(Tensor(batch.image, dtype=net.dtype))
        loss, _ = loss_fn(disp, batch, gamma)
        total += loss.item() * len(idx)
    return total / len(data)


class Trainer:
    """Runs the phase schedule, resumable at any epoch boundary."""

    def __init__(self, opt: OptimizerConfig = None, train: TrainConfig = None, seed: int = 0,
                 on_epoch: Optional[Callable] = None, on_phase_end: Optional[Callable] = None):
        self.opt = opt or OptimizerConfig()
        self.cfg = train or TrainConfig()
        self.seed = seed
        self.on_epoch = on_epoch
        self.on_phase_end = on_phase_end

    def new_state(self) -> TrainState:
        return TrainState(seed=self.seed)

    def phase_lr0(self, rank: int) -> float:
        return self.opt.lr0 / self.opt.stage_lr_divisor**rank

    def _phase_samples(self, name: str, samples, labels):
        if name != "finetune":
            return samples, labels
        rng = np.random.default_rng([self.seed, 8])
        aug = []
        for s in samples:
            aug.extend(augment(s, rng))
        if labels is not None:
            raise ConfigurationError("augmented fine-tuning is defined for the unsupervised loss only")
        return aug, None

    def run(self, net: Network, samples: Sequence[StereoSample], state: Optional[TrainState] = None,
            labels=None, max_epochs: Optional[int] = None) -> TrainState:
        """Train through all phases (or ``max_epochs`` more epochs, for testing resumes)."""
        state = state or self.new_state()
        loss_fn = LOSSES[self.cfg.mode]
        if self.cfg.mode == "proxy" and labels is None:
            raise ConfigurationError("proxy mode needs labels")
        native = tuple(net.cfg.input_size)
        for s in samples:
            if tuple(s.resolution) != native:
                raise ConfigurationError(f"sample {s.id} is {s.resolution}, network expects {native}")
        budget = max_epochs
        phases = self.cfg.phases()
        while state.phase < len(phases):
            name, rank, epochs = phases[state.phase]
            while net.n_stages < rank:
                grow_stage(net)
            if state.epoch == 0:
                state.velocity = {}
                state.best = float("inf")
                state.bad_epochs = 0
            if state.epoch < epochs:
                ph_samples, ph_labels = self._phase_samples(name, samples, labels)
                data = StageData(ph_samples, net.output_resolution(), net.dtype, ph_labels)
            rng = state.rng()
            while state.epoch < epochs:
                if budget is not None and budget <= 0:
                    return state
                n = state.epoch + 1
                n_decay = n if self.cfg.decay_index == "stage" else state.global_epoch + 1
                lr = lr_schedule(self.phase_lr0(rank), n_decay, self.opt.alpha)
                order = rng.permutation(len(data))
                parts = run_epoch(net, data, order, self.opt, state, lr, self.cfg.batch_size, loss_fn, self.cfg.gamma)
                state.rng_state = rng.bit_generator.state
                state.epoch = n
                state.global_epoch += 1
                row = {"epoch": state.global_epoch, "stage": name, "lr": lr, **parts}
                state.history.append(row)
                self._check_divergence(state, parts["total"], name)
                if self.on_epoch:
                    self.on_epoch(net, state, row)
                if budget is not None:
                    budget -= 1
            if self.on_phase_end:
                self.on_phase_end(net, state, name)
            state.phase += 1
            state.epoch = 0
        state.done = True
        return state

    def _check_divergence(self, state: TrainState, loss: float, phase: str) -> None:
        if loss > self.cfg.divergence_factor * state.best:
            state.bad_epochs += 1
        else:
            state.bad_epochs = 0
        state.best = min(state.best, loss)
        if state.bad_epochs >= self.cfg.divergence_patience:
            raise DivergenceError(
                f"phase {phase}: loss {loss:.6g} exceeded {self.cfg.divergence_factor}x best "
                f"({state.best:.6g}) for {state.bad_epochs} consecutive epochs"
            )


def train_stage(net: Network, dataset: Sequence[StereoSample], opt: OptimizerConfig = None, epochs: int = 100,
                rank: Optional[int] = None, batch_size: int = 16, gamma: float = 0.01, seed: int = 0,
                mode: str = "unsupervised", labels=None) -> list:
    """Train the network as currently grown for ``epochs``; returns the loss curve rows."""
    opt = opt or OptimizerConfig()
    rank = net.n_stages if rank is None else rank
    tcfg = TrainConfig(batch_size=batch_size, epochs_coarse=epochs, n_stages=0, gamma=gamma, mode=mode)
    trainer = Trainer(opt, tcfg, seed)
    trainer.phase_lr0 = lambda _r: opt.lr0 / opt.stage_lr_divisor**rank
    state = trainer.run(net, dataset, labels=labels)
    for row in state.history:
        row["stage"] = f"stage{rank}" if rank else "coarse"
    return state.history


def finetune_with_augmentation(net: Network, dataset: Sequence[StereoSample], opt: OptimizerConfig = None,
                               epochs: int = 100, batch_size: int = 16, gamma: float = 0.01, seed: int = 0) -> list:
    """Continue training the grown network on the 8x augmented dataset."""
    opt = opt or OptimizerConfig()
    rank = net.n_stages
    tcfg = TrainConfig(batch_size=batch_size, epochs_coarse=0, n_stages=rank, finetune_epochs=epochs, gamma=gamma)
    trainer = Trainer(opt, tcfg, seed)
    state = trainer.new_state()
    state.phase = rank + 1  # skip straight to the fine-tune phase
    return trainer.run(net, dataset, state).history


def write_curve(path, history: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, extrasaction="ignore")
        w.writeheader()
        for row in history:
            w.writerow(row)

"""Disparity-predicting CNN: AlexNet-style trunk up to C5, a fully
convolutional head, and a ladder of 2x upsampling stages with optional
zero-initialised 1x1 skip branches.

The network's last channel is disparity as a fraction of the output width;
:meth:`Network.forward` multiplies by the output width so callers always see
pixels at the output resolution.  Expressing the raw output relative to the
width is what lets a freshly grown stage start from a plain bilinear
upsampling of the coarser prediction.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .errors import ConfigurationError, NumericError
from .tensor import Tensor

logger = logging.getLogger(__name__)

KINDS = ("conv", "pool", "lrn", "fullyconv", "upsample", "skip_fuse", "relu", "crop_pad")
INITS = ("random", "zero", "bilinear", "none")


@dataclass
class LayerSpec:
    id: str
    kind: str
    kernel: tuple = (1, 1)
    stride: tuple = (1, 1)
    pad: tuple = (0, 0, 0, 0)
    in_channels: int = 0
    out_channels: int = 0
    init: str = "none"
    source: Optional[str] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"layer {self.id}: unknown kind {self.kind!r}")
        if self.init not in INITS:
            raise ConfigurationError(f"layer {self.id}: unknown init {self.init!r}")
        self.kernel = tuple(int(k) for k in self.kernel)
        self.stride = tuple(int(s) for s in self.stride)
        self.pad = ops.pad4(self.pad)

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "fullyconv", "upsample")

    def param_shapes(self) -> dict:
        kh, kw = self.kernel
        if self.kind in ("conv", "fullyconv"):
            return {"weight": (self.out_channels, self.in_channels, kh, kw), "bias": (self.out_channels,)}
        if self.kind == "upsample":
            return {"weight": (self.in_channels, self.out_channels, kh, kw)}
        return {}

    def param_count(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def geometry(self) -> str:
        if self.kind in ("conv", "fullyconv", "pool"):
            return f"k={self.kernel[0]}x{self.kernel[1]} s={self.stride[0]}x{self.stride[1]} pad={self.pad}"
        if self.kind == "upsample":
            return f"k={self.kernel[0]}x{self.kernel[1]} s={self.stride[0]} pad=1 (edge)"
        if self.kind == "crop_pad":
            return f"offsets={self.pad}"
        if self.kind == "lrn":
            return "r={depth_radius} a={alpha} b={beta} k={k}".format(**self.params)
        if self.kind == "skip_fuse":
            return f"+ {self.source}"
        return ""


@dataclass
class StageDescriptor:
    """One upsampling step: upsample, crop/pad to the target size, optional skip."""

    id: str
    upsample: LayerSpec
    crop: LayerSpec
    skip: Optional[LayerSpec] = None
    fuse: Optional[LayerSpec] = None

    def layers(self) -> list:
        out = [self.upsample, self.crop]
        if self.skip is not None:
            out += [self.skip, self.fuse]
        return out


@dataclass
class NetworkConfig:
    input_size: tuple
    in_channels: int
    trunk: list
    head: list
    stages: list
    init_rule: str = "uniform_fan_in"

    def layer_ids(self) -> list:
        ids = [l.id for l in self.trunk + self.head]
        for st in self.stages:
            ids += [l.id for l in st.layers()]
        return ids

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        def spec(x):
            return LayerSpec(**{**x, "kernel": tuple(x["kernel"]), "stride": tuple(x["stride"]), "pad": tuple(x["pad"])})

        stages = []
        for s in d["stages"]:
            stages.append(
                StageDescriptor(
                    id=s["id"],
                    upsample=spec(s["upsample"]),
                    crop=spec(s["crop"]),
                    skip=spec(s["skip"]) if s.get("skip") else None,
                    fuse=spec(s["fuse"]) if s.get("fuse") else None,
                )
            )
        return cls(
            input_size=tuple(d["input_size"]),
            in_channels=int(d["in_channels"]),
            trunk=[spec(x) for x in d["trunk"]],
            head=[spec(x) for x in d["head"]],
            stages=stages,
            init_rule=d.get("init_rule", "uniform_fan_in"),
        )

    # ---------------------------------------------------------- profiles

    @classmethod
    def paper(cls, head_kernel=(5, 5), head_filters=2048, in_channels=3) -> "NetworkConfig":
        """Full-size network for a 188x620 input."""
        return _alexnet_config(
            input_size=(188, 620),
            in_channels=in_channels,
            channels=(96, 256, 384, 384, 256),
            head_filters=head_filters,
            head_kernel=head_kernel,
            c1=dict(kernel=(11, 11), stride=(4, 4), pad=0),
            pool_pads=(0, 0, (0, 1, 0, 0)),
            stage_crops=[(0, 0, 0, 1), (1, 1, 1, 1), 0, 0, 0],
        )

    @classmethod
    def desk(cls, head_kernel=(5, 5), head_filters=128, in_channels=3) -> "NetworkConfig":
        """1/8-width network for a 64x192 input, three upsampling stages."""
        return _alexnet_config(
            input_size=(64, 192),
            in_channels=in_channels,
            channels=(12, 32, 48, 48, 32),
            head_filters=head_filters,
            head_kernel=head_kernel,
            c1=dict(kernel=(7, 7), stride=(2, 2), pad=3),
            pool_pads=((0, 1, 0, 1), (0, 1, 0, 1), (0, 1, 0, 1)),
            stage_crops=[0, 0, 0],
        )

    @classmethod
    def for_profile(cls, profile: str, **kw) -> "NetworkConfig":
        if profile == "paper":
            return cls.paper(**kw)
        if profile == "desk":
            return cls.desk(**kw)
        raise ConfigurationError(f"unknown profile {profile!r}")


LRN_DEFAULTS = dict(depth_radius=2, alpha=1e-4, beta=0.75, k=2.0)


def _alexnet_config(input_size, in_channels, channels, head_filters, head_kernel, c1, pool_pads, stage_crops):
    c1c, c2c, c3c, c4c, c5c = channels
    kh, kw = head_kernel
    head_pad = ((kh - 1) // 2, kh // 2, (kw - 1) // 2, kw // 2)
    trunk = [
        LayerSpec("c1", "conv", c1["kernel"], c1["stride"], c1["pad"], in_channels, c1c, "random"),
        LayerSpec("relu1", "relu"),
        LayerSpec("p1", "pool", (3, 3), (2, 2), pool_pads[0]),
        LayerSpec("lrn1", "lrn", params=dict(LRN_DEFAULTS)),
        LayerSpec("c2", "conv", (5, 5), (1, 1), 2, c1c, c2c, "random"),
        LayerSpec("relu2", "relu"),
        LayerSpec("p2", "pool", (3, 3), (2, 2), pool_pads[1]),
        LayerSpec("lrn2", "lrn", params=dict(LRN_DEFAULTS)),
        LayerSpec("c3", "conv", (3, 3), (1, 1), 1, c2c, c3c, "random"),
        LayerSpec("relu3", "relu"),
        LayerSpec("c4", "conv", (3, 3), (1, 1), 1, c3c, c4c, "random"),
        LayerSpec("relu4", "relu"),
        LayerSpec("c5", "conv", (3, 3), (1, 1), 1, c4c, c5c, "random"),
        LayerSpec("relu5", "relu"),
        LayerSpec("p3", "pool", (3, 3), (2, 2), pool_pads[2]),
    ]
    head = [
        LayerSpec("f6", "fullyconv", (kh, kw), (1, 1), head_pad, c5c, head_filters, "random"),
        LayerSpec("relu6", "relu"),
        LayerSpec("f7", "fullyconv", (5, 5), (1, 1), 2, head_filters, 1, "zero"),
    ]
    # the first two stages align with the inputs of p3 and p2 and carry skips
    skip_sources = [("relu5", c5c), ("relu2", c2c)]
    stages = []
    for i, crop in enumerate(stage_crops):
        n = 8 + i
        up = LayerSpec(f"up{n}", "upsample", (4, 4), (2, 2), 0, 1, 1, "bilinear")
        cp = LayerSpec(f"crop{n}", "crop_pad", pad=crop)
        skip = fuse = None
        if i < len(skip_sources):
            src, ch = skip_sources[i]
            skip = LayerSpec(f"skip{n}", "conv", (1, 1), (1, 1), 0, ch, 1, "zero", source=src)
            fuse = LayerSpec(f"fuse{n}", "skip_fuse", source=f"skip{n}")
        stages.append(StageDescriptor(f"L{n}", up, cp, skip, fuse))
    return NetworkConfig(tuple(input_size), in_channels, trunk, head, stages)


# ------------------------------------------------------------------ shapes


def _layer_out_shape(spec: LayerSpec, shape: tuple) -> tuple:
    c, h, w = shape
    t, b, l, r = spec.pad
    if spec.kind in ("conv", "fullyconv"):
        if c != spec.in_channels:
            raise ConfigurationError(f"layer {spec.id}: expects {spec.in_channels} channels, gets {c}")
        ho = ops.conv_output_size(h, spec.kernel[0], spec.stride[0], t, b)
        wo = ops.conv_output_size(w, spec.kernel[1], spec.stride[1], l, r)
        if ho < 1 or wo < 1:
            raise ConfigurationError(f"layer {spec.id}: output would be {ho}x{wo}")
        return spec.out_channels, ho, wo
    if spec.kind == "pool":
        ho = ops.conv_output_size(h, spec.kernel[0], spec.stride[0], t, b)
        wo = ops.conv_output_size(w, spec.kernel[1], spec.stride[1], l, r)
        if ho < 1 or wo < 1 or spec.kernel[0] > h + t + b or spec.kernel[1] > w + l + r:
            raise ConfigurationError(f"layer {spec.id}: pooling window larger than its {h}x{w} input")
        return c, ho, wo
    if spec.kind == "upsample":
        return spec.out_channels, h * spec.stride[0], w * spec.stride[1]
    if spec.kind == "crop_pad":
        ho, wo = h + t + b, w + l + r
        if ho < 1 or wo < 1:
            raise ConfigurationError(f"layer {spec.id}: crop removes the map")
        return c, ho, wo
    return shape


def trunk_shapes(cfg: NetworkConfig, input_size=None) -> dict:
    """Per-layer output shapes (C, H, W) through trunk and head."""
    h, w = input_size or cfg.input_size
    shape = (cfg.in_channels, h, w)
    shapes = {}
    for spec in cfg.trunk + cfg.head:
        shape = _layer_out_shape(spec, shape)
        shapes[spec.id] = shape
    return shapes


def stage_ladder(cfg: NetworkConfig, n_stages: Optional[int] = None, input_size=None) -> list:
    """``[(stage id, (H, W)), ...]`` starting with the coarse head output ``"L7"``."""
    shapes = trunk_shapes(cfg, input_size)
    shape = shapes[cfg.head[-1].id]
    ladder = [("L7", shape[1:])]
    stages = cfg.stages if n_stages is None else cfg.stages[:n_stages]
    for st in stages:
        shape = _layer_out_shape(st.upsample, shape)
        shape = _layer_out_shape(st.crop, shape)
        shapes[st.upsample.id] = shape
        if st.skip is not None:
            src = shapes.get(st.skip.source)
            if src is None:
                raise ConfigurationError(f"stage {st.id}: unknown skip source {st.skip.source!r}")
            if src[1:] != shape[1:]:
                raise ConfigurationError(
                    f"stage {st.id}: upsampled map {shape[1:]} does not match skip source "
                    f"{st.skip.source} {src[1:]} after crop/pad {st.crop.pad}"
                )
        ladder.append((st.id, shape[1:]))
    return ladder


def _pool_inputs(cfg: NetworkConfig) -> set:
    layers = cfg.trunk + cfg.head
    return {layers[i - 1].id for i, l in enumerate(layers) if l.kind == "pool" and i > 0}


def validate_config(cfg: NetworkConfig) -> None:
    ids = cfg.layer_ids()
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise ConfigurationError(f"duplicate layer ids: {sorted(dup)}")
    if len(cfg.stages) > 5:
        raise ConfigurationError("at most 5 upsampling stages (L8..L12)")
    terminal = cfg.head[-1]
    if terminal.kind != "fullyconv" or terminal.init != "zero" or terminal.kernel != (5, 5):
        raise ConfigurationError(f"terminal layer {terminal.id} must be a zero-initialised 5x5 fullyconv")
    if terminal.out_channels != 1:
        raise ConfigurationError("terminal layer must produce one disparity channel")
    allowed = _pool_inputs(cfg)
    for st in cfg.stages:
        if st.skip is not None and st.skip.source not in allowed:
            raise ConfigurationError(
                f"stage {st.id}: skip source {st.skip.source!r} is not the input of a pooling layer"
            )
    stage_ladder(cfg)


# ----------------------------------------------------------------- network


INIT_RULES = {"uniform_fan_in": 1.0, "he_uniform": 6.0}


def _init_param(spec: LayerSpec, name: str, shape: tuple, rng: np.random.Generator, dtype,
                rule: str = "uniform_fan_in") -> np.ndarray:
    if name == "bias" or spec.init == "zero":
        return np.zeros(shape, dtype=dtype)
    if spec.init == "bilinear":
        factor = spec.stride[0]
        k = ops.bilinear_kernel(factor, shape[0], dtype)
        if k.shape != shape:
            raise ConfigurationError(f"layer {spec.id}: bilinear init needs kernel {k.shape[2:]}")
        return k
    if rule not in INIT_RULES:
        raise ConfigurationError(f"unknown init rule {rule!r}")
    fan_in = int(np.prod(shape[1:]))
    s = np.sqrt(INIT_RULES[rule] / fan_in)
    return rng.uniform(-s, s, size=shape).astype(dtype)


class Network:
    """Trunk + head + the stages grown so far.  Parameters live in ``params``."""

    def __init__(self, cfg: NetworkConfig, profile: str = "desk", seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.profile = profile
        self.seed = seed
        self.dtype = np.dtype(dtype).type
        self.rng = np.random.default_rng(seed)
        self.params: dict = {}
        self.n_stages = 0
        self.skip_enabled = True

    # -- parameters ---------------------------------------------------------

    def _alloc(self, spec: LayerSpec) -> None:
        for name, shape in spec.param_shapes().items():
            key = f"{spec.id}.{name}"
            if key in self.params:
                raise ConfigurationError(f"parameter {key} already allocated")
            self.params[key] = Tensor(
                _init_param(spec, name, shape, self.rng, self.dtype, self.cfg.init_rule), requires_grad=True, name=key
            )

    def parameters(self) -> list:
        return list(self.params.values())

    def named_parameters(self) -> list:
        return list(self.params.items())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def snapshot(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict) -> None:
        for k, v in state.items():
            if k not in self.params or self.params[k].shape != v.shape:
                raise ConfigurationError(f"state entry {k} does not fit the network")
            self.params[k].data = np.ascontiguousarray(v, dtype=self.dtype)

    # -- structure -----------------------------------------------------------

    @property
    def active_stages(self) -> list:
        return self.cfg.stages[: self.n_stages]

    def walk(self) -> list:
        """LayerSpecs executed by :meth:`forward`, in order."""
        layers = list(self.cfg.trunk) + list(self.cfg.head)
        for st in self.active_stages:
            layers += st.layers()
        return layers

    def output_resolution(self, input_size=None) -> tuple:
        return stage_ladder(self.cfg, self.n_stages, input_size)[-1][1]

    def ladder(self, input_size=None) -> list:
        return stage_ladder(self.cfg, None, input_size)

    def describe(self) -> list:
        """One line per executed layer: id, kind, geometry, parameter count."""
        lines = []
        for spec in self.walk():
            lines.append(f"{spec.id:<8} {spec.kind:<10} {spec.geometry():<40} params={spec.param_count()}")
        return lines

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    # -- forward -------------------------------------------------------------

    def _apply(self, spec: LayerSpec, x: Tensor, acts: dict) -> Tensor:
        p = self.params
        if spec.kind in ("conv", "fullyconv"):
            src = acts[spec.source] if spec.source else x
            return ops.conv2d(src, p[f"{spec.id}.weight"], p[f"{spec.id}.bias"], spec.stride, spec.pad)
        if spec.kind == "relu":
            return ops.relu(x)
        if spec.kind == "pool":
            return ops.maxpool2d(x, spec.kernel, spec.stride, spec.pad)
        if spec.kind == "lrn":
            return ops.lrn(x, **spec.params)
        if spec.kind == "upsample":
            return ops.bilinear_upsample(x, spec.stride[0], p[f"{spec.id}.weight"])
        if spec.kind == "crop_pad":
            return ops.crop_pad(x, spec.pad) if any(spec.pad) else x
        raise ConfigurationError(f"layer {spec.id}: cannot apply kind {spec.kind}")

    def forward_raw(self, image: Tensor) -> Tensor:
        """Width-normalised disparity (N, 1, h, w) of the finest built stage."""
        x = image if image.ndim == 4 else ops.reshape(image, (1,) + image.shape)
        acts = {}
        for spec in self.cfg.trunk + self.cfg.head:
            x = self._guard(spec, x, acts)
            acts[spec.id] = x
        for st in self.active_stages:
            x = self._guard(st.upsample, x, acts)
            x = self._guard(st.crop, x, acts)
            if st.skip is not None and self.skip_enabled:
                branch = self._guard(st.skip, x, acts)
                x = ops.add(x, branch)
        return x

    def _guard(self, spec: LayerSpec, x: Tensor, acts: dict) -> Tensor:
        try:
            return self._apply(spec, x, acts)
        except NumericError as exc:
            raise NumericError(f"layer {spec.id}: {exc}") from exc

    def forward(self, image: Tensor) -> Tensor:
        """Disparity in pixels of the output resolution, shape (N, 1, h, w)."""
        raw = self.forward_raw(image)
        return ops.scale(raw, float(raw.shape[-1]))

    __call__ = forward

    def clone(self) -> "Network":
        other = Network(self.cfg, self.profile, self.seed, self.dtype)
        other.rng = copy.deepcopy(self.rng)
        other.n_stages = self.n_stages
        other.skip_enabled = self.skip_enabled
        for k, v in self.params.items():
            other.params[k] = Tensor(v.data.copy(), requires_grad=True, name=k)
        return other


def build_network(cfg: Optional[NetworkConfig] = None, scale_profile: str = "desk", seed: int = 0,
                  dtype=np.float32, stages: int = 0) -> Network:
    """Allocate and initialise trunk and head (plus ``stages`` upsampling stages)."""
    cfg = cfg or NetworkConfig.for_profile(scale_profile)
    validate_config(cfg)
    net = Network(cfg, scale_profile, seed, dtype)
    for spec in cfg.trunk + cfg.head:
        net._alloc(spec)
    for _ in range(stages):
        grow_stage(net)
    return net


def grow_stage(net: Network, stage: Optional[StageDescriptor] = None) -> Network:
    """Append the next upsampling stage; existing parameters are untouched."""
    if net.n_stages >= len(net.cfg.stages):
        if stage is None:
            raise ConfigurationError("all configured stages are already built")
    if stage is not None:
        if net.n_stages < len(net.cfg.stages):
            if net.cfg.stages[net.n_stages].id != stage.id:
                raise ConfigurationError(f"next stage is {net.cfg.stages[net.n_stages].id}, got {stage.id}")
        else:
            net.cfg = copy.deepcopy(net.cfg)
            net.cfg.stages.append(stage)
            validate_config(net.cfg)
    st = net.cfg.stages[net.n_stages]
    stage_ladder(net.cfg, net.n_stages + 1)
    net._alloc(st.upsample)
    if st.skip is not None:
        net._alloc(st.skip)
    net.n_stages += 1
    logger.info("grew stage %s -> output %s", st.id, net.output_resolution())
    return net

"""Run configuration: one YAML file, every default spelled out on dump."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, fields
from pathlib import Path
from typing import Optional

import yaml

from .baseline import HSConfig
from .dataio import SceneFamily
from .encoder import NetworkConfig
from .errors import ConfigurationError
from .geometry import Calibration
from .trainer import OptimizerConfig, TrainConfig

PROFILES = ("paper", "desk")
MODES = ("unsupervised", "proxy_hs")


def _family_defaults() -> dict:
    fam = SceneFamily(layout="ground", n_objects=(0, 2), frequency_range=(0.01, 0.08), background_disparity=(2.0, 4.0))
    d = asdict(fam)
    d["calibration"] = {"focal_px": fam.calibration.focal_px, "baseline_m": fam.calibration.baseline_m}
    return d


def default_config(profile: str = "desk") -> dict:
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}")
    train = asdict(TrainConfig())
    if profile == "paper":
        train.update(epochs_coarse=100, epochs_finer=100, n_stages=5, finetune_epochs=100)
    else:
        train.update(batch_size=4)
    return {
        "profile": profile,
        "seed": 0,
        "mode": "unsupervised",
        "output_dir": "runs/" + profile,
        "network": {"init_rule": "he_uniform", "head_filters": 2048 if profile == "paper" else 128,
                    "head_kernel": [5, 5]},
        "optimizer": asdict(OptimizerConfig()),
        "training": train,
        "geometry": {"gamma": 0.01, "clamp": [1.0, 50.0], "calibration": {"focal_px": 100.0, "baseline_m": 0.54}},
        "data": {
            "train": None,
            "eval": None,
            "synthetic": {"n_train": 16, "n_eval": 8, "train_seed": 1, "eval_seed": 2, "family": _family_defaults()},
        },
        "baseline": {**asdict(HSConfig()), "engine": "hs", "holes": False, "threshold": 1.0},
        "eval": {"crop": None},
        "checkpoint_every": 0,
    }


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if k not in out:
            raise ConfigurationError(f"unknown config key {where + k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict) and k not in ("family",):
            out[k] = _merge(out[k], v, where + k + ".")
        elif k == "family" and isinstance(v, dict):
            fam = copy.deepcopy(out[k])
            for fk, fv in v.items():
                if fk not in fam:
                    raise ConfigurationError(f"unknown config key {where + 'family.' + fk!r}")
                fam[fk] = fv
            out[k] = fam
        else:
            out[k] = v
    return out


def resolve(raw: Optional[dict] = None, profile: Optional[str] = None, seed: Optional[int] = None,
            output: Optional[str] = None) -> dict:
    """Defaults for the chosen profile overlaid with ``raw`` and CLI overrides."""
    raw = dict(raw or {})
    profile = profile or raw.get("profile", "desk")
    cfg = _merge(default_config(profile), {**raw, "profile": profile})
    cfg = json.loads(json.dumps(cfg))  # plain lists and dicts, as a YAML dump reads back
    if seed is not None:
        cfg["seed"] = int(seed)
    if output is not None:
        cfg["output_dir"] = str(output)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if cfg["mode"] not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}")
    optimizer_config(cfg)
    train_config(cfg)
    hs_config(cfg)
    calibration(cfg)
    lo, hi = cfg["geometry"]["clamp"]
    if not (0 < lo < hi):
        raise ConfigurationError("geometry.clamp must satisfy 0 < min < max")
    for key in ("train", "eval"):
        p = cfg["data"][key]
        if p is not None and not Path(p).exists():
            raise ConfigurationError(f"data.{key} path {p} does not exist")
    network_config(cfg)


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return data


def dump_config(cfg: dict, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False))


def _pick(cls, d: dict):
    names = {f.name for f in fields(cls)}
    return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names})


def optimizer_config(cfg: dict) -> OptimizerConfig:
    return _pick(OptimizerConfig, cfg["optimizer"])


def train_config(cfg: dict) -> TrainConfig:
    tc = dict(cfg["training"])
    tc["gamma"] = cfg["geometry"]["gamma"]
    tc["mode"] = "proxy" if cfg["mode"] == "proxy_hs" else "unsupervised"
    return _pick(TrainConfig, tc)


def hs_config(cfg: dict) -> HSConfig:
    return _pick(HSConfig, cfg["baseline"])


def calibration(cfg: dict) -> Calibration:
    return Calibration(**cfg["geometry"]["calibration"])


def scene_family(cfg: dict) -> SceneFamily:
    fam = dict(cfg["data"]["synthetic"]["family"])
    cal = fam.pop("calibration", None)
    obj = _pick(SceneFamily, fam)
    if cal is not None:
        obj.calibration = Calibration(**cal)
    return obj


def network_config(cfg: dict) -> NetworkConfig:
    net = cfg["network"]
    if "architecture" in net and net["architecture"]:
        nc = NetworkConfig.from_dict(net["architecture"])
    else:
        nc = NetworkConfig.for_profile(cfg["profile"], head_kernel=tuple(net["head_kernel"]),
                                       head_filters=int(net["head_filters"]))
    nc.init_rule = net.get("init_rule", nc.init_rule)
    return nc

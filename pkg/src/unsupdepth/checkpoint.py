"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic     8 bytes  b"UDEPTHCK"
    version   u32
    hash      u32 length + ASCII config hash
    manifest  u64 length + UTF-8 JSON (architecture, train state, tensor index)
    tensors   per entry: u64 byte length + raw little-endian array bytes

Tensor order, dtype and shape are recorded in the manifest, so a load
reproduces every array bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .encoder import Network, NetworkConfig, build_network, grow_stage
from .errors import ConfigurationError
from .trainer import TrainState

logger = logging.getLogger(__name__)

MAGIC = b"UDEPTHCK"
VERSION = 1


def config_hash(config: dict) -> str:
    """Digest of everything that affects training; the output location is excluded."""
    ident = {k: v for k, v in config.items() if k != "output_dir"}
    blob = json.dumps(ident, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _tensor_bytes(arr: np.ndarray) -> bytes:
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return np.ascontiguousarray(le).tobytes()


def save_checkpoint(path, net: Network, state: Optional[TrainState] = None, cfg_hash: str = "",
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    tensors = [(f"param/{k}", v.data) for k, v in net.named_parameters()]
    if state is not None:
        tensors += [(f"velocity/{k}", v) for k, v in sorted(state.velocity.items())]
    manifest = {
        "architecture": net.cfg.to_dict(),
        "profile": net.profile,
        "seed": net.seed,
        "dtype": np.dtype(net.dtype).name,
        "n_stages": net.n_stages,
        "skip_enabled": net.skip_enabled,
        "net_rng": net.rng.bit_generator.state,
        "train_state": state.to_manifest() if state is not None else None,
        "tensors": [{"name": n, "dtype": np.dtype(a.dtype).str.replace(">", "<").replace("=", "<"),
                     "shape": list(a.shape)} for n, a in tensors],
        "extra": extra or {},
    }
    body = json.dumps(manifest, sort_keys=True).encode()
    h = cfg_hash.encode("ascii")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(h)))
        fh.write(h)
        fh.write(struct.pack("<Q", len(body)))
        fh.write(body)
        for _, arr in tensors:
            raw = _tensor_bytes(arr)
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
    tmp.replace(path)
    return path


def read_checkpoint(path) -> tuple:
    """``(config_hash, manifest, {name: array})``."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ConfigurationError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        cfg_hash = fh.read(hlen).decode("ascii")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(mlen).decode())
        arrays = {}
        for entry in manifest["tensors"]:
            (n,) = struct.unpack("<Q", fh.read(8))
            raw = fh.read(n)
            if len(raw) != n:
                raise ConfigurationError(f"{path}: truncated tensor {entry['name']}")
            arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
            arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return cfg_hash, manifest, arrays


def load_checkpoint(path, expected_hash: Optional[str] = None, allow_mismatch: bool = False) -> tuple:
    """Rebuild ``(net, state, manifest)`` from a checkpoint file."""
    cfg_hash, manifest, arrays = read_checkpoint(path)
    if expected_hash is not None and cfg_hash != expected_hash:
        msg = f"{path}: config hash {cfg_hash[:12]} differs from expected {expected_hash[:12]}"
        if not allow_mismatch:
            raise ConfigurationError(msg)
        logger.warning(msg)
    cfg = NetworkConfig.from_dict(manifest["architecture"])
    net = build_network(cfg, manifest["profile"], seed=manifest["seed"], dtype=np.dtype(manifest["dtype"]).type)
    for _ in range(manifest["n_stages"]):
        grow_stage(net)
    net.skip_enabled = manifest["skip_enabled"]
    net.rng.bit_generator.state = manifest["net_rng"]
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    if set(params) != set(net.params):
        raise ConfigurationError(f"{path}: parameter set does not match the stored architecture")
    net.load_state(params)
    state = None
    if manifest.get("train_state") is not None:
        ts = dict(manifest["train_state"])
        state = TrainState(**ts)
        state.velocity = {k[len("velocity/"):]: v.copy() for k, v in arrays.items() if k.startswith("velocity/")}
    return net, state, manifest

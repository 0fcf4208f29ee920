"""Command-line entry point: synth, train, eval, gradcheck, baseline, dump-arch.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import config as C
from .baseline import hs_stereo, make_proxy_labels
from .checkpoint import config_hash, load_checkpoint, save_checkpoint
from .dataio import (
    SyntheticSceneSpec,
    generate_synthetic_pair,
    make_dataset,
    read_dataset,
    save_raw_f32,
    write_dataset,
)
from .encoder import build_network, stage_ladder
from .errors import ConfigurationError, DivergenceError, EvaluationError, NumericError, SpecError
from .evalkit import (
    CSV_FIELDS,
    append_csv,
    error_heatmap,
    evaluation_protocol,
    inverse_depth_image,
    mean_report,
    protocol_depths,
)
from .gradcheck import format_report, run_suite
from .tensor import Tensor
from .trainer import Trainer, write_curve

logger = logging.getLogger("unsupdepth")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_DIVERGENCE = 0, 2, 3, 4


# ------------------------------------------------------------------ helpers


def _resolved(args) -> dict:
    raw = C.load_config(args.config) if args.config else {}
    return C.resolve(raw, profile=args.profile, seed=args.seed, output=args.output)


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _datasets(cfg: dict) -> tuple:
    data = cfg["data"]
    if data["train"]:
        train = read_dataset(data["train"])
    else:
        syn = data["synthetic"]
        train = make_dataset(syn["n_train"], syn["train_seed"], C.scene_family(cfg), prefix="train")
    if data["eval"]:
        held = read_dataset(data["eval"])
    else:
        syn = data["synthetic"]
        held = make_dataset(syn["n_eval"], syn["eval_seed"], C.scene_family(cfg), prefix="eval")
    return train, held


def _predict(net, sample) -> np.ndarray:
    return net.forward(Tensor(sample.left[None], dtype=net.dtype)).data[0, 0].astype(np.float64)


# ---------------------------------------------------------------- commands


def _scene_lines(path: Path) -> list:
    """Line number of each entry under ``scenes:`` (for error messages)."""
    try:
        node = yaml.compose(path.read_text())
    except yaml.YAMLError:
        return []
    if node is None or not hasattr(node, "value"):
        return []
    for key, val in node.value:
        if getattr(key, "value", None) == "scenes" and hasattr(val, "value"):
            return [item.start_mark.line + 1 for item in val.value]
    return []


def cmd_synth(args) -> int:
    """Generate a synthetic dataset from a scene-spec file."""
    path = Path(args.spec)
    spec_doc = C.load_config(path)
    cal = spec_doc.get("calibration", {"focal_px": 100.0, "baseline_m": 0.54})
    specs = []
    if "scenes" in spec_doc:
        lines = _scene_lines(path)
        for i, raw in enumerate(spec_doc["scenes"]):
            where = f"{path}:{lines[i]}" if i < len(lines) else f"{path}: scene {i}"
            try:
                if not isinstance(raw, dict):
                    raise SpecError("scene entry must be a mapping")
                d = {"calibration": cal, "id": f"s{i:04d}", "image_size": [64, 192], "layout": [], **raw}
                spec = SyntheticSceneSpec.from_dict(d)
                spec.validate()
            except KeyError as exc:
                raise SpecError(f"{where}: missing field {exc}") from exc
            except (TypeError, ValueError, SpecError) as exc:
                raise SpecError(f"{where}: {exc}") from exc
            specs.append(spec)
    elif "family" in spec_doc:
        base = C.default_config()["data"]["synthetic"]["family"]
        base.update(spec_doc["family"])
        fam = C.scene_family({"data": {"synthetic": {"family": base}}})
        rng = np.random.default_rng(args.seed if args.seed is not None else spec_doc.get("seed", 0))
        specs = [fam.sample(rng, f"s{i:04d}") for i in range(int(spec_doc.get("count", 10)))]
    else:
        raise SpecError(f"{path}: expected a 'scenes' list or a 'family' block")
    samples = [generate_synthetic_pair(s) for s in specs]
    out = Path(args.output or spec_doc.get("output", "synthetic"))
    write_dataset(samples, out, specs)
    lo = min(float(s.gt_disparity.min()) for s in samples)
    hi = max(float(s.gt_disparity.max()) for s in samples)
    print(f"wrote {len(samples)} pairs to {out}; disparity range [{lo:.3f}, {hi:.3f}] px")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolved(args)
    out = _out_dir(cfg)
    C.dump_config(cfg, out / "config.resolved.yaml")
    chash = config_hash(cfg)
    train, _ = _datasets(cfg)
    tcfg = C.train_config(cfg)
    curve_path = out / "loss_curve.csv"

    if args.resume:
        net, state, _ = load_checkpoint(args.resume, expected_hash=chash, allow_mismatch=args.allow_mismatch)
    else:
        net = build_network(C.network_config(cfg), cfg["profile"], seed=cfg["seed"])
        state = None

    every = int(cfg["checkpoint_every"])

    def on_epoch(net_, st, row):
        write_curve(curve_path, st.history)
        if every and st.global_epoch % every == 0:
            save_checkpoint(out / "latest.ckpt", net_, st, chash)

    def on_phase_end(net_, st, phase):
        save_checkpoint(out / f"{phase}.ckpt", net_, st, chash)
        logger.info("finished phase %s", phase)

    labels = None
    if cfg["mode"] == "proxy_hs":
        b = cfg["baseline"]
        labels = make_proxy_labels(train, b["engine"], b["holes"], C.hs_config(cfg), b["threshold"]).labels
    trainer = Trainer(C.optimizer_config(cfg), tcfg, cfg["seed"], on_epoch=on_epoch, on_phase_end=on_phase_end)
    state = trainer.run(net, train, state, labels=labels, max_epochs=args.max_epochs)
    save_checkpoint(out / "final.ckpt" if state.done else out / "latest.ckpt", net, state, chash)
    write_curve(curve_path, state.history)
    last = state.history[-1] if state.history else {}
    print(f"trained {state.global_epoch} epochs; output {net.output_resolution()}; "
          f"final loss {last.get('total', float('nan')):.6g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolved(args)
    out = _out_dir(cfg)
    net, _, manifest = load_checkpoint(args.checkpoint, expected_hash=config_hash(cfg) if args.strict else None,
                                       allow_mismatch=args.allow_mismatch)
    samples = read_dataset(args.dataset) if args.dataset else _datasets(cfg)[1]
    clamp = tuple(cfg["geometry"]["clamp"])
    crop = cfg["eval"]["crop"]
    reports = []
    for s in samples:
        if args.gt_as_prediction:
            pred = s.gt_disparity
        else:
            pred = _predict(net, s)
        reports.append(evaluation_protocol(pred, s, crop=crop, clamp=clamp))
        if args.heatmaps:
            pd, gd = protocol_depths(pred, s, clamp)
            error_heatmap(pd, gd, path=out / f"{s.id}_error.png")
            inverse_depth_image(pd, path=out / f"{s.id}_invdepth.png")
    report = mean_report(reports)
    (out / "metrics.txt").write_text(report.to_text())
    append_csv(out / "metrics.csv", args.name, report)
    print(",".join(CSV_FIELDS))
    print(",".join([args.name, *(f"{v:.6g}" for v in report.row()), str(report.n_pixels)]))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _resolved(args)
    results, secs = run_suite(seed=cfg["seed"])
    print(format_report(results, secs))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_baseline(args) -> int:
    cfg = _resolved(args)
    out = _out_dir(cfg)
    samples = read_dataset(args.dataset) if args.dataset else _datasets(cfg)[1]
    hs = C.hs_config(cfg)
    clamp = tuple(cfg["geometry"]["clamp"])
    reports = []
    (out / "disparity").mkdir(exist_ok=True)
    for s in samples:
        disp = hs_stereo(s.left, s.right, hs)
        save_raw_f32(out / "disparity" / f"{s.id}_hs.f32", disp)
        if s.gt_disparity is not None:
            reports.append(evaluation_protocol(disp, s, crop=cfg["eval"]["crop"], clamp=clamp))
    if reports:
        report = mean_report(reports)
        append_csv(out / "metrics.csv", "hs_stereo", report)
        (out / "metrics.txt").write_text(report.to_text())
        print(",".join(CSV_FIELDS))
        print(",".join(["hs_stereo", *(f"{v:.6g}" for v in report.row()), str(report.n_pixels)]))
    else:
        print(f"wrote {len(samples)} disparity maps (no ground truth to score)")
    return EXIT_OK


def cmd_dump_arch(args) -> int:
    cfg = _resolved(args)
    ncfg = C.network_config(cfg)
    net = build_network(ncfg, cfg["profile"], seed=cfg["seed"], stages=len(ncfg.stages))
    for line in net.describe():
        print(line)
    ladder = " -> ".join(f"{name} {h}x{w}" for name, (h, w) in stage_ladder(ncfg))
    print(f"input {ncfg.input_size[0]}x{ncfg.input_size[1]}; ladder {ladder}")
    print(f"parameters {net.param_count()}")
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread cap")
    common.add_argument("--profile", choices=C.PROFILES, default=None)
    common.add_argument("--output", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="unsupdepth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic stereo dataset")
    s.add_argument("spec", help="scene-spec YAML (a 'scenes' list or a 'family' block)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="stage-wise training")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--max-epochs", type=int, default=None, help="stop after this many more epochs")
    s.add_argument("--allow-mismatch", action="store_true", help="resume despite a config hash mismatch")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--dataset", help="dataset directory (default: the config's eval set)")
    s.add_argument("--name", default="cnn", help="row label in metrics.csv")
    s.add_argument("--heatmaps", action="store_true", help="write error heat-maps and inverse-depth images")
    s.add_argument("--strict", action="store_true", help="check the checkpoint's config hash")
    s.add_argument("--allow-mismatch", action="store_true")
    s.add_argument("--gt-as-prediction", action="store_true", help="score ground truth against itself")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("baseline", parents=[common], help="Horn-Schunck stereo on a dataset")
    s.add_argument("--dataset", help="dataset directory (default: the config's eval set)")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("dump-arch", parents=[common], help="print the layer table and stage ladder")
    s.set_defaults(func=cmd_dump_arch)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limits = threadpool_limits(limits=args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limits:
            return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, EvaluationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

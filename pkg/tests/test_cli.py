import numpy as np
import pytest
import yaml

from unsupdepth import config as C
from unsupdepth.checkpoint import config_hash, load_checkpoint, read_checkpoint, save_checkpoint
from unsupdepth.cli import main
from unsupdepth.encoder import NetworkConfig, build_network
from unsupdepth.errors import ConfigurationError
from unsupdepth.trainer import TrainState

TINY = {"training": {"epochs_coarse": 2, "epochs_finer": 1, "n_stages": 1},
        "network": {"head_filters": 16},
        "data": {"synthetic": {"n_train": 2, "n_eval": 1}}}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


class TestConfig:
    def test_defaults_validate(self):
        for profile in C.PROFILES:
            C.validate(C.default_config(profile))

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="trainingg"):
            C.resolve({"trainingg": {}})

    def test_overrides(self):
        cfg = C.resolve({"seed": 3}, seed=9, output="x")
        assert cfg["seed"] == 9 and cfg["output_dir"] == "x"

    def test_bad_values(self):
        with pytest.raises(ConfigurationError):
            C.resolve({"optimizer": {"momentum": 2.0}})
        with pytest.raises(ConfigurationError):
            C.resolve({"geometry": {"clamp": [5.0, 1.0]}})

    def test_dump_round_trip(self, tmp_path):
        cfg = C.resolve({})
        C.dump_config(cfg, tmp_path / "c.yaml")
        assert C.resolve(C.load_config(tmp_path / "c.yaml")) == cfg

    def test_hash_ignores_output_dir(self):
        assert config_hash(C.resolve({}, output="a")) == config_hash(C.resolve({}, output="b"))
        assert config_hash(C.resolve({}, seed=1)) != config_hash(C.resolve({}, seed=2))


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path, rng):
        net = build_network(NetworkConfig.desk(head_filters=16), seed=3, stages=2)
        for _, p in net.named_parameters():
            p.data = rng.standard_normal(p.shape).astype(p.data.dtype)
        state = TrainState(epoch=2, phase=1, global_epoch=5, seed=3,
                           velocity={"c1.weight": rng.standard_normal(net.params["c1.weight"].shape)})
        save_checkpoint(tmp_path / "a.ckpt", net, state, "abc")
        net2, state2, manifest = load_checkpoint(tmp_path / "a.ckpt", expected_hash="abc")
        assert net2.n_stages == 2 and state2.global_epoch == 5
        for k, v in net.snapshot().items():
            assert net2.snapshot()[k].tobytes() == v.tobytes()
        assert state2.velocity["c1.weight"].tobytes() == state.velocity["c1.weight"].tobytes()
        save_checkpoint(tmp_path / "b.ckpt", net2, state2, "abc")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_hash_mismatch(self, tmp_path):
        net = build_network(NetworkConfig.desk(head_filters=16))
        save_checkpoint(tmp_path / "a.ckpt", net, None, "abc")
        with pytest.raises(ConfigurationError):
            load_checkpoint(tmp_path / "a.ckpt", expected_hash="xyz")
        load_checkpoint(tmp_path / "a.ckpt", expected_hash="xyz", allow_mismatch=True)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"garbage!" + bytes(20))
        with pytest.raises(ConfigurationError):
            read_checkpoint(tmp_path / "x.ckpt")


class TestCommands:
    def test_dump_arch_paper_profile(self, capsys):
        assert main(["dump-arch", "--profile", "paper"]) == 0
        out = capsys.readouterr().out
        assert "L9 22x76" in out and "L12 176x608" in out

    def test_gradcheck(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "ALL PASSED" in out and "max_rel_err" in out

    def test_synth_scenes_and_family(self, tmp_path, capsys):
        spec = tmp_path / "scenes.yaml"
        spec.write_text(yaml.safe_dump({"family": {"layout": "ground", "image_size": [16, 48]}, "count": 10}))
        assert main(["synth", str(spec), "--output", str(tmp_path / "a"), "--seed", "4"]) == 0
        assert main(["synth", str(spec), "--output", str(tmp_path / "b"), "--seed", "4"]) == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert sum(1 for f in files if f.name.endswith("_gt.f32")) == 10
        assert sum(1 for f in files if f.name.endswith("_left.ppm")) == 10
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_synth_rejects_wide_disparity_with_line(self, tmp_path, capsys):
        spec = tmp_path / "bad.yaml"
        spec.write_text("scenes:\n  - background_depth: 20\n    image_size: [8, 32]\n"
                        "  - background_depth: 1.5\n    image_size: [8, 32]\n")
        assert main(["synth", str(spec), "--output", str(tmp_path / "o")]) == 2
        assert "bad.yaml:4" in capsys.readouterr().err

    def test_train_eval_baseline(self, tmp_path, tiny_config, capsys):
        out = tmp_path / "run"
        assert main(["train", "--config", str(tiny_config), "--output", str(out)]) == 0
        for name in ("config.resolved.yaml", "loss_curve.csv", "coarse.ckpt", "stage1.ckpt", "final.ckpt"):
            assert (out / name).exists()
        assert main(["eval", str(out / "final.ckpt"), "--config", str(tiny_config), "--output", str(out),
                     "--gt-as-prediction", "--name", "gt", "--heatmaps"]) == 0
        row = capsys.readouterr().out.strip().splitlines()[-1].split(",")
        assert row[0] == "gt" and [float(v) for v in row[1:8]] == [0, 0, 0, 0, 1, 1, 1]
        assert list(out.glob("*_error.png"))
        assert main(["eval", str(out / "final.ckpt"), "--config", str(tiny_config), "--output", str(out),
                     "--strict"]) == 0
        assert main(["baseline", "--config", str(tiny_config), "--output", str(out)]) == 0
        assert "hs_stereo" in (out / "metrics.csv").read_text()

    def test_resume_reproduces_checkpoint(self, tmp_path, tiny_config):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(tiny_config), "--output", str(a)]) == 0
        assert main(["train", "--config", str(tiny_config), "--output", str(b), "--max-epochs", "1"]) == 0
        assert main(["train", "--config", str(tiny_config), "--output", str(b),
                     "--resume", str(b / "latest.ckpt")]) == 0
        assert (a / "final.ckpt").read_bytes() == (b / "final.ckpt").read_bytes()
        assert (a / "loss_curve.csv").read_bytes() == (b / "loss_curve.csv").read_bytes()

    def test_resume_with_other_config_refused(self, tmp_path, tiny_config):
        a = tmp_path / "a"
        main(["train", "--config", str(tiny_config), "--output", str(a), "--max-epochs", "1"])
        assert main(["train", "--config", str(tiny_config), "--output", str(a), "--seed", "5",
                     "--resume", str(a / "latest.ckpt")]) == 2

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("optimizer: {momentum: 3}\n")
        assert main(["train", "--config", str(bad)]) == 2
        assert "momentum" in capsys.readouterr().err

    def test_divergence_exit_code(self, tmp_path):
        cfg = dict(TINY, optimizer={"lr0": 50.0, "alpha": 0.0},
                   training={"epochs_coarse": 8, "n_stages": 0, "divergence_patience": 2, "batch_size": 1})
        path = tmp_path / "div.yaml"
        path.write_text(yaml.safe_dump(cfg))
        assert main(["train", "--config", str(path), "--output", str(tmp_path / "d")]) in (3, 4)

    def test_threads_flag(self, capsys):
        assert main(["dump-arch", "--threads", "1"]) == 0

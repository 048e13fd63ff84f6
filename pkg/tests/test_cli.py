"""Config resolution and end-to-end CLI smokes on toy data."""

import json

import numpy as np
import pytest

from gpdenoise.cli import main
from gpdenoise.config import (
    ConfigError,
    default_config,
    resolve_config,
    write_manifest,
)
from gpdenoise.media import VideoClip, save_clip


@pytest.fixture()
def clip_dir(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "clip"
    save_clip(VideoClip(rng.uniform(0.2, 0.8, size=(5, 3, 32, 32))), path)
    return path


@pytest.fixture()
def dataset_dir(tmp_path):
    rng = np.random.default_rng(1)
    root = tmp_path / "data"
    for i in range(2):
        save_clip(
            VideoClip(rng.uniform(0.2, 0.8, size=(5, 3, 32, 32))),
            root / f"clip{i}",
        )
    return root


TOY_MODEL = [
    "--set", "model.base_width=8",
    "--set", "model.global_dim=8",
    "--set", "model.cue_channels=4",
]
TOY_TRAIN = [
    "--set", "train.max_steps=2",
    "--set", "train.steps_per_epoch=1",
    "--set", "train.batch=1",
    "--set", "train.patch=32",
    "--set", "train.epochs=2",
    "--set", "train.warmup_epochs=1",
]


class TestConfigResolution:
    def test_defaults_pass_through(self):
        assert resolve_config() == default_config()

    def test_file_and_override_precedence(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"train": {"lr": 1e-3}, "seed": 3}))
        config = resolve_config(cfg_file, ["train.lr=5e-4"])
        assert config["train"]["lr"] == 5e-4  # flag wins over file
        assert config["seed"] == 3

    def test_unknown_key_suggests_nearest(self):
        with pytest.raises(ConfigError, match="train.lr"):
            resolve_config(None, ["train.lrr=1e-3"])

    def test_type_mismatch_names_key_and_type(self):
        with pytest.raises(ConfigError, match="train.lr.*float"):
            resolve_config(None, ['train.lr="fast"'])

    def test_unknown_file_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"trian": {"lr": 1e-3}}))
        with pytest.raises(ConfigError, match="unknown"):
            resolve_config(cfg_file)

    def test_manifest_written(self, tmp_path):
        config = resolve_config(None, ["seed=9"])
        path = write_manifest(tmp_path, config, "test")
        manifest = json.loads(path.read_text())
        assert manifest["seed"] == 9
        assert manifest["command"] == "test"
        assert "version" in manifest


class TestCLI:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "degrade" in capsys.readouterr().out

    def test_print_defaults(self, capsys):
        assert main(["--print-defaults"]) == 0
        parsed = json.loads(capsys.readouterr().out)
        assert parsed["train"]["lr"] == 2e-4

    def test_no_command_is_usage_error(self):
        assert main([]) == 1

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["degrade", "--frobnicate"]) == 1

    def test_missing_checkpoint_exits_two(self, tmp_path, clip_dir, capsys):
        code = main([
            "denoise", "--checkpoint", str(tmp_path / "absent.pt"),
            "--input", str(clip_dir), "--out", str(tmp_path / "out"),
        ])
        assert code == 2
        assert "absent.pt" in capsys.readouterr().err

    def test_degrade_round_trip(self, tmp_path, clip_dir):
        out = tmp_path / "degraded"
        code = main([
            "degrade", "--input", str(clip_dir), "--output", str(out),
            "--severity", "2.0", "--seed", "7", "--out", str(tmp_path / "run"),
        ])
        assert code == 0
        assert len(list(out.glob("*.png"))) == 5
        record = json.loads((out / "applied_parameters.json").read_text())
        assert record["seed"] == 7
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 7

    def test_train_then_denoise_and_diagnose(self, tmp_path, dataset_dir, clip_dir):
        run = tmp_path / "run"
        code = main([
            "train", "--data", str(dataset_dir), "--out", str(run), "--seed", "0",
            *TOY_MODEL, *TOY_TRAIN,
        ])
        assert code == 0
        ckpt = run / "checkpoint.pt"
        assert ckpt.exists()
        assert (run / "metrics.csv").exists()

        out = tmp_path / "restored"
        code = main([
            "denoise", "--checkpoint", str(ckpt), "--input", str(clip_dir),
            "--output", str(out), "--tile", "32", "--overlap", "8",
            "--out", str(tmp_path / "denoise_run"),
        ])
        assert code == 0
        assert len(list(out.glob("*.png"))) == 5

        diag = tmp_path / "diag"
        code = main([
            "diagnose", "--checkpoint", str(ckpt), "--input", str(clip_dir),
            "--out", str(diag), "--dump-cues",
        ])
        assert code == 0
        assert (diag / "diagnostics.png").exists()
        assert (diag / "cue_var3x3.png").exists()

    def test_eval_identity_sweep(self, tmp_path, dataset_dir):
        run = tmp_path / "eval"
        code = main([
            "eval", "--data", str(dataset_dir), "--out", str(run),
            "--set", "eval.severities=[1.0,3.0]",
        ])
        assert code == 0
        table = (run / "sweep.csv").read_text().splitlines()
        assert len(table) == 3  # header + 2 severities

    def test_bench_identity_width(self, tmp_path):
        run = tmp_path / "bench"
        code = main([
            "bench", "--size", "32x32", "--out", str(run), *TOY_MODEL,
        ])
        assert code == 0
        report = json.loads((run / "bench.json").read_text())
        assert report["fps"] > 0

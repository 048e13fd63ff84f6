"""Run configuration: embedded defaults, config-file merge, CLI overrides.

Precedence is defaults < config file < ``--set dotted.key=value`` overrides.
Unknown keys are rejected with the nearest valid key suggested; every run
writes its fully resolved configuration into the output manifest.
"""

from __future__ import annotations

import copy
import difflib
import json
import subprocess
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .network import ModelConfig
from .objective import LossWeights, TrainConfig


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    return {
        "seed": 0,
        "out": "runs/out",
        "device": "cpu",
        "deterministic": False,
        "model": asdict(ModelConfig()),
        "train": asdict(TrainConfig()),
        "loss": asdict(LossWeights()),
        "degrade": {
            "severity": 2.0,
            "compression_mode": "proxy",
            "codec_cmd": None,
        },
        "tiling": {
            "tile": 640,
            "overlap": 64,
        },
        "eval": {
            "severities": [1.0, 1.5, 2.0, 2.5, 3.0],
            "eval_severity": 2.0,
        },
    }


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def _suggest(key: str, valid: list[str]) -> str:
    matches = difflib.get_close_matches(key, valid, n=1)
    return f"; did you mean {matches[0]!r}?" if matches else ""


def _check_type(key: str, new, default) -> object:
    if default is None or new is None:
        return new
    if isinstance(default, bool):
        if not isinstance(new, bool):
            raise ConfigError(f"key {key!r} expects bool, got {type(new).__name__}")
        return new
    if isinstance(default, (int, float)) and isinstance(new, (int, float)) and not isinstance(new, bool):
        return type(default)(new) if isinstance(default, float) else new
    if isinstance(default, (list, tuple)) and isinstance(new, (list, tuple)):
        return list(new)
    if type(default) is not type(new):
        raise ConfigError(
            f"key {key!r} expects {type(default).__name__}, got {type(new).__name__}"
        )
    return new


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            valid = list(_flatten(base, prefix))
            raise ConfigError(f"unknown config key {dotted!r}{_suggest(dotted, valid)}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"key {dotted!r} expects a section, got {type(value).__name__}")
            _merge(base[key], value, dotted + ".")
        else:
            base[key] = _check_type(dotted, value, base[key])


def _parse_override_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(config: dict, dotted: str, raw_value: str) -> None:
    parts = dotted.split(".")
    node = config
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            valid = list(_flatten(config))
            raise ConfigError(f"unknown config key {dotted!r}{_suggest(dotted, valid)}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        valid = list(_flatten(config))
        raise ConfigError(f"unknown config key {dotted!r}{_suggest(dotted, valid)}")
    if isinstance(node[leaf], dict):
        raise ConfigError(f"key {dotted!r} is a section, not a value")
    node[leaf] = _check_type(dotted, _parse_override_value(raw_value), node[leaf])


def resolve_config(
    config_file: str | Path | None = None,
    overrides: list[str] | None = None,
) -> dict:
    """Merge defaults, an optional JSON config file, and dotted overrides."""
    config = copy.deepcopy(default_config())
    if config_file:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_tree = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(file_tree, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        _merge(config, file_tree)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        dotted, raw = item.split("=", 1)
        apply_override(config, dotted.strip(), raw.strip())
    return config


def model_config(config: dict) -> ModelConfig:
    return ModelConfig(**config["model"])


def train_config(config: dict) -> TrainConfig:
    section = dict(config["train"])
    if isinstance(section.get("severity_range"), list):
        section["severity_range"] = tuple(section["severity_range"])
    return TrainConfig(**section)


def loss_weights(config: dict) -> LossWeights:
    return LossWeights(**config["loss"])


def _git_revision() -> str | None:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
        )
        return out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def write_manifest(out_dir: str | Path, config: dict, command: str,
                   extra: dict | None = None, started: float | None = None) -> Path:
    """Record the resolved config, code version, and timing for a run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "version": __version__,
        "git_revision": _git_revision(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "elapsed_seconds": (time.time() - started) if started else None,
    }
    if extra:
        manifest["extra"] = extra
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path

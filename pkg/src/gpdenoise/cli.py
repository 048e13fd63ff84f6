"""Command-line entry point wiring every module together.

Subcommands: degrade, train, denoise, eval, ablate, bench, diagnose.
Exit codes: 0 success, 1 usage error, 2 runtime error. Every run writes a
manifest (resolved config, seed, code version, timing) into its output
directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    default_config,
    loss_weights,
    model_config,
    resolve_config,
    train_config,
    write_manifest,
)
from .media import VideoClip, load_clip, save_clip


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="gpdenoise", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--print-defaults", action="store_true",
                        help="dump the default configuration as JSON and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted-key config override")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="global RNG seed")
        p.add_argument("--deterministic", action="store_true",
                       help="force reproducible kernels and full precision")

    p = sub.add_parser("degrade", help="synthesize a degraded copy of a clip")
    common(p)
    p.add_argument("--input", required=True, help="directory of clean PNG frames")
    p.add_argument("--output", help="output frame directory (defaults under --out)")
    p.add_argument("--severity", type=float, default=None)
    p.add_argument("--codec-cmd", help="external encoder template with {input} {output} {crf}")

    p = sub.add_parser("train", help="train a model on clean clips")
    common(p)
    p.add_argument("--data", required=True, help="directory of clip directories")

    p = sub.add_parser("denoise", help="restore frames with a trained model")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="directory of noisy PNG frames")
    p.add_argument("--output", help="output frame directory (defaults under --out)")
    p.add_argument("--tile", type=int, default=None)
    p.add_argument("--overlap", type=int, default=None)
    p.add_argument("--no-overlap", action="store_true",
                   help="disable tile overlap (seam ablation)")

    p = sub.add_parser("eval", help="robustness sweep over the severity schedule")
    common(p)
    p.add_argument("--data", required=True, help="directory of clip directories")
    p.add_argument("--checkpoint", help="model checkpoint (identity passthrough if omitted)")

    p = sub.add_parser("ablate", help="train and score all component ablations")
    common(p)
    p.add_argument("--data", required=True)

    p = sub.add_parser("bench", help="profile inference throughput")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--size", default="256x256", help="HxW of the synthetic input")

    p = sub.add_parser("diagnose", help="write the mechanism diagnostics panel")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="directory of noisy PNG frames")
    p.add_argument("--ref", help="directory of clean reference frames")
    p.add_argument("--dump-cues", action="store_true",
                   help="also dump raw cue channels as grayscale heatmaps")
    return parser


def _resolve(args) -> dict:
    overrides = list(args.overrides or [])
    if args.out:
        overrides.append(f"out={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.deterministic:
        overrides.append("deterministic=true")
    config = resolve_config(args.config, overrides)
    env_device = os.environ.get("GPDENOISE_DEVICE")
    if env_device:
        config["device"] = env_device
    return config


def _apply_determinism(config: dict) -> None:
    if config.get("deterministic"):
        import torch

        torch.manual_seed(config["seed"])
        torch.use_deterministic_algorithms(True)


def _load_dataset(path: str | Path) -> list[np.ndarray]:
    """A dataset directory is either one clip (PNGs) or one subdir per clip."""
    path = Path(path)
    if not path.is_dir():
        raise IOError(f"dataset directory not found: {path}")
    if list(path.glob("*.png")):
        return [load_clip(path).data]
    clips = []
    for sub in sorted(p for p in path.iterdir() if p.is_dir()):
        if list(sub.glob("*.png")):
            clips.append(load_clip(sub).data)
    if not clips:
        raise IOError(f"no clips found under {path}")
    return clips


def _load_model(checkpoint: str, device: str):
    from .network import load_checkpoint

    path = Path(checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model, payload = load_checkpoint(path, map_location=device)
    model.to(device)
    model.eval()
    return model, payload


def cmd_degrade(args, config) -> int:
    from .degrade import config_at_severity, synthesize_degraded_clip

    started = time.time()
    out_dir = Path(args.output or (Path(config["out"]) / "degraded"))
    severity = args.severity if args.severity is not None else config["degrade"]["severity"]
    codec_cmd = args.codec_cmd or config["degrade"]["codec_cmd"]
    mode = config["degrade"]["compression_mode"]
    if codec_cmd:
        mode = "external"
    clean = load_clip(args.input)
    cfg = config_at_severity(severity, seed=config["seed"],
                             compression_mode=mode, codec_cmd=codec_cmd)
    degraded, record = synthesize_degraded_clip(clean, cfg)
    save_clip(degraded, out_dir)
    (out_dir / "applied_parameters.json").write_text(json.dumps(record, indent=2) + "\n")
    write_manifest(out_dir, config, "degrade", started=started,
                   extra={"input": str(args.input), "severity": severity,
                          "overrides": args.overrides, "config_file": args.config})
    print(f"degraded clip written to {out_dir}")
    return 0


def cmd_train(args, config) -> int:
    import torch

    from .network import VideoDenoiser, save_checkpoint
    from .objective import train

    started = time.time()
    _apply_determinism(config)
    out_dir = Path(config["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = _load_dataset(args.data)
    torch.manual_seed(config["seed"])
    model = VideoDenoiser(model_config(config))
    tcfg = train_config(config)
    tcfg.seed = config["seed"]
    result = train(
        model, clips, tcfg, weights=loss_weights(config), val_clips=clips,
        log_path=out_dir / "metrics.csv", device=config["device"],
        deterministic=config["deterministic"], progress=True,
    )
    if result.best_state is not None:
        model.load_state_dict(result.best_state)
    save_checkpoint(model, out_dir / "checkpoint.pt", seed=config["seed"],
                    extra={"best_val_psnr": result.best_val_psnr})
    write_manifest(out_dir, config, "train", started=started,
                   extra={"steps": result.steps, "best_val_psnr": result.best_val_psnr,
                          "overrides": args.overrides, "config_file": args.config})
    print(f"trained {result.steps} steps; best val PSNR {result.best_val_psnr:.2f} dB")
    print(f"checkpoint written to {out_dir / 'checkpoint.pt'}")
    return 0


def _sliding_windows(num_frames: int, window: int):
    half = window // 2
    for t in range(num_frames):
        yield t, [min(max(i, 0), num_frames - 1) for i in range(t - half, t + half + 1)]


def cmd_denoise(args, config) -> int:
    from .tiling import model_restore_fn, plan_tiles, tiled_inference

    started = time.time()
    model, _ = _load_model(args.checkpoint, config["device"])
    clip = load_clip(args.input)
    out_dir = Path(args.output or (Path(config["out"]) / "denoised"))
    tile = args.tile if args.tile is not None else config["tiling"]["tile"]
    overlap = 0 if args.no_overlap else (
        args.overlap if args.overlap is not None else config["tiling"]["overlap"]
    )
    t, c, h, w = clip.shape
    plan = plan_tiles(h, w, tile, overlap)
    restore = model_restore_fn(model, device=config["device"])
    window = model.config.clip_len
    frames = []
    for t_idx, indices in _sliding_windows(t, window):
        window_clip = clip.data[indices]
        frames.append(tiled_inference(restore, window_clip, plan))
    restored = VideoClip(np.stack(frames), clip.frame_rate, clip.color_space)
    save_clip(restored, out_dir)
    write_manifest(out_dir, config, "denoise", started=started,
                   extra={"checkpoint": args.checkpoint, "tiles": len(plan.tiles),
                          "tile": tile, "overlap": overlap,
                          "overrides": args.overrides, "config_file": args.config})
    print(f"restored {t} frames ({len(plan.tiles)} tiles each) to {out_dir}")
    return 0


def cmd_eval(args, config) -> int:
    from .evaluation import restore_clip_fn, robustness_sweep, write_table

    started = time.time()
    out_dir = Path(config["out"])
    clips = _load_dataset(args.data)
    if args.checkpoint:
        model, _ = _load_model(args.checkpoint, config["device"])
        restore = restore_clip_fn(model, device=config["device"])
    else:
        def restore(clip_data):
            return clip_data[clip_data.shape[0] // 2]
    rows = robustness_sweep(
        restore, clips, severities=tuple(config["eval"]["severities"]),
        seed=config["seed"],
    )
    write_table(rows, out_dir / "sweep.csv",
                columns=["severity", "input_psnr", "psnr", "ssim", "drop_first_to_last"])
    write_manifest(out_dir, config, "eval", started=started,
                   extra={"checkpoint": args.checkpoint,
                          "overrides": args.overrides, "config_file": args.config})
    print((out_dir / "sweep.txt").read_text())
    return 0


def cmd_ablate(args, config) -> int:
    from .evaluation import ablation_harness, write_table

    started = time.time()
    _apply_determinism(config)
    out_dir = Path(config["out"])
    clips = _load_dataset(args.data)
    overrides = {
        k: v for k, v in config["model"].items()
        if k not in ("fusion_mode", "hetero", "yc_head", "use_hf")
    }
    rows = ablation_harness(
        clips, train_config(config), model_overrides=overrides,
        eval_severity=config["eval"]["eval_severity"], seed=config["seed"],
        progress=True,
    )
    write_table(rows, out_dir / "ablation.csv",
                columns=["variant", "params", "psnr", "ssim", "steps"])
    write_manifest(out_dir, config, "ablate", started=started,
                   extra={"overrides": args.overrides, "config_file": args.config})
    print((out_dir / "ablation.txt").read_text())
    return 0


def cmd_bench(args, config) -> int:
    import torch

    from .evaluation import profile
    from .network import VideoDenoiser
    from .tiling import model_restore_fn, plan_tiles, tiled_inference

    started = time.time()
    out_dir = Path(config["out"])
    try:
        h, w = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise UsageError(f"--size expects HxW, got {args.size!r}")
    if args.checkpoint:
        model, _ = _load_model(args.checkpoint, config["device"])
    else:
        torch.manual_seed(config["seed"])
        model = VideoDenoiser(model_config(config)).to(config["device"])
        model.eval()
    rng = np.random.default_rng(config["seed"])
    clip = rng.uniform(0, 1, size=(model.config.clip_len, 3, h, w)).astype(np.float32)
    plan = plan_tiles(h, w, min(config["tiling"]["tile"], max(h, w)),
                      config["tiling"]["overlap"] if min(h, w) > config["tiling"]["overlap"] * 2 else 0)
    restore = model_restore_fn(model, device=config["device"])
    report = profile(lambda: tiled_inference(restore, clip, plan))
    report["tiles"] = len(plan.tiles)
    report["input"] = f"{h}x{w}"
    (out_dir / "bench.json").parent.mkdir(parents=True, exist_ok=True)
    (out_dir / "bench.json").write_text(json.dumps(report, indent=2, default=str) + "\n")
    write_manifest(out_dir, config, "bench", started=started,
                   extra={"overrides": args.overrides, "config_file": args.config})
    print(f"{report['input']}: {report['fps']:.3f} fps on {report['device']} "
          f"({report['tiles']} tiles), peak memory {report['peak_memory']}")
    return 0


def cmd_diagnose(args, config) -> int:
    import torch

    from .cues import extract_raw_cues
    from .evaluation import diagnostics_panel, save_heatmap
    from .nnops import rgb_to_ycbcr_t

    started = time.time()
    out_dir = Path(config["out"])
    model, _ = _load_model(args.checkpoint, config["device"])
    clip = load_clip(args.input)
    reference = None
    if args.ref:
        ref_clip = load_clip(args.ref)
        reference = ref_clip.data[ref_clip.num_frames // 2]
    info = diagnostics_panel(model, clip.data, out_dir / "diagnostics.png",
                             reference=reference)
    if args.dump_cues:
        x = torch.from_numpy(
            np.ascontiguousarray(clip.data.transpose(1, 0, 2, 3))
        ).float().unsqueeze(0)
        raw = extract_raw_cues(rgb_to_ycbcr_t(x)[:, :1])
        center = clip.num_frames // 2
        for i, name in enumerate(["dx", "dy", "dt", "var3x3"]):
            save_heatmap(raw[0, i, center].numpy(), out_dir / f"cue_{name}.png",
                         cmap="gray")
    write_manifest(out_dir, config, "diagnose", started=started,
                   extra={"checkpoint": args.checkpoint, "panels": info["panels"],
                          "overrides": args.overrides, "config_file": args.config})
    print(f"diagnostics panel written to {info['path']}")
    return 0


COMMANDS = {
    "degrade": cmd_degrade,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
    "diagnose": cmd_diagnose,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.print_defaults:
        print(json.dumps(default_config(), indent=2, default=str))
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    try:
        config = _resolve(args)
        return COMMANDS[args.command](args, config)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures -> exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

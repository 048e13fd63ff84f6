"""Full-reference and mechanism metrics, robustness sweep, ablation harness,
and profiling."""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage

from .media import RGB, VideoClip, luminance, rgb_to_ycbcr_array

PSNR_CAP_DB = 100.0

# SSIM constants, fixed so golden values stay stable.
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5

# Pooling factor for the error/uncertainty correlation.
CORR_POOL = 8


@dataclass
class MetricsReport:
    psnr: float = float("nan")
    ssim: float = float("nan")
    cbcr_psnr: float = float("nan")
    chroma_flicker: float = float("nan")
    err_unc_corr: float = float("nan")
    seam_score: float = float("nan")
    fps: float = float("nan")
    peak_memory: int | None = None
    per_clip: list = field(default_factory=list)


def psnr(a: np.ndarray, b: np.ndarray, cap: float = PSNR_CAP_DB) -> float:
    """10 * log10(1 / MSE) on unit-range data, capped for identical inputs."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - b) ** 2))
    if mse <= 10 ** (-cap / 10.0):
        return cap
    return 10.0 * np.log10(1.0 / mse)


def _to_luma_2d(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return frame
    if frame.ndim == 3 and frame.shape[0] == 3:
        return luminance(frame)[0]
    if frame.ndim == 3 and frame.shape[0] == 1:
        return frame[0]
    raise ValueError(f"expected (H, W), (1, H, W), or (3, H, W), got {frame.shape}")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over luminance with a Gaussian window (sigma = 1.5)."""
    x = _to_luma_2d(a)
    y = _to_luma_2d(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2

    def blur(z):
        return scipy.ndimage.gaussian_filter(z, SSIM_SIGMA, mode="nearest")

    mu_x = blur(x)
    mu_y = blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(ssim_map.mean())


def cbcr_psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR computed jointly over the Cb and Cr channels of RGB inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-3] != 3 or b.shape[-3] != 3:
        raise ValueError("cbcr_psnr expects RGB inputs")
    ca = rgb_to_ycbcr_array(a)[..., 1:, :, :]
    cb = rgb_to_ycbcr_array(b)[..., 1:, :, :]
    return psnr(ca, cb)


def chroma_flicker(clip: VideoClip | np.ndarray) -> float:
    """Mean absolute frame-to-frame change of the global Cb/Cr means, halved."""
    data = clip.data if isinstance(clip, VideoClip) else np.asarray(clip)
    if data.shape[0] < 2:
        raise ValueError("chroma flicker needs at least 2 frames")
    ycbcr = rgb_to_ycbcr_array(data.astype(np.float64))
    cb_means = ycbcr[:, 1].mean(axis=(1, 2))
    cr_means = ycbcr[:, 2].mean(axis=(1, 2))
    deltas = np.abs(np.diff(cb_means)) + np.abs(np.diff(cr_means))
    return float(deltas.mean() / 2.0)


def err_unc_correlation(residual: np.ndarray, sigma: np.ndarray) -> float:
    """Pearson correlation of |residual| and predicted sigma, pooled 8x.

    Both maps are average-pooled by a factor of 8 before correlating, so
    the score reflects region-level agreement rather than pixel noise.
    Zero-variance inputs yield 0 with a warning.
    """
    r = _pool_mean(np.abs(np.asarray(residual, dtype=np.float64)))
    s = _pool_mean(np.asarray(sigma, dtype=np.float64))
    if r.shape != s.shape:
        raise ValueError(f"shape mismatch after pooling: {r.shape} vs {s.shape}")
    r = r.ravel()
    s = s.ravel()
    if r.std() == 0 or s.std() == 0:
        warnings.warn("zero-variance input to err_unc_correlation; returning 0")
        return 0.0
    return float(np.corrcoef(r, s)[0, 1])


def _pool_mean(x: np.ndarray, factor: int = CORR_POOL) -> np.ndarray:
    x = np.atleast_2d(np.squeeze(x))
    h, w = x.shape[-2:]
    ph, pw = h // factor, w // factor
    if ph == 0 or pw == 0:
        return x
    trimmed = x[..., : ph * factor, : pw * factor]
    shaped = trimmed.reshape(*trimmed.shape[:-2], ph, factor, pw, factor)
    return shaped.mean(axis=(-3, -1))


def seam_score(frame: np.ndarray, plan) -> float:
    """Excess gradient energy along tile-boundary lines.

    Mean |gradient| across every interior tile boundary minus the same
    statistic on lines shifted by half the overlap (or half the stride when
    the plan has no overlap), clamped at zero.
    """
    luma = _to_luma_2d(frame)
    h, w = luma.shape
    offset = max(1, (plan.overlap if plan.overlap > 0 else plan.tile_size // 8) // 2)

    cols = sorted({x for t in plan.tiles for x in (t[0], t[2])} - {0, w})
    rows = sorted({y for t in plan.tiles for y in (t[1], t[3])} - {0, h})

    on_vals, off_vals = [], []
    grad_x = np.abs(np.diff(luma, axis=1))  # grad_x[:, c] = |f[:, c+1] - f[:, c]|
    grad_y = np.abs(np.diff(luma, axis=0))
    for c in cols:
        if 1 <= c < w:
            on_vals.append(grad_x[:, c - 1].mean())
            off = min(c - 1 + offset, w - 2)
            off_vals.append(grad_x[:, off].mean())
    for r in rows:
        if 1 <= r < h:
            on_vals.append(grad_y[r - 1, :].mean())
            off = min(r - 1 + offset, h - 2)
            off_vals.append(grad_y[off, :].mean())
    if not on_vals:
        return 0.0
    return float(max(0.0, np.mean(on_vals) - np.mean(off_vals)))


SWEEP_SEVERITIES = (1.0, 1.5, 2.0, 2.5, 3.0)


def restore_clip_fn(model, device="cpu"):
    """Wrap a model as a (T, C, H, W) ndarray -> (C, H, W) frame callback."""
    import torch

    model.eval()

    def restore(clip_data: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = torch.from_numpy(
                np.ascontiguousarray(clip_data.transpose(1, 0, 2, 3))
            ).to(device=device, dtype=next(model.parameters()).dtype)
            out = model(x.unsqueeze(0))
            return out.restored[0].cpu().numpy()

    return restore


def robustness_sweep(
    restore_fn,
    clips: list[np.ndarray],
    severities: tuple[float, ...] = SWEEP_SEVERITIES,
    seed: int = 0,
) -> list[dict]:
    """Per-severity mean restored and input PSNR/SSIM over a fixed clip set.

    ``restore_fn`` maps a degraded (T, C, H, W) array to a restored
    (C, H, W) frame. Degradation seeds are fixed per (clip, severity
    index is not used) so runs are reproducible; the final row carries the
    PSNR drop from the first to the last severity.
    """
    from .degrade import config_at_severity, synthesize_degraded_clip

    rows = []
    for severity in severities:
        restored_psnr, restored_ssim, input_psnr = [], [], []
        for i, clean in enumerate(clips):
            cfg = config_at_severity(severity, seed=seed + i)
            degraded, _ = synthesize_degraded_clip(VideoClip(clean), cfg)
            center = clean.shape[0] // 2
            out = restore_fn(degraded.data)
            restored_psnr.append(psnr(out, clean[center]))
            restored_ssim.append(ssim(out, clean[center]))
            input_psnr.append(psnr(degraded.data[center], clean[center]))
        rows.append(
            {
                "severity": severity,
                "input_psnr": float(np.mean(input_psnr)),
                "psnr": float(np.mean(restored_psnr)),
                "ssim": float(np.mean(restored_ssim)),
            }
        )
    rows[-1]["drop_first_to_last"] = rows[0]["psnr"] - rows[-1]["psnr"]
    return rows


# Component ablation ladder: each row names a model-config overlay and which
# auxiliary loss terms are active for it.
ABLATION_VARIANTS: list[tuple[str, dict]] = [
    ("backbone", dict(fusion_mode="none", hetero=False, yc_head=False, use_hf=False)),
    ("det_gate", dict(fusion_mode="det_gate", hetero=False, yc_head=False, use_hf=False)),
    ("attn_var", dict(fusion_mode="attn_var", hetero=False, yc_head=False, use_hf=False)),
    ("attn_var_p", dict(fusion_mode="attn_var_p", hetero=False, yc_head=False, use_hf=False)),
    ("sparse_gp", dict(fusion_mode="gp", hetero=False, yc_head=False, use_hf=False)),
    ("hetero", dict(fusion_mode="gp", hetero=True, yc_head=False, use_hf=False)),
    ("yc_head", dict(fusion_mode="gp", hetero=True, yc_head=True, use_hf=False)),
    ("full", dict(fusion_mode="gp", hetero=True, yc_head=True, use_hf=True)),
]


def variant_loss_weights(overlay: dict, base=None):
    """Auxiliary weights follow the architecture toggles: the chroma and
    gradient terms accompany the structure-color head, the high-frequency
    term accompanies the HF path."""
    from .objective import LossWeights

    base = base or LossWeights()
    return LossWeights(
        lambda_u=base.lambda_u,
        lambda_hf=base.lambda_hf if overlay.get("use_hf") else 0.0,
        lambda_g=base.lambda_g if overlay.get("yc_head") else 0.0,
        lambda_c=base.lambda_c if overlay.get("yc_head") else 0.0,
        charbonnier_eps=base.charbonnier_eps,
    )


def ablation_harness(
    clips: list[np.ndarray],
    train_cfg,
    model_overrides: dict | None = None,
    eval_severity: float = 2.0,
    seed: int = 0,
    progress: bool = False,
) -> list[dict]:
    """Train all component-ablation variants under one seed and budget.

    Every variant sees an identical data order (audited); the report rows
    carry parameter counts and toy-scale PSNR/SSIM at ``eval_severity``.
    """
    import torch

    from .network import ModelConfig, VideoDenoiser
    from .nnops import count_parameters
    from .objective import train, validate_psnr

    rows = []
    reference_audit = None
    for name, overlay in ABLATION_VARIANTS:
        config_kwargs = dict(model_overrides or {})
        config_kwargs.update(overlay)
        torch.manual_seed(seed)
        model = VideoDenoiser(ModelConfig(**config_kwargs))
        weights = variant_loss_weights(overlay)
        result = train(model, clips, train_cfg, weights=weights, deterministic=True)
        if reference_audit is None:
            reference_audit = result.data_audit
        elif result.data_audit != reference_audit:
            raise RuntimeError(f"variant {name} saw a different data order")
        score_psnr = validate_psnr(model, clips, seed=seed + 999, severity=eval_severity)
        restore = restore_clip_fn(model)
        ssim_vals = []
        from .degrade import config_at_severity, synthesize_degraded_clip

        for i, clean in enumerate(clips):
            cfg = config_at_severity(eval_severity, seed=seed + 999 + i)
            degraded, _ = synthesize_degraded_clip(VideoClip(clean), cfg)
            out = restore(degraded.data)
            ssim_vals.append(ssim(out, clean[clean.shape[0] // 2]))
        rows.append(
            {
                "variant": name,
                "params": count_parameters(model),
                "psnr": score_psnr,
                "ssim": float(np.mean(ssim_vals)),
                "steps": result.steps,
            }
        )
        if progress:
            print(f"{name}: params={rows[-1]['params']} psnr={score_psnr:.2f}")
    return rows


def format_table(rows: list[dict], columns: list[str] | None = None) -> str:
    """Aligned-text rendering of a list of row dicts."""
    if not rows:
        return ""
    columns = columns or list(rows[0].keys())

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    table = [[fmt(row.get(c, "")) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in table)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    for r in table:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)


def write_table(rows: list[dict], path: str | Path, columns: list[str] | None = None):
    """Emit rows as CSV plus an aligned-text sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    columns = columns or list(rows[0].keys())
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})
    path.with_suffix(".txt").write_text(format_table(rows, columns) + "\n")


def save_heatmap(array: np.ndarray, path: str | Path, cmap: str = "magma"):
    """False-color PNG dump of a 2-D map (grayscale for cmap='gray')."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.squeeze(np.asarray(array))
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(arr, cmap=cmap)
    ax.set_axis_off()
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(path, bbox_inches="tight", dpi=120)
    plt.close(fig)


def diagnostics_panel(
    model,
    noisy_clip: np.ndarray,
    out_path: str | Path,
    reference: np.ndarray | None = None,
) -> dict:
    """Write the mechanism panel: restored output, residual, posterior
    log-variance, predicted log-variance, and per-stage gate maps."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import torch

    restore = restore_clip_fn(model)
    with torch.no_grad():
        x = torch.from_numpy(
            np.ascontiguousarray(noisy_clip.transpose(1, 0, 2, 3))
        ).to(dtype=next(model.parameters()).dtype).unsqueeze(0)
        out = model(x)
    center = noisy_clip.shape[0] // 2
    restored = out.restored[0].cpu().numpy()
    target = reference if reference is not None else noisy_clip[center]
    residual = np.abs(restored - target).mean(axis=0)
    log_var = out.log_variance[0, 0].cpu().numpy()

    panels = [
        ("noisy center", noisy_clip[center].transpose(1, 2, 0), None),
        ("restored", restored.transpose(1, 2, 0), None),
        ("residual", residual, "magma"),
        ("predicted log-var", log_var, "viridis"),
    ]
    for stage, diag in sorted(out.diagnostics.items()):
        if "posterior_var" in diag:
            post = diag["posterior_var"][0, 0, center].cpu().numpy()
            panels.append((f"stage-{stage} GP log-var", np.log(post + 1e-6), "viridis"))
        gate = diag["gate"][0, 0, center].cpu().numpy()
        panels.append((f"stage-{stage} gate", gate, "coolwarm"))

    cols = 4
    rows_n = (len(panels) + cols - 1) // cols
    fig, axes = plt.subplots(rows_n, cols, figsize=(4 * cols, 4 * rows_n))
    axes = np.atleast_2d(axes)
    for ax in axes.ravel():
        ax.set_axis_off()
    for ax, (title, img, cmap) in zip(axes.ravel(), panels):
        if cmap is None:
            ax.imshow(np.clip(img, 0, 1))
        else:
            im = ax.imshow(img, cmap=cmap)
            fig.colorbar(im, ax=ax, fraction=0.046)
        ax.set_title(title)
        ax.set_axis_off()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, bbox_inches="tight", dpi=100)
    plt.close(fig)
    return {"panels": [p[0] for p in panels], "path": str(out_path)}


def profile(run_fn, warmup: int = 3, timed: int = 10) -> dict:
    """Median wall-time profile: 3 warm-up + 10 timed synchronized runs."""
    import torch

    def sync():
        if torch.cuda.is_available():
            torch.cuda.synchronize()

    for _ in range(warmup):
        run_fn()
    sync()
    times = []
    for _ in range(timed):
        start = time.perf_counter()
        run_fn()
        sync()
        times.append(time.perf_counter() - start)
    median = float(np.median(times))

    if torch.cuda.is_available():
        device = torch.cuda.get_device_name(0)
        peak = int(torch.cuda.max_memory_allocated())
    else:
        device = "cpu"
        try:
            import psutil

            peak = int(psutil.Process().memory_info().rss)
        except ImportError:
            peak = None
    return {
        "median_seconds": median,
        "fps": 1.0 / median if median > 0 else float("inf"),
        "peak_memory": peak if peak is not None else "n/a",
        "device": device,
        "times": times,
    }

"""Heteroscedastic Charbonnier objective, auxiliary losses, and training.

The main term reweights a per-pixel Charbonnier penalty by the predicted
log-variance map and regularizes against overconfidence. Auxiliary terms
target detail loss (Laplacian response), edge softening (Sobel gradient
magnitude), and chroma drift (Cb/Cr Charbonnier).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .degrade import config_at_severity, synthesize_degraded_clip
from .evaluation import psnr
from .media import VideoClip
from .network import ModelConfig, VideoDenoiser
from .nnops import luminance_t, rgb_to_ycbcr_t

CHARBONNIER_EPS = 1e-3

LAPLACIAN_KERNEL = torch.tensor(
    [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]
)
SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, breakdown: dict | None = None):
        super().__init__(message)
        self.breakdown = breakdown or {}


class TrainingError(RuntimeError):
    pass


@dataclass
class LossWeights:
    lambda_u: float = 0.02
    lambda_hf: float = 0.10
    lambda_g: float = 0.05
    lambda_c: float = 0.03
    charbonnier_eps: float = CHARBONNIER_EPS

    def __post_init__(self):
        for name in ("lambda_u", "lambda_hf", "lambda_g", "lambda_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class TrainConfig:
    epochs: int = 80
    warmup_epochs: int = 5
    lr: float = 2e-4
    weight_decay: float = 1e-4
    grad_clip_norm: float = 1.0
    batch: int = 4
    patch: int = 256
    mixed_precision: bool = False
    seed: int = 0
    severity_range: tuple[float, float] = (1.0, 3.0)
    max_steps: int | None = None
    steps_per_epoch: int | None = None
    resample_noise: bool = True

    def __post_init__(self):
        if self.warmup_epochs >= self.epochs:
            raise ValueError("warmup_epochs must be smaller than epochs")


def charbonnier(pred: torch.Tensor, target: torch.Tensor, eps: float = CHARBONNIER_EPS):
    """Per-pixel sqrt((pred - target)^2 + eps^2)."""
    return torch.sqrt((pred - target) ** 2 + eps * eps)


def hetero_main_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    log_var: torch.Tensor,
    lambda_u: float,
    eps: float = CHARBONNIER_EPS,
) -> torch.Tensor:
    """mean(charbonnier * exp(-s) + lambda_u * s) with s broadcast per pixel."""
    rho = charbonnier(pred, target, eps)
    return (rho * torch.exp(-log_var) + lambda_u * log_var).mean()


def _conv_luma(y: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    k = kernel.to(dtype=y.dtype, device=y.device).view(1, 1, 3, 3)
    padded = F.pad(y, (1, 1, 1, 1), mode="replicate")
    return F.conv2d(padded, k)


def laplacian_response(y: torch.Tensor) -> torch.Tensor:
    return _conv_luma(y, LAPLACIAN_KERNEL)


def sobel_magnitude(y: torch.Tensor) -> torch.Tensor:
    gx = _conv_luma(y, SOBEL_X)
    gy = _conv_luma(y, SOBEL_Y)
    return torch.sqrt(gx**2 + gy**2 + 1e-12)


def hf_loss(pred_rgb: torch.Tensor, target_rgb: torch.Tensor, eps: float = CHARBONNIER_EPS):
    """Charbonnier between Laplacian responses of the luma channels."""
    return charbonnier(
        laplacian_response(luminance_t(pred_rgb)),
        laplacian_response(luminance_t(target_rgb)),
        eps,
    ).mean()


def grad_loss(pred_rgb: torch.Tensor, target_rgb: torch.Tensor):
    """L1 between Sobel gradient magnitudes of the luma channels."""
    return (
        sobel_magnitude(luminance_t(pred_rgb)) - sobel_magnitude(luminance_t(target_rgb))
    ).abs().mean()


def chroma_loss(pred_rgb: torch.Tensor, target_rgb: torch.Tensor, eps: float = CHARBONNIER_EPS):
    """Charbonnier over the Cb/Cr channels."""
    return charbonnier(
        rgb_to_ycbcr_t(pred_rgb)[:, 1:], rgb_to_ycbcr_t(target_rgb)[:, 1:], eps
    ).mean()


def total_loss(
    restored: torch.Tensor,
    log_var: torch.Tensor,
    target: torch.Tensor,
    weights: LossWeights,
    step: int | None = None,
) -> tuple[torch.Tensor, dict]:
    """Weighted sum of the main and auxiliary terms plus a breakdown log."""
    eps = weights.charbonnier_eps
    main = hetero_main_loss(restored, target, log_var, weights.lambda_u, eps)
    terms = {
        "L_main": main,
        "L_hf": hf_loss(restored, target, eps) if weights.lambda_hf > 0 else restored.new_zeros(()),
        "L_grad": grad_loss(restored, target) if weights.lambda_g > 0 else restored.new_zeros(()),
        "L_chr": chroma_loss(restored, target, eps) if weights.lambda_c > 0 else restored.new_zeros(()),
    }
    total = (
        terms["L_main"]
        + weights.lambda_hf * terms["L_hf"]
        + weights.lambda_g * terms["L_grad"]
        + weights.lambda_c * terms["L_chr"]
    )
    breakdown = {k: float(v.detach()) for k, v in terms.items()}
    breakdown["total"] = float(total.detach())
    if not math.isfinite(breakdown["total"]):
        where = f" at step {step}" if step is not None else ""
        raise NonFiniteLossError(f"non-finite loss{where}: {breakdown}", breakdown)
    return total, breakdown


@dataclass
class TrainResult:
    metrics: list[dict] = field(default_factory=list)
    best_val_psnr: float = float("nan")
    best_state: dict | None = None
    final_state: dict | None = None
    steps: int = 0
    data_audit: list = field(default_factory=list)


def _clip_to_tensor(data: np.ndarray, dtype, device) -> torch.Tensor:
    # (T, C, H, W) -> (C, T, H, W)
    return torch.from_numpy(np.ascontiguousarray(data.transpose(1, 0, 2, 3))).to(
        dtype=dtype, device=device
    )


def _sample_patch(
    data: np.ndarray, patch: int, rng: np.random.Generator
) -> tuple[np.ndarray, int, int]:
    _, _, h, w = data.shape
    ph = min(patch, h)
    pw = min(patch, w)
    y0 = int(rng.integers(0, h - ph + 1))
    x0 = int(rng.integers(0, w - pw + 1))
    return data[:, :, y0 : y0 + ph, x0 : x0 + pw], y0, x0


def _warmup_severity_cap(severity_range: tuple[float, float]) -> float:
    lo, hi = severity_range
    return lo + 0.5 * (hi - lo)


def make_training_batch(
    clips: list[np.ndarray],
    cfg: TrainConfig,
    rng: np.random.Generator,
    sample_counter: int,
    warmup: bool,
    dtype,
    device,
) -> tuple[torch.Tensor, torch.Tensor, list[tuple]]:
    """Degrade random patches online.

    Returns (noisy, clean_center, audit) where audit lists the sampled
    (clip index, y0, x0, severity, degradation seed) per batch element.
    """
    lo, hi = cfg.severity_range
    if warmup:
        hi = _warmup_severity_cap(cfg.severity_range)
    noisy_list, clean_list, audit = [], [], []
    for b in range(cfg.batch):
        idx = int(rng.integers(0, len(clips)))
        patch, y0, x0 = _sample_patch(clips[idx], cfg.patch, rng)
        severity = float(rng.uniform(lo, hi))
        if cfg.resample_noise:
            sample_seed = cfg.seed * 1_000_003 + sample_counter + b
        else:
            sample_seed = cfg.seed * 1_000_003 + idx
        deg_cfg = config_at_severity(severity, seed=sample_seed)
        degraded, _ = synthesize_degraded_clip(VideoClip(patch), deg_cfg)
        noisy_list.append(_clip_to_tensor(degraded.data, dtype, device))
        center = patch.shape[0] // 2
        clean_list.append(
            torch.from_numpy(np.ascontiguousarray(patch[center])).to(dtype=dtype, device=device)
        )
        audit.append((idx, y0, x0, severity, sample_seed))
    return torch.stack(noisy_list), torch.stack(clean_list), audit


def _effective_weights(weights: LossWeights, warmup: bool) -> LossWeights:
    if not warmup:
        return weights
    return LossWeights(
        lambda_u=weights.lambda_u,
        lambda_hf=weights.lambda_hf * 0.5,
        lambda_g=weights.lambda_g * 0.5,
        lambda_c=weights.lambda_c * 0.5,
        charbonnier_eps=weights.charbonnier_eps,
    )


def validate_psnr(
    model: VideoDenoiser,
    clips: list[np.ndarray],
    seed: int,
    severity: float = 2.0,
    dtype=torch.float32,
    device="cpu",
) -> float:
    """Mean restored-center PSNR on deterministically degraded clips."""
    model.eval()
    values = []
    with torch.no_grad():
        for i, clean in enumerate(clips):
            cfg = config_at_severity(severity, seed=seed + i)
            degraded, _ = synthesize_degraded_clip(VideoClip(clean), cfg)
            noisy = _clip_to_tensor(degraded.data, dtype, device).unsqueeze(0)
            out = model(noisy)
            center = clean.shape[0] // 2
            values.append(psnr(out.restored[0].cpu().numpy(), clean[center]))
    model.train()
    return float(np.mean(values))


def train(
    model: VideoDenoiser,
    clips: list[np.ndarray],
    cfg: TrainConfig,
    weights: LossWeights | None = None,
    val_clips: list[np.ndarray] | None = None,
    log_path: str | Path | None = None,
    device: str = "cpu",
    dtype=torch.float32,
    deterministic: bool = False,
    progress: bool = False,
) -> TrainResult:
    """AdamW training with online degradation, warm-up, and validation.

    Clean clips are (T, C, H, W) unit-range arrays. The first
    ``warmup_epochs`` epochs cap the sampled severity at the low half of
    the range and halve the auxiliary loss weights. Non-finite losses or
    gradients skip the step; ten consecutive failures abort.
    """
    weights = weights or LossWeights()
    if not clips:
        raise ValueError("training requires at least one clean clip")
    if deterministic:
        torch.manual_seed(cfg.seed)
    model = model.to(device=device, dtype=dtype)
    model.train()
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
    )

    steps_per_epoch = cfg.steps_per_epoch or max(1, len(clips) // cfg.batch)
    total_steps = cfg.max_steps or cfg.epochs * steps_per_epoch
    rng = np.random.default_rng(cfg.seed)

    result = TrainResult()
    best_psnr = -float("inf")
    consecutive_failures = 0
    sample_counter = 0

    for step in range(total_steps):
        epoch = step // steps_per_epoch
        warmup = epoch < cfg.warmup_epochs
        noisy, clean, audit = make_training_batch(
            clips, cfg, rng, sample_counter, warmup, dtype, device
        )
        result.data_audit.extend(audit)
        sample_counter += cfg.batch
        eff = _effective_weights(weights, warmup)

        optimizer.zero_grad()
        try:
            if cfg.mixed_precision and device == "cpu":
                with torch.autocast("cpu", dtype=torch.bfloat16):
                    out = model(noisy)
                    loss, breakdown = total_loss(
                        out.restored.float(), out.log_variance.float(), clean.float(),
                        eff, step,
                    )
            else:
                out = model(noisy)
                loss, breakdown = total_loss(out.restored, out.log_variance, clean, eff, step)
            loss.backward()
            grad_norm = torch.nn.utils.clip_grad_norm_(
                model.parameters(), cfg.grad_clip_norm
            )
            if not torch.isfinite(grad_norm):
                raise NonFiniteLossError(f"non-finite gradient norm at step {step}")
        except NonFiniteLossError as exc:
            consecutive_failures += 1
            result.metrics.append(
                {"step": step, "epoch": epoch, "skipped": 1, "error": str(exc)}
            )
            if consecutive_failures > 10:
                raise TrainingError(
                    f"aborting after {consecutive_failures} consecutive non-finite steps"
                ) from exc
            continue
        consecutive_failures = 0
        optimizer.step()

        row = {
            "step": step,
            "epoch": epoch,
            "L_main": breakdown["L_main"],
            "L_hf": breakdown["L_hf"],
            "L_grad": breakdown["L_grad"],
            "L_chr": breakdown["L_chr"],
            "total": breakdown["total"],
            "grad_norm": float(grad_norm),
            "lr": cfg.lr,
            "lambda_hf": eff.lambda_hf,
            "lambda_g": eff.lambda_g,
            "lambda_c": eff.lambda_c,
            "val_psnr": "",
        }

        end_of_epoch = (step + 1) % steps_per_epoch == 0
        if end_of_epoch and val_clips:
            val = validate_psnr(model, val_clips, seed=cfg.seed + 777, dtype=dtype, device=device)
            row["val_psnr"] = val
            if val > best_psnr:
                best_psnr = val
                result.best_state = {
                    k: v.detach().cpu().clone() for k, v in model.state_dict().items()
                }
        result.metrics.append(row)
        if progress and (step % 20 == 0 or step == total_steps - 1):
            print(f"step {step}: total={breakdown['total']:.5f}")

    result.best_val_psnr = best_psnr if best_psnr > -float("inf") else float("nan")
    result.final_state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
    if result.best_state is None:
        result.best_state = result.final_state
    result.steps = total_steps

    if log_path is not None:
        write_metrics_csv(result.metrics, log_path)
    return result


METRIC_COLUMNS = [
    "step", "epoch", "L_main", "L_hf", "L_grad", "L_chr", "total",
    "grad_norm", "lr", "val_psnr",
]


def write_metrics_csv(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = sorted({k for row in rows for k in row} - set(METRIC_COLUMNS))
    columns = METRIC_COLUMNS + extra
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})

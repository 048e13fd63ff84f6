"""Online mixed-degradation synthesis for training and evaluation pairs.

A clip is corrupted by a nested pipeline: per-frame exposure gain,
signal-dependent sensor noise, read noise, spatially correlated grain,
temporal flicker, and chroma drift form the inner pass; blur, a second
independent chroma perturbation, and compression wrap around it. A single
severity knob in [1.0, 3.0] scales every component between three fully
specified anchor settings.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.ndimage

from .media import (
    RGB,
    VideoClip,
    clamp_unit,
    load_clip,
    rgb_to_ycbcr_array,
    save_clip,
    ycbcr_to_rgb_array,
)

SEVERITY_MIN = 1.0
SEVERITY_MAX = 3.0

# 3x3 binomial kernel used to correlate grain noise spatially.
GRAIN_KERNEL = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0
GRAIN_KERNEL_L2 = float(np.sqrt(np.sum(GRAIN_KERNEL**2)))

# AR(1) smoothing factor for chroma drift offsets.
CHROMA_DRIFT_RHO = 0.9

DCT_BLOCK = 8


@dataclass
class FlickerConfig:
    prob: float = 0.2
    rho_range: tuple[float, float] = (0.85, 0.97)
    gain_std: float = 0.02
    offset_std: float = 0.003


@dataclass
class BlurConfig:
    prob: float = 0.3
    sigma_range: tuple[float, float] = (0.3, 1.0)


@dataclass
class CompressionConfig:
    mode: str = "proxy"  # none | external | proxy
    crf: int = 28
    codec_cmd: str | None = None


@dataclass
class DegradationConfig:
    """All sampled corruption parameters for one clip, plus the RNG seed."""

    severity: float = 1.0
    exposure_range: tuple[float, float] = (0.95, 1.05)
    shot_range: tuple[float, float] = (1.5e-3, 1.2e-2)
    read_range: tuple[float, float] = (4e-4, 4e-3)
    grain_range: tuple[float, float] = (8e-4, 8e-3)
    flicker: FlickerConfig = field(default_factory=FlickerConfig)
    chroma_std: float = 0.002
    blur: BlurConfig = field(default_factory=BlurConfig)
    compression: CompressionConfig = field(default_factory=CompressionConfig)
    seed: int = 0

    def __post_init__(self):
        for name in ("exposure_range", "shot_range", "read_range", "grain_range"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi, got ({lo}, {hi})")
        if not 0.0 <= self.flicker.prob <= 1.0:
            raise ValueError(f"flicker prob must be in [0, 1], got {self.flicker.prob}")
        if not 0 <= self.compression.crf <= 51:
            raise ValueError(f"crf must be in [0, 51], got {self.compression.crf}")


# Anchor settings at severities 1.0 / 2.0 / 3.0. Scalars interpolate
# linearly between adjacent anchors; exposure_lo is the one value that
# decreases with severity. Blur is a non-anchored default: probability is
# fixed at 0.3 and the blur sigma range scales linearly with severity.
_ANCHORS: dict[float, dict] = {
    1.0: dict(
        exposure_range=(0.95, 1.05),
        shot_range=(1.5e-3, 1.2e-2),
        read_range=(4e-4, 4e-3),
        grain_range=(8e-4, 8e-3),
        flicker_prob=0.20,
        flicker_gain_std=0.02,
        flicker_offset_std=0.003,
        chroma_std=0.002,
        crf=28.0,
    ),
    2.0: dict(
        exposure_range=(0.90, 1.10),
        shot_range=(3e-3, 2.4e-2),
        read_range=(8e-4, 8e-3),
        grain_range=(1.6e-3, 1.6e-2),
        flicker_prob=0.40,
        flicker_gain_std=0.04,
        flicker_offset_std=0.006,
        chroma_std=0.004,
        crf=32.0,
    ),
    3.0: dict(
        exposure_range=(0.85, 1.15),
        shot_range=(4.5e-3, 3.6e-2),
        read_range=(1.2e-3, 1.2e-2),
        grain_range=(2.4e-3, 2.4e-2),
        flicker_prob=0.60,
        flicker_gain_std=0.06,
        flicker_offset_std=0.009,
        chroma_std=0.006,
        crf=36.0,
    ),
}
FLICKER_RHO_RANGE = (0.85, 0.97)
BLUR_PROB = 0.3
BLUR_SIGMA_BASE = (0.3, 1.0)


def _lerp(a, b, t):
    if isinstance(a, tuple):
        return tuple(_lerp(x, y, t) for x, y in zip(a, b))
    return a + (b - a) * t


def config_at_severity(
    severity: float,
    seed: int = 0,
    compression_mode: str = "proxy",
    codec_cmd: str | None = None,
) -> DegradationConfig:
    """Interpolate the anchor schedule at an arbitrary severity in [1, 3]."""
    if not SEVERITY_MIN <= severity <= SEVERITY_MAX:
        raise ValueError(
            f"severity must be in [{SEVERITY_MIN}, {SEVERITY_MAX}], got {severity}"
        )
    lo_key = 2.0 if severity > 2.0 else 1.0
    hi_key = lo_key + 1.0
    t = severity - lo_key
    a, b = _ANCHORS[lo_key], _ANCHORS[hi_key]
    p = {k: _lerp(a[k], b[k], t) for k in a}
    return DegradationConfig(
        severity=severity,
        exposure_range=p["exposure_range"],
        shot_range=p["shot_range"],
        read_range=p["read_range"],
        grain_range=p["grain_range"],
        flicker=FlickerConfig(
            prob=p["flicker_prob"],
            rho_range=FLICKER_RHO_RANGE,
            gain_std=p["flicker_gain_std"],
            offset_std=p["flicker_offset_std"],
        ),
        chroma_std=p["chroma_std"],
        blur=BlurConfig(
            prob=BLUR_PROB,
            sigma_range=(BLUR_SIGMA_BASE[0] * severity, BLUR_SIGMA_BASE[1] * severity),
        ),
        compression=CompressionConfig(
            mode=compression_mode, crf=int(round(p["crf"])), codec_cmd=codec_cmd
        ),
        seed=seed,
    )


def sample_exposure_gains(
    num_frames: int, exposure_range: tuple[float, float], rng: np.random.Generator
) -> np.ndarray:
    """Per-frame multiplicative gains drawn independently and uniformly."""
    lo, hi = exposure_range
    return rng.uniform(lo, hi, size=num_frames)


def apply_sensor_noise(
    clip: VideoClip,
    shot_scale: float,
    read_scale: float,
    rng: np.random.Generator,
    clamp: bool = True,
) -> VideoClip:
    """Heteroscedastic Gaussian noise with std sqrt(shot * x + read^2).

    A Poisson-Gaussian surrogate: variance grows linearly with the clean
    intensity plus a constant read-noise floor. ``clamp=False`` exposes the
    raw noisy signal for statistical tests.
    """
    if shot_scale < 0 or read_scale < 0:
        raise ValueError("noise scales must be non-negative")
    if shot_scale == 0 and read_scale == 0:
        return clip.copy()
    std = np.sqrt(shot_scale * np.maximum(clip.data, 0.0) + read_scale**2)
    noisy = clip.data + rng.standard_normal(clip.data.shape) * std
    return VideoClip(clamp_unit(noisy) if clamp else noisy, clip.frame_rate, clip.color_space)


def apply_grain(
    clip: VideoClip, grain_std: float, rng: np.random.Generator, clamp: bool = True
) -> VideoClip:
    """Spatially correlated additive grain, shared across channels per frame.

    A white Gaussian field is convolved with a fixed 3x3 binomial kernel;
    the innovation std is pre-scaled by 1/||k||_2 so the post-convolution
    std equals ``grain_std``.
    """
    if grain_std < 0:
        raise ValueError("grain_std must be non-negative")
    if grain_std == 0:
        return clip.copy()
    t, _, h, w = clip.shape
    field_std = grain_std / GRAIN_KERNEL_L2
    white = rng.standard_normal((t, h, w)) * field_std
    grain = np.stack(
        [scipy.ndimage.convolve(white[i], GRAIN_KERNEL, mode="wrap") for i in range(t)]
    )
    noisy = clip.data + grain[:, None, :, :]
    return VideoClip(clamp_unit(noisy) if clamp else noisy, clip.frame_rate, clip.color_space)


def ar1_sequence(
    length: int, rho: float, stationary_std: float, rng: np.random.Generator
) -> np.ndarray:
    """AR(1) sequence x_t = rho * x_{t-1} + eps_t with the given stationary std.

    The innovation std is stationary_std * sqrt(1 - rho^2) and x_0 is drawn
    from the stationary distribution, so every step has the target std.
    """
    if stationary_std == 0:
        return np.zeros(length)
    innovation = stationary_std * np.sqrt(max(0.0, 1.0 - rho**2))
    x = np.empty(length)
    x[0] = rng.normal(0.0, stationary_std)
    for i in range(1, length):
        x[i] = rho * x[i - 1] + rng.normal(0.0, innovation)
    return x


def apply_flicker(
    clip: VideoClip, cfg: FlickerConfig, rng: np.random.Generator
) -> tuple[VideoClip, dict]:
    """Temporally correlated per-frame gain and offset fluctuations.

    With probability ``cfg.prob`` per clip, frame t becomes
    (1 + g_t) * x + o_t where g and o are AR(1) sequences with stationary
    stds (gain_std, offset_std).
    """
    record = {"triggered": False}
    if rng.uniform() >= cfg.prob:
        return clip.copy(), record
    rho = rng.uniform(*cfg.rho_range)
    gains = ar1_sequence(clip.num_frames, rho, cfg.gain_std, rng)
    offsets = ar1_sequence(clip.num_frames, rho, cfg.offset_std, rng)
    out = (1.0 + gains[:, None, None, None]) * clip.data + offsets[:, None, None, None]
    record = {
        "triggered": True,
        "rho": float(rho),
        "gains": gains.tolist(),
        "offsets": offsets.tolist(),
    }
    return VideoClip(clamp_unit(out), clip.frame_rate, clip.color_space), record


def apply_chroma_drift(
    clip: VideoClip, chroma_std: float, rng: np.random.Generator
) -> tuple[VideoClip, dict]:
    """Per-frame scalar Cb/Cr offsets following AR(1) drift, luma untouched."""
    if chroma_std < 0:
        raise ValueError("chroma_std must be non-negative")
    if chroma_std == 0:
        return clip.copy(), {"cb": [0.0] * clip.num_frames, "cr": [0.0] * clip.num_frames}
    if clip.color_space != RGB:
        raise ValueError("chroma drift expects an RGB clip")
    cb = ar1_sequence(clip.num_frames, CHROMA_DRIFT_RHO, chroma_std, rng)
    cr = ar1_sequence(clip.num_frames, CHROMA_DRIFT_RHO, chroma_std, rng)
    ycbcr = rgb_to_ycbcr_array(clip.data)
    ycbcr[:, 1] += cb[:, None, None]
    ycbcr[:, 2] += cr[:, None, None]
    out = ycbcr_to_rgb_array(ycbcr)
    return (
        VideoClip(out, clip.frame_rate, clip.color_space),
        {"cb": cb.tolist(), "cr": cr.tolist()},
    )


def apply_blur(
    clip: VideoClip, cfg: BlurConfig, rng: np.random.Generator
) -> tuple[VideoClip, dict]:
    """Isotropic Gaussian blur (truncated at 3 sigma, replicate padding)."""
    record = {"triggered": False}
    if rng.uniform() >= cfg.prob:
        return clip.copy(), record
    sigma = rng.uniform(*cfg.sigma_range)
    if sigma <= 1e-8:
        return clip.copy(), {"triggered": True, "sigma": float(sigma)}
    out = scipy.ndimage.gaussian_filter(
        clip.data, sigma=(0, 0, sigma, sigma), mode="nearest", truncate=3.0
    )
    record = {"triggered": True, "sigma": float(sigma)}
    return VideoClip(clamp_unit(out), clip.frame_rate, clip.color_space), record


def quantization_step(crf: int) -> float:
    """Coefficient quantization step for the compression proxy."""
    return 0.002 * 2.0 ** ((crf - 28) / 6.0)


def _blockwise_dct_quantize(luma: np.ndarray, step: float) -> np.ndarray:
    """8x8 block DCT, quantize coefficients to multiples of ``step``, invert."""
    h, w = luma.shape
    pad_h = (-h) % DCT_BLOCK
    pad_w = (-w) % DCT_BLOCK
    padded = np.pad(luma, ((0, pad_h), (0, pad_w)), mode="edge")
    ph, pw = padded.shape
    blocks = padded.reshape(ph // DCT_BLOCK, DCT_BLOCK, pw // DCT_BLOCK, DCT_BLOCK)
    blocks = blocks.transpose(0, 2, 1, 3)
    coefs = scipy.fft.dctn(blocks, axes=(-2, -1), norm="ortho")
    if step > 0:
        coefs = np.round(coefs / step) * step
    rec = scipy.fft.idctn(coefs, axes=(-2, -1), norm="ortho")
    rec = rec.transpose(0, 2, 1, 3).reshape(ph, pw)
    return rec[:h, :w]


def _compress_proxy(clip: VideoClip, crf: int) -> VideoClip:
    step = quantization_step(crf)
    ycbcr = rgb_to_ycbcr_array(clip.data)
    for t in range(clip.num_frames):
        ycbcr[t, 0] = _blockwise_dct_quantize(ycbcr[t, 0], step)
    return VideoClip(ycbcr_to_rgb_array(ycbcr), clip.frame_rate, clip.color_space)


def _compress_external(clip: VideoClip, cfg: CompressionConfig) -> VideoClip:
    if not cfg.codec_cmd:
        raise RuntimeError(
            "external compression requires a codec command template "
            "with {input}, {output}, {crf} placeholders"
        )
    with tempfile.TemporaryDirectory() as tmp:
        in_dir = Path(tmp) / "in"
        out_dir = Path(tmp) / "out"
        out_dir.mkdir()
        save_clip(clip, in_dir)
        cmd = cfg.codec_cmd.format(input=str(in_dir), output=str(out_dir), crf=cfg.crf)
        argv = shlex.split(cmd)
        try:
            subprocess.run(argv, check=True, capture_output=True)
        except FileNotFoundError as exc:
            raise RuntimeError(f"codec binary not found: {argv[0]}") from exc
        except subprocess.CalledProcessError as exc:
            raise RuntimeError(
                f"codec command failed with code {exc.returncode}: "
                f"{exc.stderr.decode(errors='replace')[:500]}"
            ) from exc
        out = load_clip(out_dir)
    if out.shape != clip.shape:
        raise RuntimeError(
            f"codec returned shape {out.shape}, expected {clip.shape}"
        )
    return VideoClip(out.data.astype(clip.data.dtype), clip.frame_rate, clip.color_space)


def apply_compression(clip: VideoClip, cfg: CompressionConfig) -> VideoClip:
    """Identity, external encoder round trip, or the deterministic DCT proxy."""
    if cfg.mode == "none":
        return clip.copy()
    if cfg.mode == "proxy":
        return _compress_proxy(clip, cfg.crf)
    if cfg.mode == "external":
        return _compress_external(clip, cfg)
    raise ValueError(f"unknown compression mode {cfg.mode!r}")


def synthesize_degraded_clip(
    clean: VideoClip, cfg: DegradationConfig
) -> tuple[VideoClip, dict]:
    """Run the full nested degradation pipeline on a clean RGB clip.

    Stage order: exposure gain, sensor noise, grain, flicker, chroma drift
    (the inner pass), then blur, an independent chroma perturbation, and
    compression. Returns the degraded clip and a record of every sampled
    parameter for exact reproducibility.
    """
    if clean.color_space != RGB:
        raise ValueError("degradation expects an RGB clip")
    rng = np.random.default_rng(cfg.seed)
    record: dict = {"seed": cfg.seed, "severity": cfg.severity}

    gains = sample_exposure_gains(clean.num_frames, cfg.exposure_range, rng)
    record["exposure_gains"] = gains.tolist()
    x = VideoClip(
        clamp_unit(clean.data * gains[:, None, None, None]),
        clean.frame_rate,
        clean.color_space,
    )

    shot = rng.uniform(*cfg.shot_range)
    read = rng.uniform(*cfg.read_range)
    grain = rng.uniform(*cfg.grain_range)
    record.update(shot_scale=float(shot), read_scale=float(read), grain_std=float(grain))
    x = apply_sensor_noise(x, shot, read, rng)
    x = apply_grain(x, grain, rng)

    x, record["flicker"] = apply_flicker(x, cfg.flicker, rng)
    x, record["chroma_drift"] = apply_chroma_drift(x, cfg.chroma_std, rng)
    x, record["blur"] = apply_blur(x, cfg.blur, rng)
    x, record["chroma_perturbation"] = apply_chroma_drift(x, cfg.chroma_std, rng)
    record["compression"] = {"mode": cfg.compression.mode, "crf": cfg.compression.crf}
    x = apply_compression(x, cfg.compression)
    return x, record


def config_to_dict(cfg: DegradationConfig) -> dict:
    return asdict(cfg)

"""End-to-end denoiser: stems, pseudo-3D encoder with GP-guided fusion,
global context, decoder refinement, and the structure-color head.

The network restores the center frame of a fixed-length RGB clip and
predicts a per-pixel log-variance map alongside per-stage fusion
diagnostics.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .cues import CueExtractor
from .gp_fusion import FUSION_MODES, GPFusionBlock, resize_cue
from .nnops import (
    ChannelNorm,
    count_parameters,
    luminance_t,
    pad_replicate_3d,
    rgb_to_ycbcr_t,
    smooth_act,
    ycbcr_to_rgb_t,
)

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    clip_len: int = 5
    base_width: int = 32
    stage_depths: tuple[int, ...] = (2, 3, 4)
    gp_stages: tuple[int, ...] = (2, 3)
    inducing_grid: int = 4
    inducing_mode: str = "average"
    refine_stages: int = 2
    cue_channels: int = 8
    global_dim: int = 32
    fusion_mode: str = "gp"  # gp | attn_var | attn_var_p | det_gate | none
    hetero: bool = True
    yc_head: bool = True
    use_hf: bool = True
    zero_head_init: bool = True
    log_var_clamp: float = 8.0
    alpha_h_init: float = 0.1
    alpha_c_init: float = 0.05

    def __post_init__(self):
        if isinstance(self.stage_depths, list):
            self.stage_depths = tuple(self.stage_depths)
        if isinstance(self.gp_stages, list):
            self.gp_stages = tuple(self.gp_stages)
        stages = set(range(1, len(self.stage_depths) + 1))
        if not set(self.gp_stages) <= stages:
            raise ValueError(f"gp_stages {self.gp_stages} must be within {sorted(stages)}")
        if self.base_width < 1:
            raise ValueError("base_width must be positive")
        if self.fusion_mode not in FUSION_MODES + ("none",):
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")

    def stage_width(self, stage: int) -> int:
        return self.base_width * 2 ** (stage - 1)


@dataclass
class ModelOutput:
    restored: torch.Tensor  # (B, 3, H, W) RGB in [0, 1]
    log_variance: torch.Tensor  # (B, 1, H, W), clamped
    diagnostics: dict = field(default_factory=dict)


class StemBranch(nn.Module):
    """One pseudo-3D conv unit: spatial conv, nonlinearity, temporal conv."""

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        self.spatial = nn.Conv3d(in_channels, width, (1, 3, 3))
        self.temporal = nn.Conv3d(width, width, (3, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.spatial(pad_replicate_3d(x, 0, 1, 1))
        x = smooth_act(x)
        return self.temporal(pad_replicate_3d(x, 1, 0, 0))


class Stem(nn.Module):
    """Separate luma/chroma/RGB extractors fused by a pointwise projection."""

    def __init__(self, width: int):
        super().__init__()
        self.luma = StemBranch(1, width)
        self.chroma = StemBranch(2, width)
        self.rgb = StemBranch(3, width)
        self.fuse = nn.Conv3d(3 * width, width, kernel_size=1)

    def forward(self, clip_rgb: torch.Tensor, clip_ycbcr: torch.Tensor) -> torch.Tensor:
        parts = [
            self.luma(clip_ycbcr[:, :1]),
            self.chroma(clip_ycbcr[:, 1:]),
            self.rgb(clip_rgb),
        ]
        return self.fuse(torch.cat(parts, dim=1))


class Pseudo3DBlock(nn.Module):
    """Residual factorized video block: normalized spatial then temporal pair."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm_s = ChannelNorm(channels)
        self.dw_spatial = nn.Conv3d(channels, channels, (1, 3, 3), groups=channels)
        self.pw_spatial = nn.Conv3d(channels, channels, kernel_size=1)
        self.norm_t = ChannelNorm(channels)
        self.dw_temporal = nn.Conv3d(channels, channels, (3, 1, 1), groups=channels)
        self.pw_temporal = nn.Conv3d(channels, channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.dw_spatial(pad_replicate_3d(self.norm_s(x), 0, 1, 1))
        h = smooth_act(self.pw_spatial(h))
        h = self.dw_temporal(pad_replicate_3d(self.norm_t(h), 1, 0, 0))
        return x + self.pw_temporal(h)


class GlobalBranch(nn.Module):
    """Strided shallow conv stack pooled into a clip-level context vector."""

    def __init__(self, global_dim: int, hidden: int = 16):
        super().__init__()
        # replicate padding keeps constant clips constant, so the pooled
        # context depends only on content, not on spatial size
        self.conv1 = nn.Conv3d(
            3, hidden, (1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1),
            padding_mode="replicate",
        )
        self.conv2 = nn.Conv3d(
            hidden, 2 * hidden, (1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1),
            padding_mode="replicate",
        )
        self.fc1 = nn.Linear(2 * hidden, 2 * hidden)
        self.fc2 = nn.Linear(2 * hidden, global_dim)

    def forward(self, clip_ycbcr: torch.Tensor) -> torch.Tensor:
        h = smooth_act(self.conv1(clip_ycbcr))
        h = smooth_act(self.conv2(h))
        pooled = h.mean(dim=(2, 3, 4))
        return self.fc2(smooth_act(self.fc1(pooled)))


class Downsample(nn.Module):
    """Strided spatial conv halving H and W while changing width."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv3d(
            in_channels, out_channels, (1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


def _upsample_spatial(x: torch.Tensor) -> torch.Tensor:
    b, c, t, h, w = x.shape
    frames = x.permute(0, 2, 1, 3, 4).reshape(b * t, c, h, w)
    up = F.interpolate(frames, scale_factor=2, mode="bilinear", align_corners=False)
    return up.reshape(b, t, c, 2 * h, 2 * w).permute(0, 2, 1, 3, 4)


class UpStage(nn.Module):
    """Bilinear upsample + conv, skip fusion, one refinement block."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.reduce = nn.Conv3d(in_channels, out_channels, (1, 3, 3), padding=(0, 1, 1))
        self.skip_fuse = nn.Conv3d(2 * out_channels, out_channels, kernel_size=1)
        self.refine = Pseudo3DBlock(out_channels)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = self.reduce(_upsample_spatial(x))
        x = self.skip_fuse(torch.cat([x, skip], dim=1))
        return self.refine(x)


class _CorrectionHead(nn.Module):
    """Two-conv 2D head; the final conv may start at zero for residual identity."""

    def __init__(self, width: int, out_channels: int, zero_init: bool):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1, padding_mode="replicate")
        self.conv2 = nn.Conv2d(width, out_channels, 3, padding=1, padding_mode="replicate")
        if zero_init:
            nn.init.zeros_(self.conv2.weight)
            nn.init.zeros_(self.conv2.bias)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.conv2(smooth_act(self.conv1(z)))


class ReconstructionHead(nn.Module):
    """Structure-color residual head over the noisy center frame.

    Luma and chroma corrections are applied separately in YCbCr (with an
    optional extra high-frequency luma term), or a single RGB correction
    when the decomposed head is disabled. A side head predicts the
    log-variance map used by the heteroscedastic objective.
    """

    def __init__(self, width: int, config: ModelConfig):
        super().__init__()
        self.cfg = config
        zero = config.zero_head_init
        if config.yc_head:
            self.h_y = _CorrectionHead(width, 1, zero)
            self.h_c = _CorrectionHead(width, 2, zero)
            self.alpha_c = nn.Parameter(torch.tensor(float(config.alpha_c_init)))
            if config.use_hf:
                self.h_hf = _CorrectionHead(width, 1, zero)
                self.alpha_h = nn.Parameter(torch.tensor(float(config.alpha_h_init)))
        else:
            self.h_rgb = _CorrectionHead(width, 3, zero)
        if config.hetero:
            self.h_s = _CorrectionHead(width, 1, zero)

    def forward(
        self, z_center: torch.Tensor, x_center_rgb: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if self.cfg.yc_head:
            ycbcr = rgb_to_ycbcr_t(x_center_rgb)
            luma_fix = self.h_y(z_center)
            if self.cfg.use_hf:
                luma_fix = luma_fix + self.alpha_h * self.h_hf(z_center)
            y_hat = (ycbcr[:, :1] + luma_fix).clamp(0.0, 1.0)
            c_hat = (ycbcr[:, 1:] + self.alpha_c * self.h_c(z_center)).clamp(0.0, 1.0)
            restored = ycbcr_to_rgb_t(torch.cat([y_hat, c_hat], dim=1))
        else:
            restored = (x_center_rgb + self.h_rgb(z_center)).clamp(0.0, 1.0)
        if self.cfg.hetero:
            bound = self.cfg.log_var_clamp
            log_var = self.h_s(z_center).clamp(-bound, bound)
        else:
            log_var = torch.zeros_like(restored[:, :1])
        return restored, log_var


class VideoDenoiser(nn.Module):
    """Full restoration network for fixed-length RGB clips."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        w = cfg.base_width

        self.stem = Stem(w)
        self.cue_extractor = CueExtractor(cfg.cue_channels)
        self.global_branch = GlobalBranch(cfg.global_dim)

        stages = []
        downs = []
        fusions: dict[str, nn.Module] = {}
        for stage in range(1, len(cfg.stage_depths) + 1):
            width = cfg.stage_width(stage)
            stages.append(
                nn.Sequential(*[Pseudo3DBlock(width) for _ in range(cfg.stage_depths[stage - 1])])
            )
            if stage < len(cfg.stage_depths):
                downs.append(Downsample(width, cfg.stage_width(stage + 1)))
            if stage in cfg.gp_stages and cfg.fusion_mode != "none":
                fusions[str(stage)] = GPFusionBlock(
                    width,
                    cfg.cue_channels,
                    cfg.global_dim,
                    mode=cfg.fusion_mode,
                    grid=cfg.inducing_grid,
                    inducing_mode=cfg.inducing_mode,
                )
        self.stages = nn.ModuleList(stages)
        self.downs = nn.ModuleList(downs)
        self.fusions = nn.ModuleDict(fusions)

        ups = []
        for stage in range(len(cfg.stage_depths), 1, -1):
            ups.append(UpStage(cfg.stage_width(stage), cfg.stage_width(stage - 1)))
        self.ups = nn.ModuleList(ups)
        self.head = ReconstructionHead(w, cfg)

    def _check_input(self, clip: torch.Tensor) -> None:
        if clip.dim() != 5 or clip.shape[1] != 3:
            raise ValueError(f"expected (B, 3, T, H, W), got {tuple(clip.shape)}")
        _, _, t, h, w = clip.shape
        if t != self.config.clip_len:
            raise ValueError(f"clip length {t} != configured {self.config.clip_len}")
        down_factor = 2 ** (len(self.config.stage_depths) - 1)
        if h % down_factor or w % down_factor:
            raise ValueError(f"spatial size must be divisible by {down_factor}")
        grid = self.config.inducing_grid
        if h // down_factor < grid or w // down_factor < grid:
            raise ValueError(
                f"input {h}x{w} leaves the last stage smaller than the "
                f"{grid}x{grid} inducing grid"
            )

    def forward(self, clip_rgb: torch.Tensor) -> ModelOutput:
        self._check_input(clip_rgb)
        ycbcr = rgb_to_ycbcr_t(clip_rgb)
        cue = self.cue_extractor(ycbcr[:, :1])
        context = self.global_branch(ycbcr)

        feats = self.stem(clip_rgb, ycbcr)
        skips = []
        diagnostics: dict[int, dict] = {}
        for stage_idx, stage in enumerate(self.stages, start=1):
            feats = stage(feats)
            key = str(stage_idx)
            if key in self.fusions:
                feats, diag = self.fusions[key](feats, cue, context)
                diagnostics[stage_idx] = diag
            skips.append(feats)
            if stage_idx < len(self.stages):
                feats = self.downs[stage_idx - 1](feats)

        z = skips[-1]
        for up, skip in zip(self.ups, reversed(skips[:-1])):
            z = up(z, skip)

        center = self.config.clip_len // 2
        z_center = z[:, :, center]
        x_center = clip_rgb[:, :, center]
        restored, log_var = self.head(z_center, x_center)
        return ModelOutput(restored=restored, log_variance=log_var, diagnostics=diagnostics)


def build_model(config: ModelConfig | None = None) -> VideoDenoiser:
    return VideoDenoiser(config)


def save_checkpoint(model: VideoDenoiser, path, seed: int | None = None, extra: dict | None = None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
        "seed": seed,
        "num_parameters": count_parameters(model),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path, map_location="cpu") -> tuple[VideoDenoiser, dict]:
    payload = torch.load(path, map_location=map_location, weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config = ModelConfig(**payload["config"])
    model = VideoDenoiser(config)
    model.load_state_dict(payload["state_dict"])
    return model, payload

"""Noise-cue extraction from the luminance clip.

Four raw cue channels capture local structure and instability: absolute
horizontal, vertical, and temporal forward differences plus local 3x3
variance. A shallow pointwise projection lifts them to learned features.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .nnops import smooth_act

CUE_CHANNELS = 8
RAW_CUE_CHANNELS = 4


def luminance_derivatives(y: torch.Tensor) -> torch.Tensor:
    """|dx|, |dy|, |dt| forward differences of a (B, 1, T, H, W) luma clip.

    Replicate boundary handling: the last column/row/frame difference is 0.
    A single-frame clip has an all-zero temporal channel.
    """
    if y.dim() != 5 or y.shape[1] != 1:
        raise ValueError(f"expected (B, 1, T, H, W), got {tuple(y.shape)}")
    dx = torch.zeros_like(y)
    dy = torch.zeros_like(y)
    dt = torch.zeros_like(y)
    dx[..., :-1] = (y[..., 1:] - y[..., :-1]).abs()
    dy[..., :-1, :] = (y[..., 1:, :] - y[..., :-1, :]).abs()
    if y.shape[2] > 1:
        dt[:, :, :-1] = (y[:, :, 1:] - y[:, :, :-1]).abs()
    return torch.cat([dx, dy, dt], dim=1)


def local_variance_3x3(y: torch.Tensor) -> torch.Tensor:
    """Per-pixel variance over the replicate-padded 3x3 spatial window.

    Computed as E[x^2] - E[x]^2 and clamped at 0 against float cancellation.
    """
    if y.dim() != 5 or y.shape[1] != 1:
        raise ValueError(f"expected (B, 1, T, H, W), got {tuple(y.shape)}")
    if y.shape[-2] < 3 or y.shape[-1] < 3:
        raise ValueError("local variance needs spatial size >= 3x3")
    padded = F.pad(y, (1, 1, 1, 1, 0, 0), mode="replicate")
    mean = F.avg_pool3d(padded, kernel_size=(1, 3, 3), stride=1)
    mean_sq = F.avg_pool3d(padded**2, kernel_size=(1, 3, 3), stride=1)
    return (mean_sq - mean**2).clamp(min=0.0)


def extract_raw_cues(y: torch.Tensor) -> torch.Tensor:
    """Stack the three derivative channels and local variance: (B, 4, T, H, W)."""
    return torch.cat([luminance_derivatives(y), local_variance_3x3(y)], dim=1)


class CueProjection(nn.Module):
    """Shallow learned lift of the raw cues: one pointwise conv + nonlinearity."""

    def __init__(self, out_channels: int = CUE_CHANNELS):
        super().__init__()
        self.proj = nn.Conv3d(RAW_CUE_CHANNELS, out_channels, kernel_size=1)

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        if raw.shape[1] != RAW_CUE_CHANNELS:
            raise ValueError(
                f"expected {RAW_CUE_CHANNELS} raw cue channels, got {raw.shape[1]}"
            )
        return smooth_act(self.proj(raw))


class CueExtractor(nn.Module):
    """Raw cue computation followed by the learned projection."""

    def __init__(self, out_channels: int = CUE_CHANNELS):
        super().__init__()
        self.projection = CueProjection(out_channels)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.projection(extract_raw_cues(y))

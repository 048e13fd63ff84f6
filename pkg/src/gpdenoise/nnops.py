"""Shared torch building blocks: color transforms, normalization, census.

Video tensors follow the conv3d layout (B, C, T, H, W).
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .media import CHROMA_OFFSET, RGB_TO_YCBCR_MATRIX, YCBCR_TO_RGB_MATRIX


def smooth_act(x: torch.Tensor) -> torch.Tensor:
    """The package-wide smooth nonlinearity (zero-preserving)."""
    return F.silu(x)


def _matmul_channels(x: torch.Tensor, matrix) -> torch.Tensor:
    m = torch.as_tensor(matrix, dtype=x.dtype, device=x.device)
    return torch.einsum("ij,bj...->bi...", m, x)


def rgb_to_ycbcr_t(x: torch.Tensor) -> torch.Tensor:
    """(B, 3, ...) RGB -> YCbCr with +0.5 chroma offset."""
    out = _matmul_channels(x, RGB_TO_YCBCR_MATRIX)
    offset = torch.zeros(3, dtype=x.dtype, device=x.device)
    offset[1:] = CHROMA_OFFSET
    return out + offset.view(1, 3, *([1] * (x.dim() - 2)))


def ycbcr_to_rgb_t(x: torch.Tensor, clamp: bool = True) -> torch.Tensor:
    """(B, 3, ...) YCbCr -> RGB, clamped to [0, 1] by default."""
    offset = torch.zeros(3, dtype=x.dtype, device=x.device)
    offset[1:] = CHROMA_OFFSET
    out = _matmul_channels(x - offset.view(1, 3, *([1] * (x.dim() - 2))), YCBCR_TO_RGB_MATRIX)
    return out.clamp(0.0, 1.0) if clamp else out


def luminance_t(x: torch.Tensor) -> torch.Tensor:
    """(B, 3, ...) RGB -> (B, 1, ...) luma."""
    w = torch.as_tensor(RGB_TO_YCBCR_MATRIX[0], dtype=x.dtype, device=x.device)
    return torch.einsum("j,bj...->b...", w, x).unsqueeze(1)


class ChannelNorm(nn.Module):
    """LayerNorm across the channel axis at every spatio-temporal location."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        shape = (1, -1) + (1,) * (x.dim() - 2)
        normed = (x - mean) / torch.sqrt(var + self.eps)
        return normed * self.weight.view(shape) + self.bias.view(shape)


def pad_replicate_3d(x: torch.Tensor, pad_t: int, pad_h: int, pad_w: int) -> torch.Tensor:
    """Replicate padding on the (T, H, W) axes of a (B, C, T, H, W) tensor."""
    return F.pad(x, (pad_w, pad_w, pad_h, pad_h, pad_t, pad_t), mode="replicate")


def count_parameters(module: nn.Module, trainable_only: bool = True) -> int:
    return sum(
        p.numel()
        for p in module.parameters()
        if p.requires_grad or not trainable_only
    )


def parameter_census(module: nn.Module) -> dict[str, int]:
    """Per-submodule parameter counts keyed by the top-level child name."""
    census: dict[str, int] = {}
    for name, child in module.named_children():
        census[name] = count_parameters(child)
    direct = sum(p.numel() for p in module.parameters(recurse=False))
    if direct:
        census["(direct)"] = direct
    census["(total)"] = count_parameters(module)
    return census

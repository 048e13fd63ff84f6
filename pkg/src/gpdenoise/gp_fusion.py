"""Sparse GP-guided local posterior estimation and temporal-detail fusion.

Dense per-location descriptors are compared against a compact pooled
inducing set through a factored spatio-temporal RBF kernel. Softmax
assignment weights mix per-token predicted means and variances into local
posterior moments via the law of total variance; the resulting uncertainty
descriptor drives a gate that blends a temporal-aggregation branch against
a detail-preserving spatial bypass.

Two attention ablations are provided: plain dot-product assignment and a
parameter-matched control that adds temperature, output-scale, and
temporal-weight scalars.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .nnops import pad_replicate_3d, smooth_act

KERNEL_EPS = 1e-4
VARIANCE_EPS = 1e-4
LOG_EPS = 1e-6
INDUCING_GRID = 4
GATE_HIDDEN = 16

FUSION_MODES = ("gp", "attn_var", "attn_var_p", "det_gate")


class KernelParams(nn.Module):
    """Positive kernel parameters via softplus of unconstrained raws.

    Raws are initialized from a standard normal; the softplus map plus a
    small floor keeps amplitude, length scale, and temporal scale strictly
    positive for any raw value.
    """

    def __init__(self):
        super().__init__()
        self.raw_alpha = nn.Parameter(torch.randn(()))
        self.raw_ell = nn.Parameter(torch.randn(()))
        self.raw_gamma = nn.Parameter(torch.randn(()))

    @staticmethod
    def _positive(raw: torch.Tensor) -> torch.Tensor:
        return F.softplus(raw) + KERNEL_EPS

    @property
    def alpha(self) -> torch.Tensor:
        return self._positive(self.raw_alpha)

    @property
    def ell(self) -> torch.Tensor:
        return self._positive(self.raw_ell)

    @property
    def gamma(self) -> torch.Tensor:
        return self._positive(self.raw_gamma)


def kernel_matrix(
    queries: torch.Tensor,
    inducing: torch.Tensor,
    tau_q: torch.Tensor,
    tau_m: torch.Tensor,
    alpha: torch.Tensor,
    ell: torch.Tensor,
    gamma: torch.Tensor,
) -> torch.Tensor:
    """Factored spatio-temporal RBF kernel between queries and inducing tokens.

    K_ij = alpha * exp(-|q_i - m_j|^2 / (2 ell^2) - (tau_i - tau_j)^2 / (2 gamma^2)),
    shape (B, N, M) with every entry in (0, alpha].
    """
    for value in (alpha, ell, gamma):
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise FloatingPointError("kernel parameters must be finite")
    sq_dist = (
        queries.pow(2).sum(-1, keepdim=True)
        - 2.0 * queries @ inducing.transpose(-1, -2)
        + inducing.pow(2).sum(-1).unsqueeze(-2)
    ).clamp(min=0.0)
    tau_diff = tau_q.unsqueeze(-1) - tau_m.unsqueeze(-2)
    exponent = -sq_dist / (2.0 * ell**2) - tau_diff**2 / (2.0 * gamma**2)
    return alpha * torch.exp(exponent)


def assignment_weights(kernel: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax over the inducing axis (max-subtracted internally)."""
    return torch.softmax(kernel, dim=-1)


def posterior_moments(
    weights: torch.Tensor,
    inducing_mean: torch.Tensor,
    inducing_var: torch.Tensor,
    clamp: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mixture posterior moments from assignment weights and token statistics.

    mean_i = sum_j a_ij mu_j and
    var_i = sum_j a_ij (sigma_j^2 + mu_j^2) - mean_i^2,
    the law-of-total-variance decomposition. The variance is mathematically
    non-negative; ``clamp`` guards float cancellation.
    """
    mean = (weights * inducing_mean.unsqueeze(-2)).sum(-1)
    second = (weights * (inducing_var + inducing_mean**2).unsqueeze(-2)).sum(-1)
    var = second - mean**2
    if clamp:
        var = var.clamp(min=0.0)
    return mean, var


def uncertainty_descriptor(
    mean: torch.Tensor, var: torch.Tensor, eps: float = LOG_EPS
) -> torch.Tensor:
    """Stack posterior mean with log-variance: (..., 2), finite for var >= 0."""
    return torch.stack([mean, torch.log(var + eps)], dim=-1)


class InducingStatsHead(nn.Module):
    """Two-layer map from a pooled token to its predicted mean and variance."""

    def __init__(self, dim: int):
        super().__init__()
        self.hidden = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, 2)

    def forward(self, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.out(smooth_act(self.hidden(tokens)))
        mean = h[..., 0]
        var = F.softplus(h[..., 1]) + VARIANCE_EPS
        return mean, var


def pool_inducing_tokens(
    descriptors: torch.Tensor, grid: int = INDUCING_GRID, mode: str = "average"
) -> tuple[torch.Tensor, torch.Tensor]:
    """Average-pool a (B, d, T, H, W) descriptor volume onto a spatial grid.

    ``average`` collapses frames after pooling, yielding grid*grid tokens
    with temporal position 0.5; ``per_frame`` keeps one grid per frame with
    live temporal positions.
    Returns (tokens (B, M, d), tau (M,)).
    """
    b, d, t, h, w = descriptors.shape
    if h < grid or w < grid:
        raise ValueError(f"stage size {h}x{w} is smaller than the {grid}x{grid} grid")
    frames = descriptors.permute(0, 2, 1, 3, 4).reshape(b * t, d, h, w)
    pooled = F.adaptive_avg_pool2d(frames, (grid, grid))
    pooled = pooled.reshape(b, t, d, grid * grid)
    if mode == "average":
        tokens = pooled.mean(dim=1).transpose(-1, -2)
        tau = torch.full(
            (grid * grid,), 0.5, dtype=descriptors.dtype, device=descriptors.device
        )
    elif mode == "per_frame":
        tokens = pooled.permute(0, 1, 3, 2).reshape(b, t * grid * grid, d)
        frame_tau = frame_positions(t, descriptors.dtype, descriptors.device)
        tau = frame_tau.repeat_interleave(grid * grid)
    else:
        raise ValueError(f"unknown inducing mode {mode!r}")
    return tokens, tau


def frame_positions(t: int, dtype, device) -> torch.Tensor:
    """Normalized temporal positions in [0, 1]; a lone frame sits at 0.5."""
    if t == 1:
        return torch.full((1,), 0.5, dtype=dtype, device=device)
    return torch.arange(t, dtype=dtype, device=device) / (t - 1)


class DescriptorBuilder(nn.Module):
    """Per-location descriptor: projected features + cues + broadcast context."""

    def __init__(self, channels: int, cue_channels: int, global_dim: int):
        super().__init__()
        self.w_d = nn.Conv3d(channels, channels, kernel_size=1)
        self.w_c = nn.Conv3d(cue_channels, channels, kernel_size=1)
        self.w_g = nn.Linear(global_dim, channels)

    def forward(
        self, feats: torch.Tensor, cue: torch.Tensor, context: torch.Tensor
    ) -> torch.Tensor:
        if cue.shape[-2:] != feats.shape[-2:] or cue.shape[2] != feats.shape[2]:
            raise ValueError(
                f"cue volume {tuple(cue.shape)} does not match stage {tuple(feats.shape)}"
            )
        g = self.w_g(context).view(context.shape[0], -1, 1, 1, 1)
        return self.w_d(feats) + self.w_c(cue) + g


class FusionGate(nn.Module):
    """Two-layer gate on the 2-d uncertainty descriptor, sigmoid output."""

    def __init__(self, hidden: int = GATE_HIDDEN):
        super().__init__()
        self.w1 = nn.Linear(2, hidden)
        self.w2 = nn.Linear(hidden, 1)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.w2(smooth_act(self.w1(u)))).squeeze(-1)


class _DepthwisePointwise(nn.Module):
    """Depthwise conv over one axis pair followed by a pointwise projection."""

    def __init__(self, channels: int, kernel: tuple[int, int, int], pre_act: bool = False):
        super().__init__()
        self.kernel = kernel
        self.depthwise = nn.Conv3d(channels, channels, kernel, groups=channels)
        self.pointwise = nn.Conv3d(channels, channels, kernel_size=1)
        self.pre_act = pre_act

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        kt, kh, kw = self.kernel
        x = pad_replicate_3d(x, kt // 2, kh // 2, kw // 2)
        x = self.depthwise(x)
        if self.pre_act:
            x = smooth_act(x)
        return self.pointwise(x)


def temporal_branch(channels: int) -> _DepthwisePointwise:
    """Temporal aggregation: depthwise 3x1x1 then pointwise."""
    return _DepthwisePointwise(channels, (3, 1, 1))


def detail_branch(channels: int) -> _DepthwisePointwise:
    """Detail-preserving spatial bypass: depthwise 1x3x3 then pointwise."""
    return _DepthwisePointwise(channels, (1, 3, 3))


def highfreq_branch(channels: int) -> _DepthwisePointwise:
    """High-frequency correction: depthwise 1x3x3, nonlinearity, pointwise."""
    return _DepthwisePointwise(channels, (1, 3, 3), pre_act=True)


def resize_cue(cue: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Bilinear spatial resize of a (B, C, T, H, W) cue volume per frame."""
    b, c, t, h, w = cue.shape
    if (h, w) == (height, width):
        return cue
    frames = cue.permute(0, 2, 1, 3, 4).reshape(b * t, c, h, w)
    resized = F.interpolate(
        frames, size=(height, width), mode="bilinear", align_corners=False
    )
    return resized.reshape(b, t, c, height, width).permute(0, 2, 1, 3, 4)


class GPFusionBlock(nn.Module):
    """Uncertainty-conditioned temporal-detail fusion at one encoder stage.

    ``mode`` selects the assignment machinery: the factored RBF kernel
    ("gp"), dot-product attention with the variance head retained
    ("attn_var"), the parameter-matched attention control ("attn_var_p"),
    or a deterministic cue-driven gate with no posterior at all
    ("det_gate").
    """

    def __init__(
        self,
        channels: int,
        cue_channels: int,
        global_dim: int,
        mode: str = "gp",
        grid: int = INDUCING_GRID,
        inducing_mode: str = "average",
        beta_init: float = 0.1,
    ):
        super().__init__()
        if mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
        self.mode = mode
        self.grid = grid
        self.inducing_mode = inducing_mode
        self.descriptor = DescriptorBuilder(channels, cue_channels, global_dim)
        if mode != "det_gate":
            self.w_q = nn.Linear(channels, channels)
            self.stats = InducingStatsHead(channels)
        if mode == "gp":
            self.kernel_params = KernelParams()
        elif mode == "attn_var_p":
            self.attn_temperature = nn.Parameter(torch.ones(()))
            self.attn_scale = nn.Parameter(torch.ones(()))
            self.attn_temporal = nn.Parameter(torch.zeros(()))
        self.gate = FusionGate()
        self.temporal = temporal_branch(channels)
        self.detail = detail_branch(channels)
        self.highfreq = highfreq_branch(channels)
        self.w_o = nn.Conv3d(2 * channels, channels, kernel_size=1)
        self.beta = nn.Parameter(torch.tensor(float(beta_init)))
        # Residual identity at init: the fusion output projection starts at 0.
        nn.init.zeros_(self.w_o.weight)
        nn.init.zeros_(self.w_o.bias)

    def _assignment(
        self, queries: torch.Tensor, tokens: torch.Tensor, tau_q, tau_m
    ) -> torch.Tensor:
        d = queries.shape[-1]
        if self.mode == "gp":
            k = kernel_matrix(
                queries,
                tokens,
                tau_q,
                tau_m,
                self.kernel_params.alpha,
                self.kernel_params.ell,
                self.kernel_params.gamma,
            )
            return assignment_weights(k)
        scores = queries @ tokens.transpose(-1, -2) / d**0.5
        if self.mode == "attn_var_p":
            tau_diff = tau_q.unsqueeze(-1) - tau_m.unsqueeze(-2)
            scores = self.attn_scale * scores / self.attn_temperature
            scores = scores - self.attn_temporal * tau_diff**2
        return torch.softmax(scores, dim=-1)

    def forward(
        self, feats: torch.Tensor, cue: torch.Tensor, context: torch.Tensor
    ) -> tuple[torch.Tensor, dict]:
        b, c, t, h, w = feats.shape
        cue_s = resize_cue(cue, h, w)
        desc = self.descriptor(feats, cue_s, context)

        diagnostics: dict = {}
        if self.mode == "det_gate":
            # Cue-only gate input: channel mean and log channel power.
            cue_mean = cue_s.mean(dim=1)
            cue_power = cue_s.pow(2).mean(dim=1)
            u = torch.stack([cue_mean, torch.log(cue_power + LOG_EPS)], dim=-1)
            u = u.reshape(b, t * h * w, 2)
        else:
            tokens_dense = desc.permute(0, 2, 3, 4, 1).reshape(b, t * h * w, c)
            tau_q = frame_positions(t, feats.dtype, feats.device).repeat_interleave(h * w)
            queries = self.w_q(tokens_dense)
            inducing, tau_m = pool_inducing_tokens(desc, self.grid, self.inducing_mode)
            mu_m, var_m = self.stats(inducing)
            a = self._assignment(queries, inducing, tau_q, tau_m)
            mean, var = posterior_moments(a, mu_m, var_m)
            u = uncertainty_descriptor(mean, var)
            diagnostics["posterior_mean"] = mean.reshape(b, 1, t, h, w)
            diagnostics["posterior_var"] = var.reshape(b, 1, t, h, w)

        gate = self.gate(u).reshape(b, 1, t, h, w)
        diagnostics["gate"] = gate

        fused = torch.cat(
            [gate * self.temporal(feats), (1.0 - gate) * self.detail(feats)], dim=1
        )
        out = feats + self.w_o(fused) + self.beta * self.highfreq(feats)
        return out, diagnostics

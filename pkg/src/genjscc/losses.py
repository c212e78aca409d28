"""Training objectives for the rate-distortion(-perception) trade-off, the
pluggable perceptual metric, and the stochastic schedules that sample realism
maps and instance masks during training.

All composite losses share one rate-distortion base term (MSE plus weighted
rate), so zeroing the perception weights reproduces the plain RD objective to
machine precision. Realism maps and instance masks enter the losses as data:
they are detached and never receive gradients.
"""

from __future__ import annotations

import logging

import numpy as np
import torch
from torch import nn

from .config import LossWeights, TrainingSchedule
from .srem import RealismMap

logger = logging.getLogger(__name__)


def _as_data(value, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(value, dtype=like.dtype, device=like.device)
    return t.detach()


def _clamped_log(scores: torch.Tensor, eps: float) -> torch.Tensor:
    with torch.no_grad():
        clipped = bool(scores.min() < eps) or bool(scores.max() > 1.0 - eps)
    if clipped:
        logger.warning("discriminator scores touched {0, 1}; clamping with eps=%g", eps)
    return torch.log(scores.clamp(eps, 1.0 - eps))


def mse(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return torch.mean((x - x_hat) ** 2)


def _base_rd(x: torch.Tensor, x_hat: torch.Tensor, nll_rate: torch.Tensor, lmbda: float) -> torch.Tensor:
    return mse(x, x_hat) + lmbda * nll_rate


def loss_rd(x: torch.Tensor, x_hat: torch.Tensor, nll_rate, lmbda: float) -> torch.Tensor:
    """Rate-distortion objective: MSE + lambda * (-eta log p(y))."""
    nll_rate = torch.as_tensor(nll_rate, dtype=x.dtype, device=x.device)
    return _base_rd(x, x_hat, nll_rate, lmbda)


def loss_rdp(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    nll_rate,
    d_out: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Triple objective with a scalar perception weight: RD base plus
    beta * mean(-log D(x_hat))."""
    nll_rate = torch.as_tensor(nll_rate, dtype=x.dtype, device=x.device)
    base = _base_rd(x, x_hat, nll_rate, weights.lmbda)
    perception = -_clamped_log(d_out, weights.score_eps).mean()
    return base + weights.beta_scalar * perception


def loss_discriminator(d_fake: torch.Tensor, d_real: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Non-saturating discriminator objective:
    mean(-log(1 - D(fake))) + mean(-log D(real))."""
    fake_term = -torch.log((1.0 - d_fake).clamp(eps, 1.0)).mean()
    real_term = -_clamped_log(d_real, eps).mean()
    return fake_term + real_term


def loss_dpct(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    nll_rate,
    d_out: torch.Tensor,
    lp_map: torch.Tensor,
    beta_map,
    weights: LossWeights,
) -> torch.Tensor:
    """Spatially weighted perception objective:
    RD base + meanpool(beta (.) (-log D + C_P * perceptual map)).

    beta_map is control data on the latent grid; it is detached so no
    gradient ever reaches it.
    """
    nll_rate = torch.as_tensor(nll_rate, dtype=x.dtype, device=x.device)
    beta = _as_data(beta_map, x)
    if beta.dim() == 2:
        beta = beta.unsqueeze(0)
    if d_out.shape != lp_map.shape:
        raise ValueError(f"score map {tuple(d_out.shape)} vs perceptual map {tuple(lp_map.shape)}")
    if beta.shape[-2:] != d_out.shape[-2:]:
        raise ValueError(
            f"realism map {tuple(beta.shape[-2:])} does not match score grid {tuple(d_out.shape[-2:])}"
        )
    base = _base_rd(x, x_hat, nll_rate, weights.lmbda)
    perception = beta * (-_clamped_log(d_out, weights.score_eps) + weights.c_p * lp_map)
    return base + perception.mean()


def loss_cct(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    nll_rate,
    d_out: torch.Tensor,
    lp_scalar,
    heatmap,
    weights: LossWeights,
) -> torch.Tensor:
    """Masked-distortion objective: the squared error is averaged only after
    multiplying with the transmit heatmap, so generated regions pay no
    distortion penalty; perception terms are plain scalars."""
    nll_rate = torch.as_tensor(nll_rate, dtype=x.dtype, device=x.device)
    m = _as_data(heatmap, x)
    if m.dim() == 2:
        m = m.unsqueeze(0)
    if m.dim() == 3:
        m = m.unsqueeze(1)  # (B, 1, H, W) broadcasting over color channels
    if m.shape[-2:] != x.shape[-2:]:
        raise ValueError(
            f"heatmap {tuple(m.shape[-2:])} is not pixel-aligned with images {tuple(x.shape[-2:])}"
        )
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    masked_distortion = torch.mean(m * (x - x_hat) ** 2)
    lp_scalar = torch.as_tensor(lp_scalar, dtype=x.dtype, device=x.device)
    perception = -_clamped_log(d_out, weights.score_eps).mean() + weights.c_p * lp_scalar
    return masked_distortion + weights.lmbda * nll_rate + weights.beta_scalar * perception


class FixedFeatureDistance(nn.Module):
    """Texture-statistics distance in a fixed random-feature space.

    Images pass through a small frozen convolutional pyramid (weights drawn
    once from a seeded generator, so the metric is deterministic and
    dependency-free). Within the window of each latent-grid cell the metric
    compares the local mean and spread of every feature channel, so it is
    zero exactly when local texture statistics agree and it penalizes the
    energy loss of over-smoothed reconstructions even when their pixel error
    is minimal. Absolute values are not comparable with other backends; only
    orderings are meaningful.
    """

    def __init__(self, seed: int = 0, widths: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        in_ch = 3
        for width in widths:
            conv = nn.Conv2d(in_ch, width, 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (in_ch * 9) ** -0.5)
                conv.bias.zero_()
            layers.append(conv)
            in_ch = width
        self.convs = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def _stage_features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x
        for conv in self.convs:
            h = torch.relu(conv(h))
            feats.append(h)
            h = nn.functional.avg_pool2d(h, 2)
        return feats

    @staticmethod
    def _local_moments(feats: torch.Tensor, grid_hw: tuple[int, int]):
        mean = nn.functional.adaptive_avg_pool2d(feats, grid_hw)
        second = nn.functional.adaptive_avg_pool2d(feats**2, grid_hw)
        spread = torch.sqrt(torch.clamp(second - mean**2, min=0.0) + 1e-8)
        return mean, spread

    def spatial(self, x: torch.Tensor, x_hat: torch.Tensor, grid_hw: tuple[int, int]) -> torch.Tensor:
        """Distance map on the latent grid, shape (B, h, w)."""
        if x.shape != x_hat.shape:
            raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
        total = None
        for fa, fb in zip(self._stage_features(x), self._stage_features(x_hat)):
            mean_a, spread_a = self._local_moments(fa, grid_hw)
            mean_b, spread_b = self._local_moments(fb, grid_hw)
            stage = ((mean_a - mean_b) ** 2 + (spread_a - spread_b) ** 2).mean(dim=1)
            total = stage if total is None else total + stage
        return total

    def forward(self, x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
        """Scalar distance per batch, averaged over the latent-sized grid."""
        grid = (max(1, x.shape[-2] // 8), max(1, x.shape[-1] // 8))
        return self.spatial(x, x_hat, grid).mean(dim=(1, 2))


def sample_realism_map(
    step: int,
    schedule: TrainingSchedule,
    beta_max: float,
    rng: np.random.Generator,
    grid_hw: tuple[int, int],
) -> RealismMap:
    """Training-time realism maps: spatially constant with a uniformly drawn
    level for the leading fraction of steps, then fully independent cells."""
    if step >= schedule.total_steps:
        raise ValueError(f"step {step} outside schedule of {schedule.total_steps} steps")
    h, w = grid_hw
    if step < schedule.constant_map_fraction * schedule.total_steps:
        level = rng.uniform(0.0, beta_max)
        values = np.full((h, w), level)
    else:
        values = rng.uniform(0.0, beta_max, size=(h, w))
    return RealismMap(values=values, beta_max=beta_max)


def sample_instance_mask(w_map, fraction: float, rng: np.random.Generator):
    """Uniformly pick round(fraction * n) distinct instances (at least one)
    and return the binary heatmap covering exactly their pixels."""
    from .content import heatmap_from_prompts

    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    labels = w_map.labels()
    if not labels:
        raise ValueError("label map has no registered instances")
    count = max(1, int(round(fraction * len(labels))))
    chosen = rng.choice(len(labels), size=count, replace=False)
    return heatmap_from_prompts(w_map, {labels[i] for i in chosen})

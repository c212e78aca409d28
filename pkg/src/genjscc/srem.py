"""Spatial realism embedding: sinusoidal encoding of the per-region realism
map and its projection into the generator's multi-scale feature spaces.

The realism map lives on the latent grid (one value per embedding position)
and only ever touches the receiver-side generator; nothing upstream of the
channel reads it. Encoding is pointwise: each cell is mapped through fixed
sinusoids at geometrically spaced frequencies, mixed by a two-layer MLP, and
the resulting global features are nearest-neighbor upsampled to the
generator's stage resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import SremConfig


@dataclass
class RealismMap:
    """Per-region realism control on the latent grid, entries in [0, beta_max]."""

    values: np.ndarray          # (h, w)
    beta_max: float = 8.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"realism map must be 2-D, got shape {self.values.shape}")
        if self.beta_max <= 0:
            raise ValueError("beta_max must be positive")
        if np.any(self.values < 0) or np.any(self.values > self.beta_max):
            raise ValueError(f"realism values must lie in [0, {self.beta_max}]")

    @classmethod
    def constant(cls, b: float, h: int, w: int, beta_max: float = 8.0) -> "RealismMap":
        return cls(values=np.full((h, w), float(b)), beta_max=beta_max)

    @classmethod
    def zeros(cls, h: int, w: int, beta_max: float = 8.0) -> "RealismMap":
        return cls.constant(0.0, h, w, beta_max)


@dataclass
class GlobalFeatureSet:
    """Realism features at the latent grid plus x2/x4/x8 upsamplings."""

    base: torch.Tensor           # (B, c, h, w)
    scales: dict[int, torch.Tensor]  # factor -> (B, c, factor*h, factor*w)

    def at_factor(self, factor: int) -> torch.Tensor:
        if factor == 1:
            return self.base
        try:
            return self.scales[factor]
        except KeyError:
            raise KeyError(f"no global features at upsampling factor {factor}") from None

    def for_spatial(self, hw: tuple[int, int]) -> torch.Tensor:
        """Features whose spatial size matches `hw`; scale mismatch is an error."""
        for t in [self.base, *self.scales.values()]:
            if tuple(t.shape[-2:]) == tuple(hw):
                return t
        raise ValueError(f"no global features at spatial size {hw}")


def frequency_vector(cfg: SremConfig) -> np.ndarray:
    """Geometric frequency ladder nu_i = p_max^(-2i/c), i in [0, c/2)."""
    c = cfg.channel_dim
    i = np.arange(c // 2, dtype=np.float64)
    return cfg.p_max ** (-2.0 * i / c)


def sinusoidal_components(
    beta: torch.Tensor, cfg: SremConfig
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pre-MLP sine/cosine components, each (B, c/2, h, w).

    beta is normalized to [0, p_max] before multiplying the frequency ladder,
    so a zero map yields sin == 0 and cos == 1 exactly.
    """
    if beta.dim() == 2:
        beta = beta.unsqueeze(0)
    if beta.dim() != 3:
        raise ValueError(f"realism map tensor must be (B, h, w), got {tuple(beta.shape)}")
    if torch.any(beta < 0) or torch.any(beta > cfg.beta_max):
        raise ValueError(f"realism values must lie in [0, {cfg.beta_max}]")
    freq = torch.as_tensor(frequency_vector(cfg), dtype=beta.dtype, device=beta.device)
    beta_norm = beta / cfg.beta_max * cfg.p_max
    phases = beta_norm.unsqueeze(1) * freq.view(1, -1, 1, 1)
    return torch.sin(phases), torch.cos(phases)


class SpatialRealismEmbedding(nn.Module):
    """Pointwise map from a realism map to multi-scale global features."""

    def __init__(self, cfg: SremConfig, up_factors: tuple[int, ...] = (2, 4, 8)):
        super().__init__()
        self.cfg = cfg
        self.up_factors = tuple(up_factors)
        c = cfg.channel_dim
        # two linear layers of width c with a ReLU between, applied per position
        self.mlp = nn.Sequential(
            nn.Conv2d(c, c, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 1),
        )

    def forward(self, beta: torch.Tensor) -> GlobalFeatureSet:
        g_sin, g_cos = sinusoidal_components(beta, self.cfg)
        g = self.mlp(torch.cat([g_sin, g_cos], dim=1))
        scales = {
            f: nn.functional.interpolate(g, scale_factor=f, mode="nearest")
            for f in self.up_factors
        }
        return GlobalFeatureSet(base=g, scales=scales)

    def embed_map(self, rmap: RealismMap, device=None, dtype=torch.float32) -> GlobalFeatureSet:
        if abs(rmap.beta_max - self.cfg.beta_max) > 1e-9:
            raise ValueError("realism map beta_max does not match SREM configuration")
        beta = torch.as_tensor(rmap.values, dtype=dtype, device=device).unsqueeze(0)
        return self.forward(beta)


class CondResidualBottleneck(nn.Module):
    """Residual bottleneck whose convolutions each receive an additive,
    linearly projected copy of the global realism features.

    With all projection weights at zero (or `cond=None`) this reduces to a
    plain residual bottleneck.
    """

    def __init__(self, channels: int, bottleneck: int, cond_dim: int | None):
        super().__init__()
        self.reduce = nn.Conv2d(channels, bottleneck, 1)
        self.conv = nn.Conv2d(bottleneck, bottleneck, 3, padding=1)
        self.expand = nn.Conv2d(bottleneck, channels, 1)
        self.act = nn.ReLU(inplace=False)
        if cond_dim is not None:
            self.proj_reduce = nn.Conv2d(cond_dim, bottleneck, 1, bias=False)
            self.proj_conv = nn.Conv2d(cond_dim, bottleneck, 1, bias=False)
            self.proj_expand = nn.Conv2d(cond_dim, channels, 1, bias=False)
            # start inert: the conditioning pathway grows from the objective
            # instead of perturbing a pre-trained trunk with random noise
            for proj in (self.proj_reduce, self.proj_conv, self.proj_expand):
                nn.init.zeros_(proj.weight)
        else:
            self.proj_reduce = self.proj_conv = self.proj_expand = None

    def forward(self, x: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        if cond is not None:
            if self.proj_reduce is None:
                raise ValueError("block was built without a conditioning path")
            if cond.shape[-2:] != x.shape[-2:]:
                raise ValueError(
                    f"conditioning spatial size {tuple(cond.shape[-2:])} "
                    f"does not match features {tuple(x.shape[-2:])}"
                )
        h = self.reduce(x)
        if cond is not None:
            h = h + self.proj_reduce(cond)
        h = self.act(h)
        h = self.conv(h)
        if cond is not None:
            h = h + self.proj_conv(cond)
        h = self.act(h)
        h = self.expand(h)
        if cond is not None:
            h = h + self.proj_expand(cond)
        return x + h


# --- realism map files --------------------------------------------------------
#
# Text format: one header line "w h beta_max", then h rows of w decimal
# values. 8-bit grayscale rasters are also accepted and scaled to
# [0, beta_max].


def save_realism_map(path: str | Path, rmap: RealismMap) -> None:
    h, w = rmap.values.shape
    lines = [f"{w} {h} {rmap.beta_max!r}"]
    for row in rmap.values:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_realism_map(path: str | Path, beta_max: float | None = None) -> RealismMap:
    path = Path(path)
    try:
        text = path.read_text()
        header, *rows = [ln for ln in text.splitlines() if ln.strip()]
        w, h, file_beta_max = header.split()
        w, h = int(w), int(h)
        values = np.array([[float(v) for v in row.split()] for row in rows[:h]])
        if values.shape != (h, w):
            raise ValueError(f"expected {h}x{w} values, got {values.shape}")
        return RealismMap(values=values, beta_max=float(file_beta_max))
    except (UnicodeDecodeError, ValueError):
        pass
    from PIL import Image

    if beta_max is None:
        raise ValueError("beta_max is required when loading a raster realism map")
    img = Image.open(path).convert("L")
    values = np.asarray(img, dtype=np.float64) / 255.0 * beta_max
    return RealismMap(values=values, beta_max=beta_max)

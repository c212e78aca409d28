"""Learned entropy models over latents, per-embedding rate allocation, and
channel-bandwidth accounting.

The entropy model estimates per-element likelihoods of the latent under a
mean-scale Gaussian measured on unit bins. Each embedding (one spatial latent
position, a c-dimensional vector) factorizes over channels, so its negative
log-likelihood is the channel-wise sum. The transmission cost of embedding i
is quantized onto a small integer grid V: k_i = nearest(V, -eta * log p(y_i)),
and the chosen grid indices travel as side information in a bit-exact packed
format defined here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, RateConfig

LIKELIHOOD_FLOOR = 1e-12


@dataclass
class EntropyParameters:
    """Distribution parameters and likelihoods for one latent batch."""

    loc: torch.Tensor            # (B, c, h, w)
    scale: torch.Tensor          # (B, c, h, w), strictly positive
    likelihoods: torch.Tensor    # (B, c, h, w), values in (0, 1]

    def __post_init__(self):
        if torch.any(self.scale <= 0):
            raise ValueError("scales must be strictly positive")

    @property
    def embedding_nll(self) -> torch.Tensor:
        """Per-embedding -log p(y_i) in nats, shape (B, h, w)."""
        return -torch.log(self.likelihoods).sum(dim=1)

    @property
    def embedding_likelihood(self) -> torch.Tensor:
        """Per-embedding likelihood, shape (B, h, w); may underflow for wide
        latents, prefer `embedding_nll` for rate computations."""
        return torch.exp(-self.embedding_nll)

    def total_nll(self) -> torch.Tensor:
        """Factorized -log p(y) per batch element, shape (B,)."""
        return self.embedding_nll.sum(dim=(1, 2))


@dataclass
class RateAllocation:
    """Per-embedding channel-symbol counts, raster order over the latent grid.

    Entries are members of the quantization grid, or 0 for masked embeddings.
    """

    k: np.ndarray
    grid: list[int]

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.int64).reshape(-1)
        members = set(self.grid)
        bad = [int(v) for v in np.unique(self.k) if v != 0 and int(v) not in members]
        if bad:
            raise ValueError(f"allocation contains off-grid values {bad}")

    def __len__(self) -> int:
        return int(self.k.size)

    @property
    def mask(self) -> np.ndarray:
        """Implied binary mask: 1 where the embedding is transmitted."""
        return (self.k > 0).astype(np.uint8)

    def symbol_count(self) -> int:
        return int(self.k.sum())


@dataclass
class BandwidthReport:
    """Symbol accounting of one transmission; cbr = symbols / source dimension."""

    symbol_count: int
    side_info_symbols: float
    cbr: float
    breakdown: dict[str, int] = field(default_factory=dict)
    image_width: int = 0
    image_height: int = 0

    def to_dict(self) -> dict:
        return {
            "symbol_count": int(self.symbol_count),
            "side_info_symbols": float(self.side_info_symbols),
            "cbr": float(self.cbr),
            "breakdown": {k: int(v) for k, v in self.breakdown.items()},
            "image_width": int(self.image_width),
            "image_height": int(self.image_height),
        }


def quantize_to_grid(values: np.ndarray, grid: list[int]) -> np.ndarray:
    """Nearest grid member with clamping at both ends; ties round upward."""
    grid_arr = np.asarray(grid, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    idx = np.searchsorted(grid_arr, v)
    idx = np.clip(idx, 0, len(grid) - 1)
    lower = np.clip(idx - 1, 0, len(grid) - 1)
    dist_up = grid_arr[idx] - v
    dist_down = v - grid_arr[lower]
    # idx == 0 means v <= grid[0]: keep the upper (= lower bound) member
    choose_lower = (dist_down < dist_up) & (idx > 0)
    out = np.where(choose_lower, grid_arr[lower], grid_arr[idx])
    return out.astype(np.int64)


def allocate_rates_from_cost(
    cost: np.ndarray,
    cfg: RateConfig,
    mask: np.ndarray | None = None,
) -> RateAllocation:
    """Quantize per-embedding rate costs (already -eta*log p, in symbols) onto
    the grid; masked embeddings get 0."""
    cost = np.asarray(cost, dtype=np.float64).reshape(-1)
    k = quantize_to_grid(cost, cfg.grid)
    if mask is not None:
        mask = np.asarray(mask).reshape(-1)
        if mask.size != cost.size:
            raise ValueError("mask length does not match embedding count")
        k = np.where(mask > 0, k, 0)
    return RateAllocation(k=k, grid=cfg.grid)


def allocate_rates(
    likelihoods: np.ndarray,
    cfg: RateConfig,
    mask: np.ndarray | None = None,
) -> RateAllocation:
    """Per-embedding symbol counts from a likelihood map in (0, 1]."""
    p = np.asarray(likelihoods, dtype=np.float64).reshape(-1)
    if np.any(p <= 0):
        raise ValueError("likelihoods must be strictly positive")
    if np.any(p > 1):
        raise ValueError("likelihoods must not exceed 1")
    return allocate_rates_from_cost(-cfg.eta * np.log(p), cfg, mask=mask)


def compute_cbr(
    alloc: RateAllocation,
    width: int,
    height: int,
    cfg: RateConfig,
    regions: dict[str, np.ndarray] | None = None,
    extra_side_symbols: float = 0.0,
) -> BandwidthReport:
    """Bandwidth report for one image transmission.

    `regions` optionally maps a region name to the embedding indices it owns;
    the per-region breakdown then carries exact symbol counts. Side
    information covers one rate index per embedding regardless of masking,
    plus any extra symbols (e.g. an encoded label map).
    """
    l = len(alloc)
    symbol_count = alloc.symbol_count()
    side = l * cfg.side_info_bits_per_embedding / cfg.bits_per_channel_symbol + extra_side_symbols
    source_dim = 3 * width * height
    breakdown: dict[str, int] = {}
    if regions is not None:
        for name, idx in regions.items():
            idx = np.asarray(idx, dtype=np.int64)
            breakdown[name] = int(alloc.k[idx].sum())
    return BandwidthReport(
        symbol_count=symbol_count,
        side_info_symbols=side,
        cbr=(symbol_count + side) / source_dim,
        breakdown=breakdown,
        image_width=width,
        image_height=height,
    )


# --- side-information wire format ------------------------------------------
#
# Rate allocations are serialized as a length-prefixed sequence of grid
# indices: u32 little-endian embedding count, then ceil(l * width / 8) bytes
# of little-endian bit packing (the first index occupies the low bits of the
# first byte). Masked embeddings use the sentinel index |V|, which the index
# width must accommodate only when a mask is present.


def pack_bits_le(values: list[int] | np.ndarray, width: int) -> bytes:
    acc = 0
    for i, v in enumerate(values):
        v = int(v)
        if v < 0 or v >= (1 << width):
            raise ValueError(f"value {v} does not fit in {width} bits")
        acc |= v << (i * width)
    nbytes = (len(values) * width + 7) // 8
    return acc.to_bytes(nbytes, "little")


def unpack_bits_le(data: bytes, count: int, width: int) -> list[int]:
    acc = int.from_bytes(data, "little")
    mask = (1 << width) - 1
    return [(acc >> (i * width)) & mask for i in range(count)]


def pack_rate_indices(alloc: RateAllocation, cfg: RateConfig) -> bytes:
    width = cfg.index_width
    lookup = {v: i for i, v in enumerate(cfg.grid)}
    sentinel = len(cfg.grid)
    if np.any(alloc.k == 0) and sentinel >= (1 << width):
        raise ValueError("index width cannot represent the masked sentinel")
    indices = [lookup[int(v)] if v != 0 else sentinel for v in alloc.k]
    header = int(len(alloc)).to_bytes(4, "little")
    return header + pack_bits_le(indices, width)


def unpack_rate_indices(data: bytes, cfg: RateConfig) -> RateAllocation:
    if len(data) < 4:
        raise ValueError("truncated rate-index payload")
    l = int.from_bytes(data[:4], "little")
    width = cfg.index_width
    expected = 4 + (l * width + 7) // 8
    if len(data) < expected:
        raise ValueError(f"rate-index payload needs {expected} bytes, got {len(data)}")
    indices = unpack_bits_le(data[4:expected], l, width)
    sentinel = len(cfg.grid)
    k = np.zeros(l, dtype=np.int64)
    for i, idx in enumerate(indices):
        if idx == sentinel:
            continue
        if idx > sentinel:
            raise ValueError(f"index {idx} at position {i} outside grid")
        k[i] = cfg.grid[idx]
    return RateAllocation(k=k, grid=cfg.grid)


# --- learned entropy models --------------------------------------------------


def _gaussian_bin_likelihood(y: torch.Tensor, loc: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """Probability mass of the unit bin centered at y under N(loc, scale^2)."""
    inv = 1.0 / (scale * math.sqrt(2.0))
    upper = torch.erf((y - loc + 0.5) * inv)
    lower = torch.erf((y - loc - 0.5) * inv)
    return torch.clamp(0.5 * (upper - lower), min=LIKELIHOOD_FLOOR, max=1.0)


class EntropyModel(nn.Module):
    """Interface: estimate per-element likelihoods of a latent.

    Backends must return `EntropyParameters`; `training` controls the usual
    additive-uniform-noise relaxation of the bin integral. A spatial context
    backend (e.g. checkerboard) can be slotted in behind the same signature.
    """

    def estimate(self, y: torch.Tensor, training: bool | None = None) -> EntropyParameters:
        raise NotImplementedError

    def forward(self, y: torch.Tensor) -> EntropyParameters:
        return self.estimate(y)


class FactorizedEntropyModel(EntropyModel):
    """Per-channel mean-scale Gaussian, no spatial conditioning."""

    def __init__(self, channels: int):
        super().__init__()
        self.loc = nn.Parameter(torch.zeros(1, channels, 1, 1))
        self.log_scale = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def estimate(self, y: torch.Tensor, training: bool | None = None) -> EntropyParameters:
        training = self.training if training is None else training
        scale = torch.exp(self.log_scale).clamp(min=1e-3).expand_as(y)
        loc = self.loc.expand_as(y)
        target = y + torch.empty_like(y).uniform_(-0.5, 0.5) if training else y
        return EntropyParameters(loc=loc, scale=scale, likelihoods=_gaussian_bin_likelihood(target, loc, scale))


class HyperpriorEntropyModel(EntropyModel):
    """Mean-scale Gaussian conditioned on a jointly learned hyper-latent.

    The hyper-latent stays at the transmitter (rate allocation is resolved
    there and shipped as packed side information), so no prior over it is
    modeled here.
    """

    def __init__(self, channels: int, hyper_dim: int):
        super().__init__()
        h = hyper_dim
        self.h_a = nn.Sequential(
            nn.Conv2d(channels, h, 3, stride=1, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(h, h, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(h, h, 3, stride=2, padding=1),
        )
        self.h_s = nn.Sequential(
            nn.ConvTranspose2d(h, h, 4, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(h, h * 2, 4, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(h * 2, channels * 2, 3, stride=1, padding=1),
        )

    def estimate(self, y: torch.Tensor, training: bool | None = None) -> EntropyParameters:
        training = self.training if training is None else training
        z = self.h_a(y)
        params = self.h_s(z)
        loc, raw_scale = params.chunk(2, dim=1)
        scale = nn.functional.softplus(raw_scale) + 1e-3
        target = y + torch.empty_like(y).uniform_(-0.5, 0.5) if training else y
        return EntropyParameters(loc=loc, scale=scale, likelihoods=_gaussian_bin_likelihood(target, loc, scale))


def make_entropy_model(cfg: ModelConfig) -> EntropyModel:
    if cfg.entropy_backend == "hyperprior":
        return HyperpriorEntropyModel(cfg.channel_dim, cfg.hyper_dim)
    if cfg.entropy_backend == "factorized":
        return FactorizedEntropyModel(cfg.channel_dim)
    raise ValueError(f"unknown entropy backend {cfg.entropy_backend!r}")

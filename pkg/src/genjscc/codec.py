"""Nonlinear transform networks: analysis encoder, conditional generator,
label-map encoder, and the spatially aligned discriminator.

The generator doubles as the synthesis transform: it decodes latents into
images and can be conditioned either additively on realism features (through
conditioning residual bottlenecks) or by concatenating label-map features at
each scale. The discriminator scores realism per latent-grid cell; its
receptive fields tile the image exactly (kernel-2/stride-2 chain, no
cross-position normalization), so cell (i, j) depends only on the
downsample_factor-sized image block it covers.
"""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn.utils import spectral_norm

from .config import ModelConfig
from .srem import CondResidualBottleneck, GlobalFeatureSet


class ChannelNorm(nn.Module):
    """Normalize across channels independently at every spatial position."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return (x - mu) / torch.sqrt(var + self.eps) * self.gamma + self.beta


class SpatialAttention(nn.Module):
    """Plain multi-head self-attention over spatial positions with residual."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.norm = nn.LayerNorm(channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        seq = x.flatten(2).transpose(1, 2)
        normed = self.norm(seq)
        out, _ = self.attn(normed, normed, normed, need_weights=False)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


def _check_image(x: torch.Tensor, df: int) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected image tensor (B, 3, H, W), got {tuple(x.shape)}")
    if x.shape[-2] % df or x.shape[-1] % df:
        raise ValueError(
            f"image size {tuple(x.shape[-2:])} not divisible by downsample factor {df}"
        )


class AnalysisTransform(nn.Module):
    """Image -> latent, downsampling by cfg.downsample_factor."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        n = cfg.bottleneck_dim
        steps = int(math.log2(cfg.downsample_factor))
        layers: list[nn.Module] = []
        in_ch = 3
        for i in range(steps):
            out_ch = cfg.channel_dim if i == steps - 1 else n
            layers.append(nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1))
            if i < steps - 1:
                layers.append(ChannelNorm(out_ch))
                layers.append(nn.ReLU(inplace=True))
                for _ in range(cfg.cond_rb_count):
                    layers.append(CondResidualBottleneck(out_ch, out_ch // 2, None))
                # attention at the two lowest encoder resolutions
                if i >= steps - 3:
                    layers.append(SpatialAttention(out_ch, cfg.jscc_heads))
            in_ch = out_ch
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_image(x, self.cfg.downsample_factor)
        return self.body(x)


class _GeneratorStage(nn.Module):
    def __init__(self, cfg: ModelConfig, factor: int, cond_mode: str | None):
        super().__init__()
        n = cfg.bottleneck_dim
        self.factor = factor
        self.cond_mode = cond_mode
        self.attn = SpatialAttention(n, cfg.jscc_heads) if factor <= 2 else None
        if cond_mode == "label":
            self.fuse = nn.Conv2d(n + cfg.label_embed_dim, n, 1)
        else:
            self.fuse = None
        cond_dim = cfg.channel_dim if cond_mode == "srem" else None
        self.blocks = nn.ModuleList(
            CondResidualBottleneck(n, n // 2, cond_dim) for _ in range(cfg.cond_rb_count)
        )

    def forward(self, x: torch.Tensor, cond: torch.Tensor | None) -> torch.Tensor:
        if self.attn is not None:
            x = self.attn(x)
        rb_cond = None
        if cond is not None:
            if cond.shape[-2:] != x.shape[-2:]:
                raise ValueError(
                    f"conditioning at {tuple(cond.shape[-2:])} does not match "
                    f"stage features {tuple(x.shape[-2:])}"
                )
            if self.cond_mode == "label":
                x = self.fuse(torch.cat([x, cond], dim=1))
            else:
                rb_cond = cond
        for block in self.blocks:
            x = block(x, rb_cond)
        return x


class Generator(nn.Module):
    """Latent -> image synthesis transform / conditional generator.

    cond_mode "srem": additive realism conditioning inside every residual
    bottleneck (global features at factors 1, 2, 4, ...).
    cond_mode "label": label features concatenated at every stage.
    With no conditioning input the network runs as a plain synthesis
    transform, which is the rate-distortion pre-training configuration.
    """

    def __init__(self, cfg: ModelConfig, cond_mode: str | None = "srem"):
        super().__init__()
        if cond_mode not in (None, "srem", "label"):
            raise ValueError(f"unknown cond_mode {cond_mode!r}")
        self.cfg = cfg
        self.cond_mode = cond_mode
        n = cfg.bottleneck_dim
        self.head = nn.Conv2d(cfg.channel_dim, n, 1)
        self.stages = nn.ModuleList()
        self.upsamplers = nn.ModuleList()
        factor = 1
        for _ in range(cfg.num_up_stages + 1):
            self.stages.append(_GeneratorStage(cfg, factor, cond_mode))
            self.upsamplers.append(nn.ConvTranspose2d(n, n, 4, stride=2, padding=1))
            factor *= 2
        self.tail = nn.Sequential(ChannelNorm(n), nn.ReLU(inplace=True), nn.Conv2d(n, 3, 3, padding=1))

    @property
    def stage_factors(self) -> list[int]:
        return [s.factor for s in self.stages]

    def forward(
        self,
        y_hat: torch.Tensor,
        cond: GlobalFeatureSet | dict[int, torch.Tensor] | None = None,
        clamp: bool | None = None,
    ) -> torch.Tensor:
        x = self.head(y_hat)
        for stage, up in zip(self.stages, self.upsamplers):
            stage_cond = None
            if cond is not None:
                if isinstance(cond, GlobalFeatureSet):
                    stage_cond = cond.at_factor(stage.factor)
                else:
                    stage_cond = cond.get(stage.factor)
                    if stage_cond is None:
                        raise ValueError(f"missing conditioning features at factor {stage.factor}")
            x = stage(x, stage_cond)
            x = up(x)
        x = self.tail(x)
        if clamp is None:
            clamp = not self.training
        return x.clamp(0.0, 1.0) if clamp else x


class LabelMapEncoder(nn.Module):
    """Downsampling pyramid over the instance label raster.

    Produces features at every generator stage resolution (factors
    df/2, df/4, ..., 1 relative to the latent grid). Each step is one
    convolutional block: convolution, channel normalization, activation.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.label_embed_dim
        steps = int(math.log2(cfg.downsample_factor))
        blocks = []
        in_ch = 3
        for _ in range(steps):
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, d, 3, stride=2, padding=1),
                    ChannelNorm(d),
                    nn.ReLU(inplace=True),
                )
            )
            in_ch = d
        self.blocks = nn.ModuleList(blocks)

    def forward(self, w_map: torch.Tensor) -> dict[int, torch.Tensor]:
        _check_image(w_map, self.cfg.downsample_factor)
        factor = self.cfg.downsample_factor
        features: dict[int, torch.Tensor] = {}
        x = w_map
        for block in self.blocks:
            x = block(x)
            factor //= 2
            features[factor] = x
        return features


class Discriminator(nn.Module):
    """Per-patch realism scores on the latent grid, conditioned on either the
    transmitted latent or the instance label map.

    The body is a kernel-2/stride-2 spectral-norm chain without feature
    normalization, so each output cell sees exactly one
    downsample_factor-sized image block and scores stay spatially aligned.
    Outputs are sigmoid probabilities clamped inside (0, 1).
    """

    def __init__(self, cfg: ModelConfig, cond_kind: str = "latent", score_eps: float = 1e-6):
        super().__init__()
        if cond_kind not in ("latent", "label"):
            raise ValueError(f"unknown cond_kind {cond_kind!r}")
        self.cfg = cfg
        self.cond_kind = cond_kind
        self.score_eps = score_eps
        d = cfg.disc_base_channels
        steps = int(math.log2(cfg.downsample_factor))
        layers: list[nn.Module] = []
        in_ch = 3
        for i in range(steps):
            out_ch = min(d * (2 ** i), 4 * d)
            layers.append(spectral_norm(nn.Conv2d(in_ch, out_ch, 2, stride=2)))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            in_ch = out_ch
        self.body = nn.Sequential(*layers)
        cond_ch = cfg.channel_dim if cond_kind == "latent" else 3
        self.cond_embed = spectral_norm(nn.Conv2d(cond_ch, d, 1))
        self.score = nn.Sequential(
            spectral_norm(nn.Conv2d(in_ch + d, in_ch, 1)),
            nn.LeakyReLU(0.2, inplace=True),
            spectral_norm(nn.Conv2d(in_ch, 1, 1)),
        )
        self._settle_spectral_norms(cond_ch)

    def _settle_spectral_norms(self, cond_ch: int) -> None:
        # power-iterate the spectral-norm estimates at construction; the raw
        # random u/v vectors underestimate sigma badly enough to saturate the
        # sigmoid on the first forward pass
        df = self.cfg.downsample_factor
        cond_hw = (2 * df, 2 * df) if self.cond_kind == "label" else (2, 2)
        dummy_x = torch.zeros(1, 3, 2 * df, 2 * df)
        dummy_cond = torch.zeros(1, cond_ch, *cond_hw)
        was_training = self.training
        self.train()
        with torch.no_grad():
            for _ in range(10):
                self.forward(dummy_x, dummy_cond)
        self.train(was_training)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        _check_image(x, self.cfg.downsample_factor)
        feats = self.body(x)
        if self.cond_kind == "label":
            if cond.shape[-2:] != x.shape[-2:]:
                raise ValueError("label map must be pixel-aligned with the image")
            cond = nn.functional.avg_pool2d(cond, self.cfg.downsample_factor)
        if cond.shape[-2:] != feats.shape[-2:]:
            raise ValueError(
                f"conditioning grid {tuple(cond.shape[-2:])} does not match "
                f"score grid {tuple(feats.shape[-2:])}"
            )
        logits = self.score(torch.cat([feats, self.cond_embed(cond)], dim=1))
        probs = torch.sigmoid(logits)
        return probs.clamp(self.score_eps, 1.0 - self.score_eps).squeeze(1)

"""End-to-end transmission: model bundle, checkpoint persistence, and the
orchestration that runs analyze -> rate allocation -> JSCC encode -> channel
-> JSCC decode -> synthesis.

Realism maps never touch the transmitter: a distortion-perception pipeline
transmits once and decodes any number of realism settings from the same
received symbols. Content pipelines split the full stream into per-instance
streams (each with its own deterministic channel seed), so any subset of
instances can be delivered and decoded progressively.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .channel import Channel, power_normalize
from .codec import AnalysisTransform, Discriminator, Generator, LabelMapEncoder
from .config import ChannelConfig, ModelConfig, RateConfig, SremConfig
from .content import (
    InstanceLabelMap,
    assemble_received,
    label_map_side_symbols,
    ownership_regions,
    split_streams,
)
from .entropy import (
    BandwidthReport,
    RateAllocation,
    allocate_rates_from_cost,
    compute_cbr,
    make_entropy_model,
)
from .jscc import ChannelSymbolStream, VariableRateJSCC, full_mask
from .srem import GlobalFeatureSet, RealismMap, SpatialRealismEmbedding


class TransmissionModel(nn.Module):
    """All learned components of one transmission mode in a single module.

    mode "dpct": realism-conditioned generator plus latent-conditioned
    discriminator. mode "cct": label-map encoder feeding generator and
    discriminator conditioning.
    """

    def __init__(
        self,
        mode: str,
        model_cfg: ModelConfig,
        rate_cfg: RateConfig,
        srem_cfg: SremConfig | None = None,
    ):
        super().__init__()
        if mode not in ("dpct", "cct"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.cfg = model_cfg
        self.rate_cfg = rate_cfg
        self.analysis = AnalysisTransform(model_cfg)
        self.entropy_model = make_entropy_model(model_cfg)
        self.vr_jscc = VariableRateJSCC(model_cfg, rate_cfg)
        if mode == "dpct":
            if srem_cfg is None:
                srem_cfg = SremConfig(channel_dim=model_cfg.channel_dim)
            if srem_cfg.channel_dim != model_cfg.channel_dim:
                raise ValueError("SREM channel_dim must match the latent channel_dim")
            self.srem_cfg = srem_cfg
            up_factors = tuple(2 ** i for i in range(1, model_cfg.num_up_stages + 1))
            self.srem = SpatialRealismEmbedding(srem_cfg, up_factors=up_factors)
            self.generator = Generator(model_cfg, cond_mode="srem")
            self.discriminator = Discriminator(model_cfg, cond_kind="latent")
            self.label_encoder = None
        else:
            self.srem_cfg = None
            self.srem = None
            self.label_encoder = LabelMapEncoder(model_cfg)
            self.generator = Generator(model_cfg, cond_mode="label")
            self.discriminator = Discriminator(model_cfg, cond_kind="label")

    # --- transmitter side -------------------------------------------------

    def analyze(self, x: torch.Tensor) -> torch.Tensor:
        return self.analysis(x)

    def rate_cost(self, y: torch.Tensor, training: bool = False) -> tuple[torch.Tensor, np.ndarray]:
        """Continuous rate term and per-embedding symbol costs.

        Returns (per-image total -log p(y) in nats as a tensor, numpy array
        (B, l) of eta * nll per embedding for grid quantization).
        """
        params = self.entropy_model.estimate(y, training=training)
        nll = params.embedding_nll
        cost = (self.rate_cfg.eta * nll).detach().cpu().numpy().reshape(y.shape[0], -1)
        return nll.sum(dim=(1, 2)), cost

    def allocate(self, y: torch.Tensor, mask: np.ndarray | None = None) -> RateAllocation:
        if y.shape[0] != 1:
            raise ValueError("allocate expects a single-image latent")
        _, cost = self.rate_cost(y, training=False)
        return allocate_rates_from_cost(cost[0], self.rate_cfg, mask=mask)

    def encode_stream(
        self, y: torch.Tensor, alloc: RateAllocation, mask: np.ndarray | None = None
    ) -> ChannelSymbolStream:
        symbols = self.vr_jscc.encode(y, alloc, mask)
        return ChannelSymbolStream(
            symbols=symbols.detach().cpu().numpy().astype(np.float32),
            alloc=alloc,
            mask=alloc.mask if mask is None else mask,
        )

    # --- receiver side ----------------------------------------------------

    def decode_stream(self, stream: ChannelSymbolStream, grid_hw: tuple[int, int]) -> torch.Tensor:
        device = next(self.parameters()).device
        symbols = torch.as_tensor(stream.symbols, dtype=torch.float32, device=device)
        return self.vr_jscc.decode(symbols, stream.alloc, stream.mask, grid_hw)

    def synthesize_realism(
        self,
        y_hat: torch.Tensor,
        rmap: RealismMap | None,
        clamp: bool | None = None,
    ) -> torch.Tensor:
        if rmap is None:
            return self.generator(y_hat, None, clamp=clamp)
        return self.generator(y_hat, self.embed_realism(rmap, batch=y_hat.shape[0]), clamp=clamp)

    def embed_realism(self, rmap: RealismMap | torch.Tensor, batch: int = 1) -> GlobalFeatureSet:
        if self.srem is None:
            raise ValueError("realism conditioning requires a dpct model")
        if isinstance(rmap, RealismMap):
            device = next(self.parameters()).device
            beta = torch.as_tensor(rmap.values, dtype=torch.float32, device=device).unsqueeze(0)
        else:
            beta = rmap if rmap.dim() == 3 else rmap.unsqueeze(0)
        if beta.shape[0] == 1 and batch > 1:
            beta = beta.expand(batch, -1, -1)
        return self.srem(beta)

    def label_features(self, w_map: InstanceLabelMap | torch.Tensor) -> dict[int, torch.Tensor]:
        if self.label_encoder is None:
            raise ValueError("label conditioning requires a cct model")
        raster = w_map.as_tensor(device=next(self.parameters()).device) if isinstance(w_map, InstanceLabelMap) else w_map
        return self.label_encoder(raster)

    def synthesize_content(
        self,
        y_hat: torch.Tensor,
        w_map: InstanceLabelMap | torch.Tensor,
        clamp: bool | None = None,
    ) -> torch.Tensor:
        return self.generator(y_hat, self.label_features(w_map), clamp=clamp)

    def grid_hw(self, image_hw: tuple[int, int]) -> tuple[int, int]:
        df = self.cfg.downsample_factor
        return image_hw[0] // df, image_hw[1] // df


@dataclass
class CheckpointMeta:
    preset: str
    mode: str
    channel_dim: int
    bottleneck_dim: int
    downsample_factor: int
    phase: str = "init"
    step: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def save_checkpoint(model: TransmissionModel, path: str, phase: str = "init", step: int = 0) -> None:
    meta = CheckpointMeta(
        preset=model.cfg.name,
        mode=model.mode,
        channel_dim=model.cfg.channel_dim,
        bottleneck_dim=model.cfg.bottleneck_dim,
        downsample_factor=model.cfg.downsample_factor,
        phase=phase,
        step=step,
    )
    payload = {
        "meta": meta.to_dict(),
        "model_cfg": dataclasses.asdict(model.cfg),
        "rate_cfg": dataclasses.asdict(model.rate_cfg),
        "srem_cfg": dataclasses.asdict(model.srem_cfg) if model.srem_cfg else None,
        "state": model.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(path: str, map_location="cpu") -> tuple[TransmissionModel, CheckpointMeta]:
    payload = torch.load(path, map_location=map_location, weights_only=True)
    meta = CheckpointMeta(**payload["meta"])
    model_cfg = ModelConfig(**payload["model_cfg"])
    rate_cfg = RateConfig(**payload["rate_cfg"])
    srem_cfg = SremConfig(**payload["srem_cfg"]) if payload["srem_cfg"] else None
    model = TransmissionModel(meta.mode, model_cfg, rate_cfg, srem_cfg)
    model.load_state_dict(payload["state"])
    model.eval()
    return model, meta


def _instance_seed(base_seed: int, label: str) -> int:
    digest = np.frombuffer(label.encode("utf-8"), dtype=np.uint8)
    return int(np.random.SeedSequence([base_seed, *digest.tolist()]).generate_state(1)[0])


def transmit_stream(stream: ChannelSymbolStream, channel: Channel) -> ChannelSymbolStream:
    """Power-normalize, push through the channel, undo the normalization."""
    if len(stream) == 0:
        channel.uses += 1
        return stream.with_symbols(stream.symbols.copy())
    normalized, scale = power_normalize(stream.symbols)
    received, _ = channel.transmit(normalized)
    return stream.with_symbols((received * scale).astype(np.float32))


class DistortionPerceptionPipeline:
    """One-shot transmission with receiver-side realism control."""

    def __init__(self, model: TransmissionModel, channel_cfg: ChannelConfig):
        if model.mode != "dpct":
            raise ValueError(f"checkpoint is a {model.mode!r} model, expected dpct")
        self.model = model.eval()
        self.channel_cfg = channel_cfg
        self.channel = Channel(channel_cfg)

    @property
    def channel_uses(self) -> int:
        return self.channel.uses

    @torch.no_grad()
    def transmit(self, x: torch.Tensor) -> tuple[torch.Tensor, ChannelSymbolStream, BandwidthReport]:
        """Single channel use; returns the decoded latent, the received
        stream, and the bandwidth report."""
        if x.dim() == 3:
            x = x.unsqueeze(0)
        y = self.model.analyze(x)
        alloc = self.model.allocate(y)
        stream = self.model.encode_stream(y, alloc)
        received = transmit_stream(stream, self.channel)
        grid = self.model.grid_hw((x.shape[-2], x.shape[-1]))
        y_hat = self.model.decode_stream(received, grid)
        report = compute_cbr(alloc, x.shape[-1], x.shape[-2], self.model.rate_cfg)
        return y_hat, received, report

    @torch.no_grad()
    def decode(self, y_hat: torch.Tensor, beta) -> torch.Tensor:
        """Decode one realism setting from an already received latent."""
        h, w = y_hat.shape[-2:]
        beta_max = self.model.srem_cfg.beta_max
        rmap = beta if isinstance(beta, RealismMap) else RealismMap.constant(float(beta), h, w, beta_max)
        return self.model.synthesize_realism(y_hat, rmap, clamp=True)

    @torch.no_grad()
    def transmit_multi(self, x: torch.Tensor, betas) -> dict[str, tuple[torch.Tensor, BandwidthReport]]:
        """All realism settings decoded from one transmission."""
        y_hat, _, report = self.transmit(x)
        out = {}
        for beta in betas:
            name = f"beta={beta.values.mean():g}" if isinstance(beta, RealismMap) else f"beta={beta:g}"
            out[name] = (self.decode(y_hat, beta), report)
        return out


class ContentPipeline:
    """Interest-oriented transmission: per-instance streams from one encode.

    The full stream is encoded once and split by instance ownership; each
    instance stream is transmitted at most once through its own seeded
    channel, so received symbols are independent of prompt order and any
    subset of instances decodes deterministically.
    """

    def __init__(self, model: TransmissionModel, channel_cfg: ChannelConfig, seed: int | None = None):
        if model.mode != "cct":
            raise ValueError(f"checkpoint is a {model.mode!r} model, expected cct")
        self.model = model.eval()
        self.channel_cfg = channel_cfg
        self.base_seed = channel_cfg.seed if seed is None else seed
        self.channel_uses = 0

    @torch.no_grad()
    def build_cache(
        self, x: torch.Tensor, w_map: InstanceLabelMap
    ) -> tuple[RateAllocation, dict[str, ChannelSymbolStream]]:
        """Encode the full stream and split it into clean per-instance streams."""
        if x.dim() == 3:
            x = x.unsqueeze(0)
        y = self.model.analyze(x)
        alloc = self.model.allocate(y)
        full = self.model.encode_stream(y, alloc)
        grid = self.model.grid_hw((x.shape[-2], x.shape[-1]))
        return alloc, split_streams(full, w_map, grid)

    def transmit_instance(self, label: str, cache: dict[str, ChannelSymbolStream]) -> ChannelSymbolStream:
        """One channel use for one instance stream, seeded per instance."""
        channel = Channel(self.channel_cfg)
        channel.reseed(_instance_seed(self.base_seed, label))
        received = transmit_stream(cache[label], channel)
        self.channel_uses += channel.uses
        return received

    @torch.no_grad()
    def decode_subset(
        self,
        w_map: InstanceLabelMap,
        received: dict[str, ChannelSymbolStream],
        alloc: RateAllocation,
        image_hw: tuple[int, int],
    ) -> torch.Tensor:
        """Reconstruct from the label map plus any subset of received streams."""
        merged = assemble_received(received, alloc)
        grid = self.model.grid_hw(image_hw)
        y_hat = self.model.decode_stream(merged, grid)
        return self.model.synthesize_content(y_hat, w_map, clamp=True)

    def report_for(
        self,
        w_map: InstanceLabelMap,
        delivered: set[str],
        alloc: RateAllocation,
        image_hw: tuple[int, int],
    ) -> BandwidthReport:
        H, W = image_hw
        grid = self.model.grid_hw(image_hw)
        regions = ownership_regions(w_map, grid)
        mask = np.zeros(len(alloc), dtype=np.uint8)
        for label in delivered:
            mask[regions[label]] = 1
        masked = RateAllocation(k=np.where(mask > 0, alloc.k, 0), grid=alloc.grid)
        extra = label_map_side_symbols(w_map, self.model.rate_cfg.bits_per_channel_symbol)
        return compute_cbr(
            masked, W, H, self.model.rate_cfg,
            regions={lb: regions[lb] for lb in delivered},
            extra_side_symbols=extra,
        )

    @torch.no_grad()
    def transmit_prompts(
        self, x: torch.Tensor, w_map: InstanceLabelMap, prompts
    ) -> tuple[torch.Tensor, BandwidthReport]:
        """Convenience: cache, deliver the prompted instances, decode once."""
        if x.dim() == 3:
            x = x.unsqueeze(0)
        alloc, cache = self.build_cache(x, w_map)
        received = {label: self.transmit_instance(label, cache) for label in prompts}
        image_hw = (x.shape[-2], x.shape[-1])
        x_hat = self.decode_subset(w_map, received, alloc, image_hw)
        return x_hat, self.report_for(w_map, set(prompts), alloc, image_hw)

    @torch.no_grad()
    def transmit_multi(self, x: torch.Tensor, prompt_sets) -> dict[str, tuple[torch.Tensor, BandwidthReport]]:
        """Evaluate a ladder of prompt sets against one shared cache; each
        instance stream crosses the channel at most once."""
        if x.dim() == 3:
            x = x.unsqueeze(0)
        w_map = prompt_sets["label_map"] if isinstance(prompt_sets, dict) else None
        if w_map is None:
            raise ValueError("transmit_multi for content mode needs {'label_map': ..., 'sets': [...]}")
        sets = prompt_sets["sets"]
        alloc, cache = self.build_cache(x, w_map)
        received: dict[str, ChannelSymbolStream] = {}
        image_hw = (x.shape[-2], x.shape[-1])
        out = {}
        for prompt_set in sets:
            for label in prompt_set:
                if label not in received:
                    received[label] = self.transmit_instance(label, cache)
            subset = {lb: received[lb] for lb in prompt_set}
            x_hat = self.decode_subset(w_map, subset, alloc, image_hw)
            name = "prompts={" + ",".join(sorted(prompt_set)) + "}"
            out[name] = (x_hat, self.report_for(w_map, set(prompt_set), alloc, image_hw))
        return out


def build_pipeline(model: TransmissionModel, channel_cfg: ChannelConfig):
    if model.mode == "dpct":
        return DistortionPerceptionPipeline(model, channel_cfg)
    return ContentPipeline(model, channel_cfg)

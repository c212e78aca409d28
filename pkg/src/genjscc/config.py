"""Configuration dataclasses, model presets, and strict YAML config files."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import yaml


def integer_rate_grid(low: int, high: int, count: int) -> list[int]:
    """Integer quantization grid: `count` points evenly spaced over [low, high],
    rounded to integers with duplicates removed."""
    pts = np.round(np.linspace(low, high, count)).astype(int)
    return sorted(set(int(v) for v in pts))


@dataclass
class ModelConfig:
    """Architecture hyperparameters for one preset."""

    name: str = "toy"
    channel_dim: int = 64           # c, latent channels
    bottleneck_dim: int = 48        # N, width inside residual bottlenecks
    downsample_factor: int = 8      # total image-to-latent scale, power of two
    cond_rb_count: int = 2          # (Cond) RBs stacked per generator stage
    jscc_depth: int = 2             # transformer blocks in f_e and f_d
    jscc_heads: int = 4
    disc_base_channels: int = 48
    label_embed_dim: int = 24       # per-scale label feature channels (CCT)
    entropy_backend: str = "hyperprior"  # "hyperprior" | "factorized"
    hyper_dim: int = 32

    def __post_init__(self):
        if self.channel_dim <= 0 or self.bottleneck_dim <= 0:
            raise ValueError("channel_dim and bottleneck_dim must be positive")
        if self.downsample_factor < 2 or self.downsample_factor & (self.downsample_factor - 1):
            raise ValueError(f"downsample_factor must be a power of two, got {self.downsample_factor}")
        if self.channel_dim % 2:
            raise ValueError("channel_dim must be even (sin/cos split)")
        if self.cond_rb_count <= 0:
            raise ValueError("cond_rb_count must be positive")

    @property
    def num_up_stages(self) -> int:
        # conditioned x2 stages; one extra x2 transposed conv finishes the ladder
        return int(math.log2(self.downsample_factor)) - 1


@dataclass
class RateConfig:
    """Per-embedding bandwidth quantization and side-information accounting."""

    eta: float = 0.2
    grid: list[int] = field(default_factory=lambda: integer_rate_grid(1, 320, 26))
    side_info_bits_per_embedding: int | None = None  # default ceil(log2(|grid|))
    bits_per_channel_symbol: float = 4.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        grid = sorted(set(int(v) for v in self.grid))
        if len(grid) < 2:
            raise ValueError("quantization grid needs at least 2 distinct values")
        if grid[0] <= 0:
            raise ValueError("grid values must be positive integers")
        self.grid = grid
        min_bits = math.ceil(math.log2(len(grid)))
        if self.side_info_bits_per_embedding is None:
            self.side_info_bits_per_embedding = min_bits
        elif self.side_info_bits_per_embedding < min_bits:
            raise ValueError(
                f"side_info_bits_per_embedding={self.side_info_bits_per_embedding} "
                f"cannot index a grid of {len(grid)} values (needs >= {min_bits})"
            )
        if self.bits_per_channel_symbol <= 0:
            raise ValueError("bits_per_channel_symbol must be positive")

    @property
    def index_width(self) -> int:
        return int(self.side_info_bits_per_embedding)


@dataclass
class ChannelConfig:
    """Simulated channel parameters. `snr_db=None` disables noise entirely."""

    kind: str = "awgn"              # "awgn" | "rayleigh"
    snr_db: float | None = 10.0
    seed: int = 0
    equalization: str = "zero_forcing"  # "none" | "zero_forcing"

    def __post_init__(self):
        if self.kind not in ("awgn", "rayleigh"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite or None (noiseless)")
        if self.equalization not in ("none", "zero_forcing"):
            raise ValueError(f"unknown equalization {self.equalization!r}")
        if self.kind == "rayleigh" and self.equalization != "zero_forcing":
            raise ValueError("rayleigh with perfect CSI requires zero_forcing equalization")


@dataclass
class SremConfig:
    """Sinusoidal embedding of the realism map."""

    p_max: float = 10000.0
    channel_dim: int = 64
    beta_max: float = 8.0

    def __post_init__(self):
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")
        if self.channel_dim % 2 or self.channel_dim <= 0:
            raise ValueError("channel_dim must be a positive even integer")
        if self.beta_max <= 0:
            raise ValueError("beta_max must be positive")


@dataclass
class LossWeights:
    lmbda: float = 0.025        # rate weight
    beta_scalar: float = 8.0    # fixed perception weight (CCT / scalar losses)
    c_p: float = 1.0            # perceptual-metric weight inside the perception term
    eta: float = 0.2            # shared with RateConfig
    score_eps: float = 1e-6     # clamp for log terms

    def __post_init__(self):
        if self.lmbda < 0 or self.beta_scalar < 0 or self.c_p < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class TrainingSchedule:
    phase: str = "rd_pretrain"          # "rd_pretrain" | "rdp"
    total_steps: int = 1000
    constant_map_fraction: float = 0.8  # constant realism map for this head fraction
    learning_rate: float = 1e-4
    disc_learning_rate: float | None = None
    decay_factor: float = 0.1
    decay_start_fraction: float = 0.5
    batch_size: int = 8
    instance_fraction: float = 0.25     # CCT: fraction of instances kept per step
    cond_lr_scale: float = 1.0          # lr multiplier for conditioning-path params

    def __post_init__(self):
        if self.phase not in ("rd_pretrain", "rdp"):
            raise ValueError(f"unknown phase {self.phase!r}")
        for name in ("constant_map_fraction", "decay_start_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0,1]")
        if not 0.0 < self.instance_fraction <= 1.0:
            raise ValueError("instance_fraction must lie in (0,1]")
        if self.total_steps <= 0 or self.batch_size <= 0:
            raise ValueError("total_steps and batch_size must be positive")

    def lr_at(self, step: int) -> float:
        if step >= self.decay_start_fraction * self.total_steps:
            return self.learning_rate * self.decay_factor
        return self.learning_rate


@dataclass
class PipelineConfig:
    mode: str = "dpct"                  # "dpct" | "cct"
    model: ModelConfig = field(default_factory=ModelConfig)
    rate: RateConfig = field(default_factory=RateConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    srem: SremConfig = field(default_factory=SremConfig)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("dpct", "cct"):
            raise ValueError(f"unknown mode {self.mode!r}")


PRESETS: dict[str, dict] = {
    # Full-scale configuration; grid of 26 integers evenly spanning 1..320,
    # indexable with 5 side-information bits per embedding.
    "paper": dict(
        name="paper",
        channel_dim=320,
        bottleneck_dim=256,
        downsample_factor=16,
        cond_rb_count=3,
        jscc_depth=4,
        jscc_heads=4,
        disc_base_channels=64,
        label_embed_dim=64,
        hyper_dim=192,
    ),
    # Desk-scale preset: 64x64 crops give an 8x8 latent grid.
    "toy": dict(
        name="toy",
        channel_dim=64,
        bottleneck_dim=48,
        downsample_factor=8,
        cond_rb_count=2,
        jscc_depth=2,
        jscc_heads=4,
        disc_base_channels=48,
        label_embed_dim=24,
        hyper_dim=32,
    ),
    # Minimal preset for fast training checks.
    "tiny": dict(
        name="tiny",
        channel_dim=32,
        bottleneck_dim=24,
        downsample_factor=8,
        cond_rb_count=2,
        jscc_depth=1,
        jscc_heads=2,
        disc_base_channels=24,
        label_embed_dim=12,
        hyper_dim=16,
    ),
}

PRESET_RATE_GRIDS: dict[str, list[int]] = {
    "paper": integer_rate_grid(1, 320, 26),
    "toy": integer_rate_grid(1, 64, 8),
    "tiny": integer_rate_grid(1, 32, 6),
}


def model_preset(name: str) -> ModelConfig:
    try:
        return ModelConfig(**PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


def rate_preset(name: str, eta: float = 0.2) -> RateConfig:
    return RateConfig(eta=eta, grid=list(PRESET_RATE_GRIDS[name]))


def srem_preset(name: str, beta_max: float = 8.0) -> SremConfig:
    return SremConfig(channel_dim=PRESETS[name]["channel_dim"], beta_max=beta_max)


class ConfigError(ValueError):
    pass


def _from_mapping(cls, data: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if dataclasses.is_dataclass(f.type) if isinstance(f.type, type) else False:
            value = _from_mapping(f.type, value, f"{path}.{f.name}")
        kwargs[f.name] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "model": ModelConfig,
    "rate": RateConfig,
    "channel": ChannelConfig,
    "srem": SremConfig,
    "weights": LossWeights,
    "schedule": TrainingSchedule,
}


def load_config_file(path: str) -> dict:
    """Parse a YAML config file into typed sections.

    Top-level keys: mode, seed, preset, plus any of model/rate/channel/srem/
    weights/schedule sections. A `preset` short-hand expands into model, rate
    and srem defaults that explicit sections then override. Unknown keys are
    rejected with their names listed.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")

    allowed = set(_SECTION_TYPES) | {"mode", "seed", "preset", "data", "out_dir", "checkpoint", "phases"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in config: {', '.join(unknown)}")

    preset = raw.get("preset")
    out: dict = {
        "mode": raw.get("mode", "dpct"),
        "seed": int(raw.get("seed", 0)),
        "preset": preset,
        "data": raw.get("data"),
        "out_dir": raw.get("out_dir"),
        "checkpoint": raw.get("checkpoint"),
    }

    defaults: dict[str, object] = {}
    if preset is not None:
        defaults["model"] = model_preset(preset)
        defaults["rate"] = rate_preset(preset)
        defaults["srem"] = srem_preset(preset)

    for key, cls in _SECTION_TYPES.items():
        if key in raw:
            section = dict(raw[key] or {})
            if key in defaults:
                merged = dataclasses.asdict(defaults[key])
                names = {f.name for f in dataclasses.fields(cls)}
                bad = sorted(set(section) - names)
                if bad:
                    raise ConfigError(f"unknown keys in {key}: {', '.join(bad)}")
                merged.update(section)
                section = merged
            out[key] = _from_mapping(cls, section, key)
        elif key in defaults:
            out[key] = defaults[key]

    if "phases" in raw:
        phases = []
        for i, entry in enumerate(raw["phases"] or []):
            phases.append(_from_mapping(TrainingSchedule, dict(entry or {}), f"phases[{i}]"))
        out["phases"] = phases
    return out

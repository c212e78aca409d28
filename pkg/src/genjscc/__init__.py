"""Generative joint source-channel coding for wireless image transmission.

One-shot analog transmission of images over simulated noisy channels with a
learned variable-rate codec, plus two receiver-side control surfaces: a
realism map steering the distortion-perception trade-off per region of a
single received signal, and prompt-driven selective transmission that
generates unrequested content from an instance label map.
"""

from .channel import Channel, ChannelRealization, power_normalize, transmit
from .config import (
    ChannelConfig,
    LossWeights,
    ModelConfig,
    PipelineConfig,
    RateConfig,
    SremConfig,
    TrainingSchedule,
    model_preset,
    rate_preset,
    srem_preset,
)
from .content import BinaryHeatmap, InstanceLabelMap, SessionState, heatmap_from_prompts
from .entropy import (
    BandwidthReport,
    EntropyParameters,
    RateAllocation,
    allocate_rates,
    compute_cbr,
)
from .jscc import ChannelSymbolStream, VariableRateJSCC, segment_layout
from .metrics import extract_patches, frechet_distance, psnr
from .pipeline import (
    ContentPipeline,
    DistortionPerceptionPipeline,
    TransmissionModel,
    build_pipeline,
    load_checkpoint,
    save_checkpoint,
)
from .srem import GlobalFeatureSet, RealismMap, SpatialRealismEmbedding, frequency_vector
from .training import Trainer

__version__ = "0.1.0"

__all__ = [
    "BandwidthReport",
    "BinaryHeatmap",
    "Channel",
    "ChannelConfig",
    "ChannelRealization",
    "ChannelSymbolStream",
    "ContentPipeline",
    "DistortionPerceptionPipeline",
    "EntropyParameters",
    "GlobalFeatureSet",
    "InstanceLabelMap",
    "LossWeights",
    "ModelConfig",
    "PipelineConfig",
    "RateAllocation",
    "RateConfig",
    "RealismMap",
    "SessionState",
    "SpatialRealismEmbedding",
    "SremConfig",
    "Trainer",
    "TrainingSchedule",
    "TransmissionModel",
    "VariableRateJSCC",
    "allocate_rates",
    "build_pipeline",
    "compute_cbr",
    "extract_patches",
    "frechet_distance",
    "heatmap_from_prompts",
    "load_checkpoint",
    "model_preset",
    "power_normalize",
    "psnr",
    "rate_preset",
    "save_checkpoint",
    "segment_layout",
    "srem_preset",
    "transmit",
]

from combiverse.guidance.attention import TokenScaling, attention_maps, reweight_attention
from combiverse.guidance.config import PRESETS, GuidanceConfig, guidance_preset
from combiverse.guidance.conformance import ConformanceReport, provider_conformance_check
from combiverse.guidance.diffusion import (
    DistillationStep,
    NoiseHint,
    NoiseSchedule,
    ScoreProvider,
    TimestepSampler,
    sample_timestep,
    score_distillation_loss,
    sds_gradient,
    ssds_gradient,
    weighting,
)
from combiverse.guidance.external import HttpScoreProvider
from combiverse.guidance.losses import depth_guidance_loss, reference_loss, target_from_image
from combiverse.guidance.synthetic import (
    PotentialTerm,
    SyntheticScoreProvider,
    SyntheticSpec,
    synthetic_score_provider,
)

__all__ = [
    "PRESETS",
    "ConformanceReport",
    "DistillationStep",
    "GuidanceConfig",
    "HttpScoreProvider",
    "NoiseHint",
    "NoiseSchedule",
    "PotentialTerm",
    "ScoreProvider",
    "SyntheticScoreProvider",
    "SyntheticSpec",
    "TimestepSampler",
    "TokenScaling",
    "attention_maps",
    "depth_guidance_loss",
    "guidance_preset",
    "provider_conformance_check",
    "reference_loss",
    "reweight_attention",
    "sample_timestep",
    "score_distillation_loss",
    "sds_gradient",
    "ssds_gradient",
    "synthetic_score_provider",
    "target_from_image",
    "weighting",
]

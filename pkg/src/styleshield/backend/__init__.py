"""Backbone adapters: noise schedule, domain types, toy and real bindings."""

from .base import DiffusionBackbone, hash_tensors
from .sampler import ddim_sample, ddim_timesteps
from .schedule import NoiseSchedule, forward_process
from .toy import ToyBackbone, build_toy_weights, create_backbone
from .types import (
    AttentionRecord,
    BlockKind,
    CrossAttnLayerId,
    LatentImage,
    PromptEmbedding,
    enumeration_sorted,
)

__all__ = [
    "AttentionRecord",
    "BlockKind",
    "CrossAttnLayerId",
    "DiffusionBackbone",
    "LatentImage",
    "NoiseSchedule",
    "PromptEmbedding",
    "ToyBackbone",
    "build_toy_weights",
    "create_backbone",
    "ddim_sample",
    "ddim_timesteps",
    "enumeration_sorted",
    "forward_process",
    "hash_tensors",
]

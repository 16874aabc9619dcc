"""Backbone adapter contract and shared helpers.

A backbone bundles an image encoder/decoder, a noise schedule, a text
encoder, and a denoiser with enumerable cross-attention layers. Two
implementations ship: a deterministic toy backbone for desk-scale work
(`toy.py`) and a binding to a real latent-diffusion checkpoint
(`sd.py`, optional dependencies).
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Protocol, runtime_checkable

import numpy as np
import torch

from ..images import ImageTensor
from .schedule import NoiseSchedule
from .types import CrossAttnLayerId, LatentImage, PromptEmbedding


@runtime_checkable
class DiffusionBackbone(Protocol):
    """Uniform surface every backbone implementation exposes.

    Attributes:
        identifier: unique per instance (isolation checks compare these).
        latent_geometry: (c_lat, h_lat, w_lat).
        layer_ids: cross-attention layers in enumeration order
            (down -> mid -> up).
        trainable_mask: subset of layer_ids currently receiving gradients.
        schedule: the forward-process noise schedule.
    """

    identifier: str
    latent_geometry: tuple
    layer_ids: list
    trainable_mask: set
    schedule: NoiseSchedule

    def encode(self, image: ImageTensor) -> LatentImage: ...

    def decode(self, latent: LatentImage) -> ImageTensor: ...

    def add_noise(self, z0: LatentImage, t: int, eps: np.ndarray) -> LatentImage: ...

    def predict_noise(
        self, z_t: LatentImage, t: int, c: PromptEmbedding, capture: bool = False
    ) -> tuple: ...

    def set_trainable(self, layers: Iterable[CrossAttnLayerId]) -> "DiffusionBackbone": ...

    def embed_prompt(self, text: str) -> PromptEmbedding: ...


def hash_tensors(named: Iterable[tuple]) -> str:
    """Order-stable SHA-256 over (name, tensor) pairs."""
    h = hashlib.sha256()
    for name, tensor in sorted(named, key=lambda kv: kv[0]):
        h.update(name.encode())
        arr = tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else np.asarray(tensor)
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()

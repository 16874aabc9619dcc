"""Deterministic DDIM sampling on any backbone.

One minimal sampler (eta = 0, uniform timestep subsequence) covers class
example generation and the attacker's evaluation images. It is fully
determined by the starting noise seed.
"""

from __future__ import annotations

import numpy as np
import torch

from ..images import ImageTensor
from ..seeding import torch_rng
from .types import PromptEmbedding


def ddim_timesteps(num_train_steps: int, num_sample_steps: int) -> list:
    """Descending timestep subsequence covering [0, T)."""
    if num_sample_steps < 1:
        raise ValueError("need at least one sampling step")
    num_sample_steps = min(num_sample_steps, num_train_steps)
    ts = np.linspace(0, num_train_steps - 1, num_sample_steps)
    return [int(t) for t in np.unique(np.round(ts))[::-1]]


def ddim_sample(
    backbone,
    prompt: PromptEmbedding,
    seed: int,
    num_steps: int = 10,
    capture_at: set | None = None,
):
    """Run the reverse process from seeded Gaussian noise.

    Returns (image, captures) where captures maps timestep -> list of
    AttentionRecord for the steps named in capture_at (empty dict when
    capture_at is None).
    """
    gen = torch_rng(seed)
    c, h, w = backbone.latent_geometry
    z = torch.randn((c, h, w), generator=gen, dtype=torch.float64)
    text = torch.from_numpy(prompt.embedding).to(torch.float64)
    abar = backbone.schedule.alphas_cumprod
    steps = ddim_timesteps(backbone.schedule.num_steps, num_steps)

    captures: dict = {}
    with torch.no_grad():
        for i, t in enumerate(steps):
            want = capture_at is not None and t in capture_at
            eps_hat, records = backbone.predict_noise_tensor(z, t, text, capture=want)
            if want:
                captures[t] = records
            a_t = float(abar[t])
            z0_hat = (z - (1 - a_t) ** 0.5 * eps_hat) / a_t**0.5
            if i + 1 < len(steps):
                a_prev = float(abar[steps[i + 1]])
                z = a_prev**0.5 * z0_hat + (1 - a_prev) ** 0.5 * eps_hat
            else:
                z = z0_hat

    x = backbone.decode_tensor(z)
    arr = np.clip(np.transpose(x.numpy(), (1, 2, 0)), 0.0, 1.0)
    return ImageTensor(arr, provenance="generated", meta={"prompt": prompt.text, "seed": seed}), captures

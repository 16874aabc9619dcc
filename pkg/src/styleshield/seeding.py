"""Deterministic seed derivation.

Every stochastic stage derives its own stream from the global seed plus
string labels, so reordering work items or adding stages never shifts
another stage's randomness.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(root_seed: int, *labels: object) -> int:
    """Derive a 63-bit child seed from a root seed and a label path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root_seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "big") >> 1


def np_rng(root_seed: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, *labels))


def torch_rng(root_seed: int, *labels: object) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(root_seed, *labels))
    return gen

"""Domain types shared by every backbone implementation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

_BLOCK_ORDER = {"down": 0, "mid": 1, "up": 2}


class BlockKind(str, Enum):
    DOWN = "down"
    MID = "mid"
    UP = "up"


@dataclass(frozen=True, order=False)
class CrossAttnLayerId:
    """Identity of one cross-attention layer inside the denoiser.

    The canonical name follows the reference U-Net convention, e.g.
    "up_blocks.1.attentions.2" or "mid_block.attentions.0", and uniquely
    determines (block, block_index, attn_index).
    """

    block: BlockKind
    block_index: int
    attn_index: int

    @property
    def canonical_name(self) -> str:
        if self.block is BlockKind.MID:
            return f"mid_block.attentions.{self.attn_index}"
        return f"{self.block.value}_blocks.{self.block_index}.attentions.{self.attn_index}"

    @classmethod
    def parse(cls, name: str) -> "CrossAttnLayerId":
        parts = name.split(".")
        if parts[0] == "mid_block" and parts[1] == "attentions" and len(parts) == 3:
            return cls(BlockKind.MID, 0, int(parts[2]))
        if (
            len(parts) == 4
            and parts[0].endswith("_blocks")
            and parts[2] == "attentions"
            and parts[0][:-7] in ("down", "up")
        ):
            return cls(BlockKind(parts[0][:-7]), int(parts[1]), int(parts[3]))
        raise ValueError(f"unparseable cross-attention layer name {name!r}")

    def sort_key(self) -> tuple:
        """Enumeration order: down -> mid -> up, then block and attn index."""
        return (_BLOCK_ORDER[self.block.value], self.block_index, self.attn_index)

    def __str__(self) -> str:
        return self.canonical_name


def enumeration_sorted(layers) -> list:
    return sorted(layers, key=lambda lid: lid.sort_key())


@dataclass
class LatentImage:
    """Latent-space image plus the encoder scaling that produced it."""

    data: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"latent must be (c, h, w), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("latent contains non-finite values")

    @property
    def geometry(self) -> tuple:
        return tuple(self.data.shape)


@dataclass
class AttentionRecord:
    """One layer's cross-attention map captured during a denoiser call.

    map has shape [n_heads, n_query, n_tokens]; each (head, query) row is
    a softmax distribution over text tokens.
    """

    layer: CrossAttnLayerId
    map: np.ndarray

    def __post_init__(self):
        self.map = np.asarray(self.map, dtype=np.float64)
        if self.map.ndim != 3:
            raise ValueError(f"attention map must be [heads, query, tokens], got {self.map.shape}")
        if self.map.min() < 0:
            raise ValueError("attention entries must be nonnegative")
        row_sums = self.map.sum(axis=-1)
        if np.max(np.abs(row_sums - 1.0)) > 1e-5:
            raise ValueError("attention rows must sum to 1 within 1e-5")

    @property
    def n_heads(self) -> int:
        return self.map.shape[0]

    @property
    def n_query(self) -> int:
        return self.map.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.map.shape[2]


@dataclass
class PromptEmbedding:
    """Tokenized and embedded prompt with role-annotated token spans.

    token_spans maps a role ("style" / "content") to the sorted tuple of
    token indices the role's phrase occupies. Spans exclude padding and
    are disjoint by construction.
    """

    tokens: list
    embedding: np.ndarray
    token_spans: dict = field(default_factory=dict)
    text: str = ""

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        if self.embedding.ndim != 2 or self.embedding.shape[0] != len(self.tokens):
            raise ValueError("embedding must be [len(tokens), d_text]")
        length = len(self.tokens)
        seen: set = set()
        for role, span in self.token_spans.items():
            span = tuple(sorted(int(i) for i in span))
            if any(i < 0 or i >= length for i in span):
                raise ValueError(f"{role} span index outside [0, {length})")
            if seen.intersection(span):
                raise ValueError("token spans must be disjoint")
            seen.update(span)
            self.token_spans[role] = span

    @property
    def max_length(self) -> int:
        return len(self.tokens)

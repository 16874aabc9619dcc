"""Hash-based tokenizer and fixed-table text encoder for the toy backbone.

The tokenizer is context free: a word always produces the same subword
ids wherever it appears, which is what makes phrase-span resolution a
plain subsequence search. Subwords come from camel-case boundaries plus
a chunk-length cap, so invented artist names like "ClaudeMonet" split
into multiple tokens the way a real subword vocabulary would.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

PAD_ID = 0
_WORD_RE = re.compile(r"[A-Za-z0-9']+")
_CAMEL_RE = re.compile(r"[A-Z][a-z0-9']*|[a-z0-9'][a-z0-9']*|[A-Z]+")
_MAX_CHUNK = 8


def _subwords(word: str) -> list:
    pieces = _CAMEL_RE.findall(word) or [word]
    out = []
    for piece in pieces:
        piece = piece.lower()
        while len(piece) > _MAX_CHUNK:
            out.append(piece[:_MAX_CHUNK])
            piece = piece[_MAX_CHUNK:]
        if piece:
            out.append(piece)
    return out


class ToyTokenizer:
    """Deterministic subword tokenizer over a hashed vocabulary."""

    def __init__(self, vocab_size: int = 1024, max_length: int = 16):
        self.vocab_size = int(vocab_size)
        self.max_length = int(max_length)

    def _token_id(self, subword: str) -> int:
        digest = hashlib.blake2b(subword.encode(), digest_size=8).digest()
        return 1 + int.from_bytes(digest, "big") % (self.vocab_size - 1)

    def tokenize(self, text: str) -> list:
        """Unpadded token ids for a text fragment."""
        ids = []
        for word in _WORD_RE.findall(text):
            ids.extend(self._token_id(sw) for sw in _subwords(word))
        return ids

    def pad(self, ids: list) -> list:
        ids = list(ids)[: self.max_length]
        return ids + [PAD_ID] * (self.max_length - len(ids))


class ToyTextEncoder:
    """Embedding table plus sinusoidal positions, both fixed at init."""

    def __init__(self, tokenizer: ToyTokenizer, dim: int, table: np.ndarray):
        if table.shape != (tokenizer.vocab_size, dim):
            raise ValueError("embedding table shape mismatch")
        self.tokenizer = tokenizer
        self.dim = int(dim)
        self.table = np.asarray(table, dtype=np.float64)
        self.positions = sinusoidal_positions(tokenizer.max_length, dim)

    @staticmethod
    def init_table(vocab_size: int, dim: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((vocab_size, dim)) / np.sqrt(dim)

    def embed_ids(self, padded_ids: list) -> np.ndarray:
        ids = np.asarray(padded_ids, dtype=np.int64)
        if ids.shape != (self.tokenizer.max_length,):
            raise ValueError("ids must be padded to max_length")
        return self.table[ids] + self.positions

    def embed_text(self, text: str) -> tuple:
        """Returns (padded token ids, [L, dim] embedding)."""
        padded = self.tokenizer.pad(self.tokenizer.tokenize(text))
        return padded, self.embed_ids(padded)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2 * (idx // 2) / dim)
    enc = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return 0.1 * enc

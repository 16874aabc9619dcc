"""Rank layers by style-content divergence and pick trainable sets."""

from __future__ import annotations

from dataclasses import dataclass

from .backend.types import CrossAttnLayerId
from .errors import DuplicateLayerError, PresetUnavailableError

# The reference four-layer selection for the stable-diffusion layout:
# the cross-attention layers with the highest style-content divergence.
TOP4_STYLE_SENSITIVE = (
    "down_blocks.2.attentions.1",
    "up_blocks.1.attentions.0",
    "up_blocks.1.attentions.2",
    "up_blocks.2.attentions.2",
)
TOP1_MOST_SENSITIVE = ("up_blocks.1.attentions.2",)
# mid5 is positional: the contiguous enumeration span between these two
# layers inclusive, which on the reference layout is exactly 5 layers.
MID5_ENDPOINTS = ("down_blocks.2.attentions.1", "up_blocks.1.attentions.2")

PRESETS = ("top4_style_sensitive", "top1_most_sensitive", "mid5")
MODES = ("top_k_divergence", "named_preset")


@dataclass(frozen=True)
class SelectionPolicy:
    """How to turn a ranking into a trainable layer set.

    mode "top_k_divergence" takes the first k of the ranking; mode
    "named_preset" ignores divergences and returns a fixed, layout-bound
    set. tie_break has a single supported value and exists so the
    choice is recorded in serialized configs.
    """

    mode: str = "top_k_divergence"
    k: int = 4
    preset: str | None = None
    tie_break: str = "enumeration_order"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown selection mode {self.mode!r}")
        if self.tie_break != "enumeration_order":
            raise ValueError(f"unsupported tie_break {self.tie_break!r}")
        if self.mode == "top_k_divergence" and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.mode == "named_preset":
            if self.preset not in PRESETS:
                raise ValueError(
                    f"unknown preset {self.preset!r}; expected one of {PRESETS}"
                )


def rank_layers(scores) -> list:
    """Sort LayerScores into [(layer, divergence), ...], best first.

    Descending by divergence; exact ties fall back to the backbone
    enumeration order, so the result is deterministic.
    """
    if not scores:
        raise ValueError("rank_layers needs a nonempty score list")
    seen = set()
    for s in scores:
        if s.layer in seen:
            raise DuplicateLayerError(
                f"layer {s.layer.canonical_name} scored more than once"
            )
        seen.add(s.layer)
    ordered = sorted(scores, key=lambda s: (-s.divergence, s.layer.sort_key()))
    return [(s.layer, float(s.divergence)) for s in ordered]


def _resolve(names, available: set, preset: str) -> list:
    ids = [CrossAttnLayerId.parse(n) for n in names]
    missing = [l.canonical_name for l in ids if l not in available]
    if missing:
        raise PresetUnavailableError(
            f"preset {preset!r} needs layers this backbone lacks: "
            + ", ".join(sorted(missing))
        )
    return ids


def select(policy: SelectionPolicy, ranking) -> set:
    """Apply a policy to a rank_layers() result, returning a layer set."""
    if not ranking:
        raise ValueError("select needs a nonempty ranking")
    layers = [lid for lid, _ in ranking]
    available = set(layers)

    if policy.mode == "top_k_divergence":
        if policy.k > len(ranking):
            raise ValueError(
                f"k={policy.k} exceeds the {len(ranking)} ranked layers"
            )
        return set(layers[: policy.k])

    if policy.preset == "top4_style_sensitive":
        return set(_resolve(TOP4_STYLE_SENSITIVE, available, policy.preset))
    if policy.preset == "top1_most_sensitive":
        return set(_resolve(TOP1_MOST_SENSITIVE, available, policy.preset))

    # mid5: slice the enumeration-ordered layer list between the two
    # endpoint layers, inclusive.
    lo, hi = _resolve(MID5_ENDPOINTS, available, policy.preset)
    ordered = sorted(layers, key=lambda l: l.sort_key())
    i, j = ordered.index(lo), ordered.index(hi)
    if i > j:
        i, j = j, i
    return set(ordered[i:j + 1])


def selection_manifest(policy: SelectionPolicy, ranking, chosen: set) -> dict:
    """Serializable record of what was selected and why."""
    divergence = {lid: d for lid, d in ranking}
    return {
        "policy": {
            "mode": policy.mode,
            "k": policy.k if policy.mode == "top_k_divergence" else None,
            "preset": policy.preset,
            "tie_break": policy.tie_break,
        },
        "chosen": [l.canonical_name for l in sorted(chosen, key=lambda l: l.sort_key())],
        "divergence": {
            l.canonical_name: divergence[l]
            for l in sorted(chosen, key=lambda l: l.sort_key())
        },
    }

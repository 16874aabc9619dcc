"""Tests for layer ranking and selection policies."""

from __future__ import annotations

import numpy as np
import pytest

from styleshield.backend import create_backbone
from styleshield.backend.types import CrossAttnLayerId, enumeration_sorted
from styleshield.errors import DuplicateLayerError, PresetUnavailableError
from styleshield.probe import LayerScore
from styleshield.select import (
    MID5_ENDPOINTS,
    TOP1_MOST_SENSITIVE,
    TOP4_STYLE_SENSITIVE,
    SelectionPolicy,
    rank_layers,
    select,
    selection_manifest,
)


def _score(name: str, divergence: float) -> LayerScore:
    lid = CrossAttnLayerId.parse(name)
    return LayerScore(layer=lid, style_mean=0.0, content_mean=0.0,
                      divergence=divergence)


def _sd15_layout_ids() -> list:
    return list(create_backbone("toy-sd15").layer_ids)


# ---------------------------------------------------------------- ranking

def test_rank_layers_matches_reference_sort_on_random_scores(rng):
    layer_ids = _sd15_layout_ids()
    for _ in range(100):
        values = rng.standard_normal(len(layer_ids))
        scores = [LayerScore(layer=lid, style_mean=0.0, content_mean=0.0,
                             divergence=float(v))
                  for lid, v in zip(layer_ids, values)]
        perm = rng.permutation(len(scores))
        got = rank_layers([scores[i] for i in perm])
        expected = sorted(
            ((lid, float(v)) for lid, v in zip(layer_ids, values)),
            key=lambda pair: (-pair[1], pair[0].sort_key()),
        )
        assert got == expected


def test_rank_layers_breaks_ties_by_enumeration_order():
    names = ["up_blocks.2.attentions.0", "down_blocks.1.attentions.0",
             "mid_block.attentions.0"]
    ranking = rank_layers([_score(n, 0.5) for n in names])
    assert [lid.canonical_name for lid, _ in ranking] == [
        "down_blocks.1.attentions.0",
        "mid_block.attentions.0",
        "up_blocks.2.attentions.0",
    ]


def test_rank_layers_rejects_duplicates():
    scores = [_score("up_blocks.1.attentions.2", 0.1),
              _score("up_blocks.1.attentions.2", 0.2)]
    with pytest.raises(DuplicateLayerError):
        rank_layers(scores)


def test_rank_layers_rejects_empty():
    with pytest.raises(ValueError):
        rank_layers([])


# ---------------------------------------------------------------- top-k

def test_top_k_prefix_monotonicity(rng):
    layer_ids = _sd15_layout_ids()
    values = rng.standard_normal(len(layer_ids))
    ranking = rank_layers([
        LayerScore(layer=lid, style_mean=0.0, content_mean=0.0,
                   divergence=float(v))
        for lid, v in zip(layer_ids, values)
    ])
    previous: set = set()
    for k in range(1, len(ranking) + 1):
        chosen = select(SelectionPolicy(mode="top_k_divergence", k=k), ranking)
        assert len(chosen) == k
        assert previous <= chosen
        previous = chosen


def test_top_k_exceeding_ranking_raises():
    ranking = rank_layers([_score("up_blocks.1.attentions.2", 0.1)])
    with pytest.raises(ValueError):
        select(SelectionPolicy(mode="top_k_divergence", k=2), ranking)


# ---------------------------------------------------------------- presets

def _full_ranking() -> list:
    layer_ids = _sd15_layout_ids()
    return [(lid, 0.0) for lid in layer_ids]


def test_top4_preset_exact_membership():
    chosen = select(SelectionPolicy(mode="named_preset",
                                    preset="top4_style_sensitive"),
                    _full_ranking())
    assert {l.canonical_name for l in chosen} == set(TOP4_STYLE_SENSITIVE)
    assert set(TOP4_STYLE_SENSITIVE) == {
        "down_blocks.2.attentions.1",
        "up_blocks.1.attentions.0",
        "up_blocks.1.attentions.2",
        "up_blocks.2.attentions.2",
    }


def test_top1_preset_is_most_sensitive_layer():
    chosen = select(SelectionPolicy(mode="named_preset",
                                    preset="top1_most_sensitive"),
                    _full_ranking())
    assert {l.canonical_name for l in chosen} == {"up_blocks.1.attentions.2"}
    assert TOP1_MOST_SENSITIVE == ("up_blocks.1.attentions.2",)


def test_mid5_preset_is_contiguous_span_of_five():
    chosen = select(SelectionPolicy(mode="named_preset", preset="mid5"),
                    _full_ranking())
    assert len(chosen) == 5
    ordered = enumeration_sorted(list(chosen))
    names = [l.canonical_name for l in ordered]
    assert names[0] == MID5_ENDPOINTS[0]
    assert names[-1] == MID5_ENDPOINTS[1]
    # Contiguity in the full enumeration.
    full = [l.canonical_name for l in enumeration_sorted(_sd15_layout_ids())]
    i = full.index(names[0])
    assert full[i:i + 5] == names


def test_preset_unavailable_on_small_layout():
    small = create_backbone("toy-small")
    ranking = [(lid, 0.0) for lid in small.layer_ids]
    with pytest.raises(PresetUnavailableError):
        select(SelectionPolicy(mode="named_preset",
                               preset="top4_style_sensitive"), ranking)


def test_policy_validation():
    with pytest.raises(ValueError):
        SelectionPolicy(mode="nope")
    with pytest.raises(ValueError):
        SelectionPolicy(mode="top_k_divergence", k=0)
    with pytest.raises(ValueError):
        SelectionPolicy(mode="named_preset", preset="unknown")
    with pytest.raises(ValueError):
        SelectionPolicy(tie_break="random")


# ---------------------------------------------------------------- manifest

def test_selection_manifest_round_trip():
    ranking = rank_layers([
        _score("up_blocks.1.attentions.2", 0.9),
        _score("down_blocks.0.attentions.0", 0.1),
    ])
    policy = SelectionPolicy(mode="top_k_divergence", k=1)
    chosen = select(policy, ranking)
    manifest = selection_manifest(policy, ranking, chosen)
    assert manifest["policy"]["mode"] == "top_k_divergence"
    assert manifest["policy"]["k"] == 1
    assert manifest["chosen"] == ["up_blocks.1.attentions.2"]
    assert manifest["divergence"]["up_blocks.1.attentions.2"] == pytest.approx(0.9)


def test_selection_manifest_orders_by_enumeration():
    ranking = _full_ranking()
    policy = SelectionPolicy(mode="named_preset", preset="top4_style_sensitive")
    chosen = select(policy, ranking)
    manifest = selection_manifest(policy, ranking, chosen)
    assert manifest["chosen"] == list(TOP4_STYLE_SENSITIVE)
    assert manifest["policy"]["k"] is None

"""Tests for the attacker simulation (fine-tune + generate)."""

from __future__ import annotations

import numpy as np
import pytest

from styleshield.backend import create_backbone
from styleshield.errors import TrainingDivergedError
from styleshield.images import ImageTensor
from styleshield.mimic import (
    GENERATION_TEMPLATE,
    MimicryConfig,
    finetune,
    generate,
)
from styleshield.protect import generate_class_examples
from styleshield.seeding import derive_seed


def _images(rng, n: int = 3, size: int = 64) -> list:
    return [ImageTensor(np.round(rng.uniform(size=(size, size, 3)) * 255) / 255,
                        provenance="clean")
            for _ in range(n)]


def _cfg(**overrides) -> MimicryConfig:
    defaults = dict(finetune_steps=4, n_class_examples=2,
                    class_sample_steps=2, generation_steps=2, seed=3)
    defaults.update(overrides)
    return MimicryConfig(**defaults)


def test_config_validation():
    with pytest.raises(ValueError):
        MimicryConfig(prompts=())
    with pytest.raises(ValueError):
        MimicryConfig(pseudo_token="two words")
    with pytest.raises(ValueError):
        MimicryConfig(pseudo_token="")
    with pytest.raises(ValueError):
        MimicryConfig(train_scope="adapters")
    with pytest.raises(ValueError):
        MimicryConfig(finetune_steps=-1)
    assert MimicryConfig().instance_prompt == "a painting in sks style"


def test_finetune_reduces_loss_and_updates_weights(rng):
    backbone = create_backbone("toy-small")
    before = backbone.param_hash()
    images = _images(rng)
    cfg = _cfg(finetune_steps=60)
    handle = finetune(backbone, images, cfg)
    assert handle is backbone
    assert backbone.param_hash() != before
    trace = handle.training_log
    assert len(trace) == 60
    # The attacker's whole job is to memorize; early >> late on average.
    assert np.mean(trace[-10:]) < np.mean(trace[:10])


def test_finetune_zero_steps_leaves_weights(rng):
    backbone = create_backbone("toy-small")
    before = backbone.param_hash()
    handle = finetune(backbone, _images(rng), _cfg(finetune_steps=0))
    assert handle.param_hash() == before
    assert handle.training_log == []


def test_finetune_refuses_protection_backbone(rng):
    backbone = create_backbone("toy-small")
    backbone.role = "protect"
    with pytest.raises(ValueError):
        finetune(backbone, _images(rng), _cfg())


def test_finetune_requires_images():
    backbone = create_backbone("toy-small")
    with pytest.raises(ValueError):
        finetune(backbone, [], _cfg())


def test_finetune_cross_attention_scope_only_touches_attention(rng):
    backbone = create_backbone("toy-small")
    images = _images(rng)
    before_attn = backbone.param_hash()
    before_rest = backbone.param_hash_excluding(set(backbone.layer_ids))
    finetune(backbone, images, _cfg(train_scope="cross_attention"))
    assert backbone.param_hash() != before_attn
    assert backbone.param_hash_excluding(set(backbone.layer_ids)) == before_rest


def test_finetune_full_scope_touches_non_attention_weights(rng):
    backbone = create_backbone("toy-small")
    before_rest = backbone.param_hash_excluding(set(backbone.layer_ids))
    finetune(backbone, _images(rng), _cfg(train_scope="full"))
    assert backbone.param_hash_excluding(set(backbone.layer_ids)) != before_rest


def test_finetune_accepts_precomputed_class_examples(rng):
    images = _images(rng)
    cfg = _cfg()
    a = create_backbone("toy-small")
    class_ex = generate_class_examples(
        a, cfg.prior_prompt, cfg.n_class_examples,
        seed=derive_seed(cfg.seed, "mimic-class"),
        sample_steps=cfg.class_sample_steps)
    finetune(a, images, cfg, class_examples=class_ex)

    b = create_backbone("toy-small")
    finetune(b, images, cfg)
    assert a.param_hash() == b.param_hash()


def test_finetune_without_prior_skips_class_examples(rng):
    backbone = create_backbone("toy-small")
    handle = finetune(backbone, _images(rng), _cfg(prior_weight=0.0))
    assert len(handle.training_log) == 4


def test_finetune_diverged_raises(rng, monkeypatch):
    backbone = create_backbone("toy-small")
    import styleshield.mimic as mimic_mod
    import torch

    def bad_loss(*args, **kwargs):
        return torch.tensor(float("nan"), requires_grad=True)

    monkeypatch.setattr(mimic_mod, "dreambooth_loss", bad_loss)
    with pytest.raises(TrainingDivergedError):
        finetune(backbone, _images(rng), _cfg(prior_weight=0.0))


def test_generate_one_image_per_prompt_with_metadata(rng):
    backbone = create_backbone("toy-small")
    cfg = _cfg(prompts=("A cat", "A boat"))
    finetune(backbone, _images(rng), cfg)
    out = generate(backbone, cfg)
    assert len(out) == 2
    for img, prompt in zip(out, cfg.prompts):
        assert img.meta["prompt"] == prompt
        assert img.meta["template"] == GENERATION_TEMPLATE.format(
            prompt=prompt, token=cfg.pseudo_token)
        np.testing.assert_array_equal(
            img.data, np.round(img.data * 255) / 255)


def test_generate_is_seed_deterministic(rng):
    images = _images(rng)
    cfg = _cfg()
    a = finetune(create_backbone("toy-small"), images, cfg)
    first = generate(a, cfg)
    second = generate(a, cfg)
    for x, y in zip(first, second):
        np.testing.assert_array_equal(x.data, y.data)


def test_finetune_deterministic_across_fresh_backbones(rng):
    images = _images(rng)
    cfg = _cfg()
    a = finetune(create_backbone("toy-small"), images, cfg)
    b = finetune(create_backbone("toy-small"), images, cfg)
    assert a.param_hash() == b.param_hash()
    assert a.training_log == b.training_log
    for x, y in zip(generate(a, cfg), generate(b, cfg)):
        np.testing.assert_array_equal(x.data, y.data)

"""Attacker simulation: fine-tune on an artist subset, then generate.

The attacker takes 3 to 5 images (clean or protected), binds their
style to a pseudo-token by class-prior fine-tuning, and samples content
prompts through the template "<prompt> in <pseudo_token> style". How
well those samples match the artist is what the protection is trying
to ruin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .backend import ddim_sample
from .errors import TrainingDivergedError
from .images import quantize_to_uint8_grid
from .protect import dreambooth_loss, generate_class_examples
from .seeding import derive_seed, np_rng

TRAIN_SCOPES = ("full", "cross_attention")
GENERATION_TEMPLATE = "{prompt} in {token} style"

DEFAULT_PROMPTS = (
    "A boy riding a bicycle on a sunny street",
    "A cat sitting on a windowsill",
    "A lighthouse overlooking the sea",
)


@dataclass(frozen=True)
class MimicryConfig:
    """Attacker hyperparameters.

    These are conventions, not published values, so every report that
    cites a protection number also records the attacker settings that
    produced it.
    """

    pseudo_token: str = "sks"
    finetune_steps: int = 200
    learning_rate: float = 1e-3
    prompts: tuple = DEFAULT_PROMPTS
    seed: int = 9222
    prior_weight: float = 1.0
    prior_prompt: str = "a painting"
    train_scope: str = "full"
    n_class_examples: int = 100
    class_sample_steps: int = 8
    generation_steps: int = 8

    def __post_init__(self):
        if not self.prompts:
            raise ValueError("prompts must be nonempty")
        if not self.pseudo_token or " " in self.pseudo_token:
            raise ValueError("pseudo_token must be a single nonempty token")
        if self.train_scope not in TRAIN_SCOPES:
            raise ValueError(f"unknown train_scope {self.train_scope!r}")
        if self.finetune_steps < 0:
            raise ValueError("finetune_steps must be >= 0")
        template = GENERATION_TEMPLATE.format(prompt="x", token=self.pseudo_token)
        if self.pseudo_token not in template:
            raise ValueError("pseudo_token must appear in the generation template")

    @property
    def instance_prompt(self) -> str:
        return f"a painting in {self.pseudo_token} style"


def finetune(backbone, images: list, cfg: MimicryConfig,
             class_examples: list | None = None):
    """Class-prior fine-tune of `backbone` in place; returns the handle.

    The handle must not be the protection engine's instance (that job
    owns its backbone exclusively); pipeline code marks its protection
    backbone with role="protect" and this refuses it. A step count of
    zero leaves the parameters untouched. The loss trace is attached
    as `backbone.training_log`.
    """
    if getattr(backbone, "role", None) == "protect":
        raise ValueError(
            "refusing to fine-tune the protection engine's backbone; "
            "use a fresh handle for the attacker"
        )
    if not images:
        raise ValueError("finetune needs at least one image")

    if cfg.prior_weight > 0 and class_examples is None:
        class_examples = generate_class_examples(
            backbone, cfg.prior_prompt, cfg.n_class_examples,
            seed=derive_seed(cfg.seed, "mimic-class"),
            sample_steps=cfg.class_sample_steps)

    if cfg.train_scope == "full":
        backbone.set_trainable_full()
    else:
        backbone.set_trainable(set(backbone.layer_ids))
    optimizer = torch.optim.Adam(backbone.trainable_parameters(),
                                 lr=cfg.learning_rate)
    embeddings = (
        backbone.embed_prompt(cfg.instance_prompt),
        backbone.embed_prompt(cfg.prior_prompt) if cfg.prior_weight > 0 else None,
    )
    rng = np_rng(derive_seed(cfg.seed, "mimic-finetune"))

    trace = []
    for step in range(cfg.finetune_steps):
        image = images[step % len(images)]
        class_example = None
        if cfg.prior_weight > 0:
            class_example = class_examples[step % len(class_examples)]
        loss = dreambooth_loss(backbone, image, class_example, cfg,
                               rng=rng, embeddings=embeddings)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(
                f"fine-tuning loss became non-finite at step {step}"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        trace.append(value)

    backbone.training_log = trace
    return backbone


def generate(handle, cfg: MimicryConfig) -> list:
    """One image per prompt from the fine-tuned handle, seed-deterministic.

    Each output is quantized to the 8-bit grid so in-memory values equal
    what a save/load round trip would produce, and carries its prompt
    and template in metadata.
    """
    out = []
    for prompt in cfg.prompts:
        text = GENERATION_TEMPLATE.format(prompt=prompt, token=cfg.pseudo_token)
        emb = handle.embed_prompt(text)
        image, _ = ddim_sample(
            handle, emb, seed=derive_seed(cfg.seed, "mimic-generate", prompt),
            num_steps=cfg.generation_steps)
        image = quantize_to_uint8_grid(image)
        image.meta.update({"prompt": prompt, "template": text})
        out.append(image)
    return out

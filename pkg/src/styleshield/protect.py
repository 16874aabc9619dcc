"""Budget-constrained adversarial protection of artwork images.

The optimizer alternates two phases per outer iteration:

  (a) fine-tune only the selected cross-attention layers on the current
      protected images under the class-prior training objective, and
  (b) projected signed-gradient ascent on a pixel-space perturbation
      that degrades that same objective, with the model frozen.

The perturbation lives on the [0, 1] pixel scale under an L-infinity
budget, and the backbone's weights are restored on exit so protection
never leaks model edits into later stages.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .backend import ddim_sample
from .errors import DimensionMismatchError, MissingClassExamplesError
from .images import ImageTensor, image_hash, load_image, quantize_to_uint8_grid, save_image
from .seeding import derive_seed, np_rng

log = logging.getLogger(__name__)

_DTYPE = torch.float64

# Reduction used by every denoising loss in the package. Recorded here
# so reported loss values are interpretable across backbones.
LOSS_REDUCTION = "mean"


@dataclass(frozen=True)
class ProtectConfig:
    """Knobs of the protection optimizer.

    budget: L-infinity bound on the pixel perturbation, in (0, 1]; a
        zero budget is accepted and short-circuits to a warned no-op.
    step_size: PGD step; None resolves to budget / 10.
    prior_weight: weight of the class-prior loss term.
    ascent_includes_prior: whether the ascent objective keeps the prior
        term (the descent objective always does).
    selected_layers: cross-attention layers the inner fine-tune may touch.
    """

    budget: float = 0.05
    step_size: float | None = None
    outer_iters: int = 40
    inner_finetune_steps: int = 3
    pgd_steps_per_outer: int = 1
    prior_weight: float = 1.0
    selected_layers: frozenset = frozenset()
    instance_prompt: str = "a painting in sks style"
    prior_prompt: str = "a painting"
    seed: int = 9222
    finetune_lr: float = 1e-3
    n_class_examples: int = 100
    class_sample_steps: int = 8
    ascent_includes_prior: bool = True
    quantize_output: bool = True

    def __post_init__(self):
        if not 0.0 <= self.budget <= 1.0:
            raise ValueError("budget must lie in [0, 1]")
        alpha = self.resolved_step_size()
        if self.budget > 0 and not 0.0 < alpha <= self.budget:
            raise ValueError("step_size must satisfy 0 < alpha <= budget")
        if self.outer_iters < 0:
            raise ValueError("outer_iters must be >= 0")
        if self.inner_finetune_steps < 0 or self.pgd_steps_per_outer < 0:
            raise ValueError("phase step counts must be >= 0")
        if self.prior_weight < 0:
            raise ValueError("prior_weight must be >= 0")

    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return float(self.step_size)
        return float(self.budget) / 10.0

    def with_layers(self, layers) -> "ProtectConfig":
        return replace(self, selected_layers=frozenset(layers))


@dataclass(frozen=True)
class Perturbation:
    """An L-infinity bounded pixel-space delta."""

    delta: np.ndarray
    budget: float

    def __post_init__(self):
        arr = np.asarray(self.delta, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("perturbation contains non-finite values")
        if arr.size and float(np.max(np.abs(arr))) > self.budget + 1e-12:
            raise ValueError(
                f"perturbation exceeds its budget: "
                f"{float(np.max(np.abs(arr))):.6g} > {self.budget:.6g}"
            )
        object.__setattr__(self, "delta", arr)

    def linf(self) -> float:
        return float(np.max(np.abs(self.delta))) if self.delta.size else 0.0

    def apply(self, clean: ImageTensor) -> ImageTensor:
        out = np.clip(clean.data + self.delta, 0.0, 1.0)
        return ImageTensor(out, provenance="protected", meta=dict(clean.meta))


@dataclass
class ProtectLog:
    """Per-outer-iteration trace plus run-level diagnostics."""

    finetune_loss: list = field(default_factory=list)
    adv_loss: list = field(default_factory=list)
    delta_linf: list = field(default_factory=list)
    wall_time_s: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    skipped_pgd_steps: int = 0
    total_s: float = 0.0

    def outer_iterations(self) -> int:
        return len(self.adv_loss)


def _to_pixels(image) -> torch.Tensor:
    """(3, H, W) float64 tensor from an ImageTensor or a torch tensor."""
    if isinstance(image, torch.Tensor):
        return image.to(_DTYPE)
    return torch.from_numpy(np.transpose(image.data, (2, 0, 1))).to(_DTYPE)


def ldm_loss(backbone, z0, c, t: int, eps) -> torch.Tensor:
    """Mean-reduced squared error between eps and the model's prediction.

    z0 may be a LatentImage or a torch latent tensor; eps must match
    its shape. The result keeps gradients to any tensor inputs.
    """
    z = z0 if isinstance(z0, torch.Tensor) else torch.from_numpy(z0.data).to(_DTYPE)
    e = eps if isinstance(eps, torch.Tensor) else torch.from_numpy(
        np.asarray(eps, dtype=np.float64))
    e = e.to(_DTYPE)
    if e.shape != z.shape:
        raise DimensionMismatchError(
            f"eps shape {tuple(e.shape)} must match latent {tuple(z.shape)}"
        )
    ab = backbone.schedule.alpha_bar(t)
    z_t = np.sqrt(ab) * z + np.sqrt(1.0 - ab) * e
    pred, _ = backbone.predict_noise_tensor(z_t, t, c)
    return ((e - pred) ** 2).mean()


def draw_noise(backbone, rng: np.random.Generator):
    """One (t, eps) pair for a denoising loss; consumption is fixed-size
    so paired runs stay aligned regardless of image content."""
    t = int(rng.integers(0, backbone.schedule.num_steps))
    eps = rng.standard_normal(backbone.latent_geometry)
    return t, eps


def dreambooth_loss(backbone, instance, class_example, cfg: ProtectConfig,
                    *, rng: np.random.Generator | None = None,
                    draws=None, embeddings=None) -> torch.Tensor:
    """Instance denoising loss plus prior_weight times the class prior loss.

    Each term gets its own independently sampled (t, eps); pass `draws`
    as ((t, eps), (t_prior, eps_prior)) to pin them, or `rng` to sample.
    `embeddings` can carry precomputed (instance, prior) prompt
    embeddings to avoid re-encoding inside optimization loops.
    """
    if draws is None:
        if rng is None:
            raise ValueError("dreambooth_loss needs either draws or rng")
        inst_draw = draw_noise(backbone, rng)
        prior_draw = draw_noise(backbone, rng) if cfg.prior_weight > 0 else None
    else:
        inst_draw, prior_draw = draws

    if embeddings is None:
        c_inst = backbone.embed_prompt(cfg.instance_prompt)
        c_prior = backbone.embed_prompt(cfg.prior_prompt) if cfg.prior_weight > 0 else None
    else:
        c_inst, c_prior = embeddings

    z_inst = backbone.encode_tensor(_to_pixels(instance))
    t, eps = inst_draw
    total = ldm_loss(backbone, z_inst, c_inst, t, eps)

    if cfg.prior_weight > 0:
        if class_example is None:
            raise MissingClassExamplesError(
                "prior_weight > 0 requires a class example image"
            )
        if prior_draw is None:
            raise ValueError("prior draw missing while prior_weight > 0")
        z_prior = backbone.encode_tensor(_to_pixels(class_example))
        t_p, eps_p = prior_draw
        total = total + cfg.prior_weight * ldm_loss(
            backbone, z_prior, c_prior, t_p, eps_p)
    return total


def pgd_ascent_step(delta: Perturbation, grad: np.ndarray, alpha: float,
                    clean: ImageTensor) -> Perturbation:
    """One signed-gradient ascent step with budget and validity projection.

    A non-finite gradient skips the step (returning delta unchanged)
    rather than poisoning the perturbation; callers doing their own
    bookkeeping should test finiteness first.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != delta.delta.shape or grad.shape != clean.data.shape:
        raise DimensionMismatchError(
            f"gradient shape {grad.shape} must match delta "
            f"{delta.delta.shape} and clean image {clean.data.shape}"
        )
    if not np.all(np.isfinite(grad)):
        log.warning("skipping PGD step: non-finite gradient")
        return delta
    stepped = delta.delta + alpha * np.sign(grad)
    stepped = np.clip(stepped, -delta.budget, delta.budget)
    stepped = np.clip(stepped, -clean.data, 1.0 - clean.data)
    return Perturbation(delta=stepped, budget=delta.budget)


def quantize_perturbation(delta: Perturbation) -> Perturbation:
    """Snap to the 1/255 grid, truncating toward zero.

    Truncation never grows a coordinate's magnitude, so the budget
    bound survives; and a grid-aligned delta added to a grid-aligned
    clean image survives an 8-bit round trip bit-for-bit.
    """
    grid = np.trunc(delta.delta * 255.0) / 255.0
    return Perturbation(delta=grid, budget=delta.budget)


def generate_class_examples(backbone, prior_prompt: str, n: int,
                            seed: int = 9222, sample_steps: int = 8,
                            cache_dir=None) -> list:
    """Draw n prior-class images from the backbone's current weights.

    Outputs are always quantized to the 8-bit grid so a cached load is
    value-identical to a fresh generation. Caching is per (index) file
    under cache_dir; existing files are trusted and read back.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    emb = backbone.embed_prompt(prior_prompt)
    out = []
    for i in range(n):
        path = None
        if cache_dir is not None:
            path = cache_dir / f"class_{i:04d}.png"
            if path.exists():
                out.append(load_image(path, provenance="generated"))
                continue
        image, _ = ddim_sample(
            backbone, emb, seed=derive_seed(seed, "class-example", str(i)),
            num_steps=sample_steps)
        image = quantize_to_uint8_grid(image)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_image(image, path)
        out.append(image)
    return out


def protect(images: list, backbone, cfg: ProtectConfig,
            class_examples: list | None = None):
    """Optimize one perturbation per image; returns (protected, log).

    Weight handling: the selected layers are fine-tuned while the
    perturbations are optimized, and the full parameter state is
    restored before returning, so the backbone leaves this function
    exactly as it entered.
    """
    if not images:
        raise ValueError("protect needs at least one image")
    plog = ProtectLog()
    if cfg.budget == 0.0:
        msg = "budget is zero: returning clean images unmodified"
        log.warning(msg)
        plog.warnings.append(msg)
        return [ImageTensor(img.data.copy(), provenance="protected",
                            meta=dict(img.meta)) for img in images], plog
    if cfg.outer_iters == 0:
        return [ImageTensor(img.data.copy(), provenance="protected",
                            meta=dict(img.meta)) for img in images], plog
    if not cfg.selected_layers:
        raise ValueError("cfg.selected_layers must be nonempty")

    shape = images[0].data.shape
    for img in images:
        if img.data.shape != shape:
            raise DimensionMismatchError("all images must share one shape")

    if cfg.prior_weight > 0:
        if class_examples is None:
            class_examples = generate_class_examples(
                backbone, cfg.prior_prompt, cfg.n_class_examples,
                seed=cfg.seed, sample_steps=cfg.class_sample_steps)
        if not class_examples:
            raise MissingClassExamplesError(
                "prior_weight > 0 but the class example list is empty"
            )
    else:
        class_examples = []

    alpha = cfg.resolved_step_size()
    snapshot = backbone.save_state()
    entry_mask = set(backbone.trainable_mask)
    backbone.set_trainable(cfg.selected_layers)
    optimizer = torch.optim.Adam(backbone.trainable_parameters(),
                                 lr=cfg.finetune_lr)
    embeddings = (
        backbone.embed_prompt(cfg.instance_prompt),
        backbone.embed_prompt(cfg.prior_prompt) if cfg.prior_weight > 0 else None,
    )
    ascent_cfg = cfg if cfg.ascent_includes_prior else replace(cfg, prior_weight=0.0)

    rng = np_rng(derive_seed(cfg.seed, "protect"))
    deltas = [Perturbation(np.zeros(shape), cfg.budget) for _ in images]
    clean_pixels = [_to_pixels(img) for img in images]
    n_img = len(images)

    def class_for(step: int):
        return class_examples[step % len(class_examples)] if class_examples else None

    step_counter = 0
    start = time.perf_counter()
    try:
        for _ in range(cfg.outer_iters):
            iter_start = time.perf_counter()

            ft_losses = []
            for _ in range(cfg.inner_finetune_steps):
                i = step_counter % n_img
                x = clean_pixels[i] + torch.from_numpy(deltas[i].delta.transpose(2, 0, 1))
                loss = dreambooth_loss(
                    backbone, x.detach(), class_for(step_counter), cfg,
                    rng=rng, embeddings=embeddings)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                ft_losses.append(float(loss.detach()))
                step_counter += 1

            adv_losses = []
            for _ in range(cfg.pgd_steps_per_outer):
                for i in range(n_img):
                    d = torch.from_numpy(
                        deltas[i].delta.transpose(2, 0, 1)).requires_grad_(True)
                    x = clean_pixels[i] + d
                    loss = dreambooth_loss(
                        backbone, x, class_for(step_counter), ascent_cfg,
                        rng=rng, embeddings=embeddings)
                    grad = torch.autograd.grad(loss, d)[0]
                    adv_losses.append(float(loss.detach()))
                    grad_hwc = grad.numpy().transpose(1, 2, 0)
                    if not np.all(np.isfinite(grad_hwc)):
                        plog.skipped_pgd_steps += 1
                        plog.warnings.append(
                            f"non-finite PGD gradient on image {i}; step skipped")
                        continue
                    deltas[i] = pgd_ascent_step(deltas[i], grad_hwc, alpha, images[i])

            plog.finetune_loss.append(
                float(np.mean(ft_losses)) if ft_losses else float("nan"))
            plog.adv_loss.append(
                float(np.mean(adv_losses)) if adv_losses else float("nan"))
            plog.delta_linf.append(max(d.linf() for d in deltas))
            plog.wall_time_s.append(time.perf_counter() - iter_start)
    finally:
        backbone.load_state(snapshot)
        backbone.set_trainable(entry_mask)

    plog.total_s = time.perf_counter() - start
    if cfg.quantize_output:
        deltas = [quantize_perturbation(d) for d in deltas]
    protected = [d.apply(img) for d, img in zip(deltas, images)]
    if cfg.quantize_output:
        # Re-snap the sum of two grid-aligned floats so in-memory pixels
        # equal a PNG save/load round trip bit for bit.
        protected = [quantize_to_uint8_grid(img) for img in protected]
    return protected, plog


def protection_sidecar(cfg: ProtectConfig, plog: ProtectLog,
                       image: ImageTensor, version: str) -> dict:
    """Metadata written alongside each protected image."""
    return {
        "budget": cfg.budget,
        "step_size": cfg.resolved_step_size(),
        "outer_iters": cfg.outer_iters,
        "inner_finetune_steps": cfg.inner_finetune_steps,
        "pgd_steps_per_outer": cfg.pgd_steps_per_outer,
        "prior_weight": cfg.prior_weight,
        "selected_layers": sorted(
            l.canonical_name for l in cfg.selected_layers),
        "instance_prompt": cfg.instance_prompt,
        "prior_prompt": cfg.prior_prompt,
        "seed": cfg.seed,
        "loss_reduction": LOSS_REDUCTION,
        "skipped_pgd_steps": plog.skipped_pgd_steps,
        "image_sha256": image_hash(image),
        "version": version,
    }

"""Per-layer style/content sensitivity probe.

Two measurements over captured cross-attention maps, per enumerated layer:

* activation mode: mean attention mass a prompt's style tokens receive,
  versus its content tokens; and
* alignment mode: cosine similarity between a 768-d style descriptor and
  the span-masked attention map resampled to 768 points.

The divergence (style minus content) is what the layer selector ranks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .backend import AttentionRecord, ddim_sample
from .backend.types import PromptEmbedding
from .errors import (
    DimensionMismatchError,
    EmptySpanError,
    OverlappingSpansError,
    PhraseNotFoundError,
    ZeroNormError,
)
from .seeding import derive_seed, np_rng

DESCRIPTOR_DIM = 768


@dataclass(frozen=True)
class ProbePrompt:
    """A probe sentence with one content word and one style phrase."""

    text: str
    content_word: str
    style_phrase: str

    def __post_init__(self):
        for name, phrase in (("content_word", self.content_word),
                             ("style_phrase", self.style_phrase)):
            if not phrase:
                raise PhraseNotFoundError(f"{name} is empty")
            if phrase not in self.text:
                raise PhraseNotFoundError(
                    f"{name} {phrase!r} does not occur in prompt text {self.text!r}"
                )


@dataclass(frozen=True)
class StyleDescriptor:
    """A 768-d style embedding from some descriptor provider."""

    vector: np.ndarray
    provider: str

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.shape != (DESCRIPTOR_DIM,):
            raise DimensionMismatchError(
                f"style descriptor must have shape ({DESCRIPTOR_DIM},), got {vec.shape}"
            )
        if not np.all(np.isfinite(vec)):
            raise ZeroNormError("style descriptor contains non-finite entries")
        if float(np.linalg.norm(vec)) == 0.0:
            raise ZeroNormError("style descriptor has zero norm")
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class LayerScore:
    layer: object
    style_mean: float
    content_mean: float
    divergence: float
    csd_style_sim: float | None = None
    csd_content_sim: float | None = None
    mode: str = "activation"


@dataclass(frozen=True)
class ProbeConfig:
    """Settings for a probe run.

    timesteps: schedule steps at which attention is captured; None means
        the single midpoint T // 2.
    sample_steps: DDIM steps used to draw the per-prompt sample whose
        denoising is probed.
    mode: which divergence drives ranking, "activation" or "alignment".
        Alignment needs a descriptor provider and falls back to
        activation (with a warning) without one.
    """

    timesteps: tuple | None = None
    sample_steps: int = 8
    seed: int = 9222
    mode: str = "activation"

    def __post_init__(self):
        if self.mode not in ("activation", "alignment"):
            raise ValueError(f"unknown probe mode {self.mode!r}")
        if self.sample_steps < 1:
            raise ValueError("sample_steps must be >= 1")


@dataclass
class ProbeReport:
    scores: list
    mode: str
    evaluations: int
    timesteps: tuple
    provider: str | None
    warnings: list = field(default_factory=list)
    span_note: str = "span mass is the mean over span tokens"

    def to_rows(self) -> list:
        rows = []
        for s in self.scores:
            rows.append({
                "layer": s.layer.canonical_name,
                "style_mean": s.style_mean,
                "content_mean": s.content_mean,
                "divergence": s.divergence,
                "csd_style_sim": "" if s.csd_style_sim is None else s.csd_style_sim,
                "csd_content_sim": "" if s.csd_content_sim is None else s.csd_content_sim,
                "mode": s.mode,
            })
        return rows

    def save_csv(self, path) -> None:
        rows = self.to_rows()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)


def _find_subsequence(seq: list, frag: list, start: int = 0) -> int:
    n, m = len(seq), len(frag)
    for i in range(start, n - m + 1):
        if seq[i:i + m] == frag:
            return i
    return -1


def resolve_token_spans(prompt: ProbePrompt, backbone) -> PromptEmbedding:
    """Embed the prompt and locate its style/content token index spans.

    The style phrase anchors first (first occurrence); the content word
    takes its first occurrence disjoint from the style span. Spans are
    contiguous index tuples into the padded token sequence.
    """
    emb = backbone.embed_prompt(prompt.text)
    seq = list(emb.tokens)

    def span_for(name: str, phrase: str, avoid: set) -> tuple:
        frag = backbone.tokenize(phrase)
        if not frag:
            raise PhraseNotFoundError(f"{name} {phrase!r} tokenizes to no tokens")
        start = 0
        while True:
            idx = _find_subsequence(seq, frag, start)
            if idx < 0:
                if start == 0:
                    raise PhraseNotFoundError(
                        f"{name} {phrase!r} not found in the tokenized prompt "
                        f"(it may have been truncated)"
                    )
                raise OverlappingSpansError(
                    f"every occurrence of {name} {phrase!r} overlaps the style span"
                )
            span = tuple(range(idx, idx + len(frag)))
            if not avoid.intersection(span):
                return span
            start = idx + 1

    style = span_for("style_phrase", prompt.style_phrase, set())
    content = span_for("content_word", prompt.content_word, set(style))
    return PromptEmbedding(
        tokens=emb.tokens,
        embedding=emb.embedding,
        token_spans={"style": style, "content": content},
        text=prompt.text,
    )


def activation_strength(record: AttentionRecord, span) -> float:
    """Mean attention mass on `span`, over heads, queries and span tokens."""
    span = tuple(span)
    if len(span) == 0:
        raise EmptySpanError("activation_strength needs a nonempty token span")
    if max(span) >= record.n_tokens or min(span) < 0:
        raise DimensionMismatchError(
            f"span {span} out of range for {record.n_tokens} tokens"
        )
    return float(record.map[:, :, list(span)].mean())


def project_attention(record: AttentionRecord, span=None) -> np.ndarray:
    """Head-averaged map, optionally span-masked, resampled to 768 points.

    Columns outside `span` are zeroed before flattening (the map stays
    row-major), then 1-D linear interpolation resamples the flat vector
    to DESCRIPTOR_DIM points with both endpoints preserved.
    """
    mean_map = record.map.mean(axis=0)
    if span is not None:
        span = tuple(span)
        if len(span) == 0:
            raise EmptySpanError("projection span must be nonempty")
        if max(span) >= record.n_tokens or min(span) < 0:
            raise DimensionMismatchError(
                f"span {span} out of range for {record.n_tokens} tokens"
            )
        mask = np.zeros(record.n_tokens)
        mask[list(span)] = 1.0
        mean_map = mean_map * mask[None, :]
    flat = mean_map.reshape(-1)
    n = flat.size
    if n < 2:
        raise DimensionMismatchError(
            "attention map must flatten to at least 2 values to resample"
        )
    grid = np.linspace(0.0, float(n - 1), DESCRIPTOR_DIM)
    return np.interp(grid, np.arange(n, dtype=np.float64), flat)


def descriptor_alignment(desc: StyleDescriptor, projected: np.ndarray) -> float:
    """Cosine similarity between a style descriptor and a projected map."""
    vec = np.asarray(projected, dtype=np.float64)
    if vec.shape != (DESCRIPTOR_DIM,):
        raise DimensionMismatchError(
            f"projected vector must have shape ({DESCRIPTOR_DIM},), got {vec.shape}"
        )
    na = float(np.linalg.norm(desc.vector))
    nb = float(np.linalg.norm(vec))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine similarity undefined for zero-norm input")
    return float(np.clip(np.dot(desc.vector, vec) / (na * nb), -1.0, 1.0))


def hashed_phrase_descriptor(seed: int = 9222):
    """Deterministic stand-in descriptor provider for the alignment path.

    Maps each phrase to a fixed unit-free Gaussian vector seeded from
    the phrase text, so alignment-mode plumbing is exercisable without
    a learned style-embedding model. The vectors carry no semantics;
    treat alignment scores from this provider as plumbing output only.
    """

    name = f"hashed-phrase-{seed}"

    def provider(phrase: str) -> StyleDescriptor:
        rng = np_rng(derive_seed(seed, "phrase-descriptor", phrase))
        return StyleDescriptor(rng.standard_normal(DESCRIPTOR_DIM), provider=name)

    provider.provider_id = name
    return provider


def run_probe(backbone, prompts, descriptor_provider=None,
              config: ProbeConfig | None = None) -> ProbeReport:
    """Score every enumerated layer over the given prompts.

    For each prompt a sample is drawn with the prompt's own derived seed
    (so results do not depend on list order), re-noised to each probe
    timestep, and denoised once with capture on. Scores are means over
    all (prompt, timestep) evaluations, in backbone enumeration order.

    descriptor_provider: callable style_phrase -> StyleDescriptor, or
    None for activation-only scoring. A provider failure downgrades the
    whole run to activation mode and logs a warning instead of raising.
    """
    cfg = config or ProbeConfig()
    if not prompts:
        raise ValueError("run_probe needs at least one prompt")
    timesteps = cfg.timesteps
    if timesteps is None:
        timesteps = (backbone.schedule.num_steps // 2,)
    timesteps = tuple(int(t) for t in timesteps)
    for t in timesteps:
        backbone.schedule.check_timestep(t)

    mode = cfg.mode
    warnings = []
    if mode == "alignment" and descriptor_provider is None:
        warnings.append("alignment mode requested without a descriptor "
                        "provider; falling back to activation")
        mode = "activation"

    layer_ids = list(backbone.layer_ids)
    index = {lid: i for i, lid in enumerate(layer_ids)}
    sims_valid = descriptor_provider is not None

    # Each (prompt, timestep) evaluation derives its seeds from the prompt
    # text alone and is reduced in sorted key order below, so reported
    # scores are bit-identical under any reordering of the prompt list.
    contributions = []
    for prompt in prompts:
        emb = resolve_token_spans(prompt, backbone)
        style_span = emb.token_spans["style"]
        content_span = emb.token_spans["content"]

        desc = None
        if sims_valid:
            try:
                desc = descriptor_provider(prompt.style_phrase)
            except Exception as exc:  # provider outage must not kill the probe
                warnings.append(
                    f"descriptor provider failed for {prompt.style_phrase!r} "
                    f"({exc}); continuing in activation-only mode"
                )
                sims_valid = False
                if mode == "alignment":
                    mode = "activation"

        sample_seed = derive_seed(cfg.seed, "probe-sample", prompt.text)
        image, _ = ddim_sample(backbone, emb, seed=sample_seed,
                               num_steps=cfg.sample_steps)
        z0 = backbone.encode(image)
        for t in timesteps:
            eps_rng = np_rng(derive_seed(cfg.seed, "probe-eps", prompt.text, str(t)))
            eps = eps_rng.standard_normal(z0.data.shape)
            z_t = backbone.add_noise(z0, t, eps)
            _, records = backbone.predict_noise(z_t, t, emb, capture=True)
            row_style = np.zeros(len(layer_ids))
            row_content = np.zeros(len(layer_ids))
            row_sim_style = np.zeros(len(layer_ids))
            row_sim_content = np.zeros(len(layer_ids))
            for record in records:
                i = index[record.layer]
                row_style[i] = activation_strength(record, style_span)
                row_content[i] = activation_strength(record, content_span)
                if desc is not None:
                    row_sim_style[i] = descriptor_alignment(
                        desc, project_attention(record, span=style_span))
                    row_sim_content[i] = descriptor_alignment(
                        desc, project_attention(record, span=content_span))
            key = (prompt.text, prompt.content_word, prompt.style_phrase, t)
            contributions.append(
                (key, row_style, row_content, row_sim_style, row_sim_content))

    contributions.sort(key=lambda item: item[0])
    acc_style = np.zeros(len(layer_ids))
    acc_content = np.zeros(len(layer_ids))
    acc_sim_style = np.zeros(len(layer_ids))
    acc_sim_content = np.zeros(len(layer_ids))
    for _, row_style, row_content, row_sim_style, row_sim_content in contributions:
        acc_style += row_style
        acc_content += row_content
        acc_sim_style += row_sim_style
        acc_sim_content += row_sim_content
    evaluations = len(contributions)

    acc_style /= evaluations
    acc_content /= evaluations
    scores = []
    for i, lid in enumerate(layer_ids):
        sim_s = acc_sim_style[i] / evaluations if sims_valid else None
        sim_c = acc_sim_content[i] / evaluations if sims_valid else None
        if mode == "alignment":
            divergence = float(sim_s - sim_c)
        else:
            divergence = float(acc_style[i] - acc_content[i])
        scores.append(LayerScore(
            layer=lid,
            style_mean=float(acc_style[i]),
            content_mean=float(acc_content[i]),
            divergence=divergence,
            csd_style_sim=None if sim_s is None else float(sim_s),
            csd_content_sim=None if sim_c is None else float(sim_c),
            mode=mode,
        ))
    provider_id = None
    if sims_valid:
        provider_id = getattr(descriptor_provider, "provider_id", "custom")
    return ProbeReport(scores=scores, mode=mode, evaluations=evaluations,
                       timesteps=timesteps, provider=provider_id,
                       warnings=warnings)

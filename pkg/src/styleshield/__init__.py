"""Protect artwork against style mimicry by fine-tuned diffusion models.

The package probes which cross-attention layers of a diffusion
backbone respond to style tokens, fine-tunes only those while
optimizing a budget-bounded pixel perturbation against them, simulates
the mimicry attack the defense targets, and scores both invisibility
of the perturbation and degradation of the attacker's output.
"""

from .backend import (
    AttentionRecord,
    CrossAttnLayerId,
    DiffusionBackbone,
    LatentImage,
    PromptEmbedding,
    ToyBackbone,
    create_backbone,
    ddim_sample,
    ddim_timesteps,
)
from .errors import (
    CaptureUnsupportedError,
    DimensionMismatchError,
    DuplicateLayerError,
    EmptySpanError,
    MissingClassExamplesError,
    OverlappingSpansError,
    PhraseNotFoundError,
    PresetUnavailableError,
    ProviderUnavailableError,
    SchemaMismatchError,
    StyleShieldError,
    TimestepRangeError,
    TrainingDivergedError,
    UnknownLayerError,
    ZeroNormError,
)
from .evalsuite import (
    EvalReport,
    MetricProvider,
    TRANSFORM_TAGS,
    apply_transform,
    artfid,
    csd_cosine,
    evaluate_run,
    fid,
    gaussian_blur,
    get_provider,
    jpeg_transform,
    lpips,
    psnr,
    ssim,
    stub_provider,
)
from .fixtures import make_fixture_dataset
from .images import ImageTensor, image_hash, load_image, save_image, save_sidecar
from .mimic import MimicryConfig, finetune, generate
from .pipeline import (
    DatasetManifest,
    ManifestEntry,
    RunConfig,
    STAGES,
    compare_report,
    ingest,
    run_pipeline,
    runconfig_from_dict,
)
from .probe import (
    DESCRIPTOR_DIM,
    LayerScore,
    ProbeConfig,
    ProbePrompt,
    ProbeReport,
    StyleDescriptor,
    activation_strength,
    descriptor_alignment,
    hashed_phrase_descriptor,
    project_attention,
    resolve_token_spans,
    run_probe,
)
from .protect import (
    Perturbation,
    ProtectConfig,
    ProtectLog,
    dreambooth_loss,
    generate_class_examples,
    pgd_ascent_step,
    protect,
    quantize_perturbation,
)
from .seeding import derive_seed, np_rng, torch_rng
from .select import (
    PRESETS,
    SelectionPolicy,
    rank_layers,
    select,
    selection_manifest,
)

__all__ = [
    "AttentionRecord",
    "CaptureUnsupportedError",
    "CrossAttnLayerId",
    "DESCRIPTOR_DIM",
    "DatasetManifest",
    "DiffusionBackbone",
    "DimensionMismatchError",
    "DuplicateLayerError",
    "EmptySpanError",
    "EvalReport",
    "ImageTensor",
    "LatentImage",
    "LayerScore",
    "ManifestEntry",
    "MetricProvider",
    "MimicryConfig",
    "MissingClassExamplesError",
    "OverlappingSpansError",
    "PRESETS",
    "Perturbation",
    "PhraseNotFoundError",
    "PresetUnavailableError",
    "ProbeConfig",
    "ProbePrompt",
    "ProbeReport",
    "PromptEmbedding",
    "ProtectConfig",
    "ProtectLog",
    "ProviderUnavailableError",
    "RunConfig",
    "STAGES",
    "SchemaMismatchError",
    "SelectionPolicy",
    "StyleDescriptor",
    "StyleShieldError",
    "TRANSFORM_TAGS",
    "TimestepRangeError",
    "ToyBackbone",
    "TrainingDivergedError",
    "UnknownLayerError",
    "ZeroNormError",
    "activation_strength",
    "apply_transform",
    "artfid",
    "compare_report",
    "create_backbone",
    "csd_cosine",
    "ddim_sample",
    "ddim_timesteps",
    "derive_seed",
    "descriptor_alignment",
    "dreambooth_loss",
    "evaluate_run",
    "fid",
    "finetune",
    "gaussian_blur",
    "generate",
    "generate_class_examples",
    "get_provider",
    "hashed_phrase_descriptor",
    "image_hash",
    "ingest",
    "jpeg_transform",
    "load_image",
    "lpips",
    "make_fixture_dataset",
    "np_rng",
    "pgd_ascent_step",
    "project_attention",
    "protect",
    "psnr",
    "quantize_perturbation",
    "rank_layers",
    "resolve_token_spans",
    "run_pipeline",
    "run_probe",
    "runconfig_from_dict",
    "save_image",
    "save_sidecar",
    "select",
    "selection_manifest",
    "ssim",
    "stub_provider",
    "torch_rng",
]

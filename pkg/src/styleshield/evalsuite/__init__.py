"""Invisibility, style-protection, efficiency and robustness scoring."""

from .metrics import artfid, csd_cosine, fid, lpips, psnr, ssim
from .providers import MetricProvider, get_provider, stub_provider
from .report import EvalReport, TRANSFORM_TAGS, evaluate_run
from .transforms import apply_transform, gaussian_blur, jpeg_transform

__all__ = [
    "EvalReport",
    "MetricProvider",
    "TRANSFORM_TAGS",
    "apply_transform",
    "artfid",
    "csd_cosine",
    "evaluate_run",
    "fid",
    "gaussian_blur",
    "get_provider",
    "jpeg_transform",
    "lpips",
    "psnr",
    "ssim",
]

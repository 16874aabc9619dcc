"""Embedding and perceptual-distance providers.

Metrics that need learned networks (LPIPS, style descriptors,
inception features) go through a MetricProvider so the rest of the
suite never imports heavyweight model code. The stub provider gives
deterministic, closed-form stand-ins built from fixed random
projections; real providers are optional downloads resolved by id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ProviderUnavailableError
from ..images import ImageTensor
from ..seeding import derive_seed

STYLE_DIM = 768
INCEPTION_DIM = 32
_STUB_THUMB = 16  # stub embeddings look at a 16x16 thumbnail


@dataclass(frozen=True)
class MetricProvider:
    """Bundle of the three learned callables the eval suite consumes.

    lpips_fn(a, b) -> float distance; style_embed_fn(img) -> (768,)
    array; inception_embed_fn(img) -> fixed-dim array. Any may be None
    when a metric should be reported as omitted.
    """

    provider_id: str
    lpips_fn: object = None
    style_embed_fn: object = None
    inception_embed_fn: object = None
    style_dim: int = STYLE_DIM
    inception_dim: int = INCEPTION_DIM
    details: dict = field(default_factory=dict)


def _thumbnail(img: ImageTensor, size: int = _STUB_THUMB) -> np.ndarray:
    """Linear point-sampled resize; linear in pixel values, so stub
    distances inherit clean monotonicity properties."""
    data = img.data
    h, w = data.shape[:2]
    rows = np.linspace(0.0, h - 1.0, size)
    cols = np.linspace(0.0, w - 1.0, size)
    r0 = np.floor(rows).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    fr = (rows - r0)[:, None, None]
    c0 = np.floor(cols).astype(int)
    c1 = np.minimum(c0 + 1, w - 1)
    fc = (cols - c0)[None, :, None]
    top = data[r0][:, c0] * (1 - fc) + data[r0][:, c1] * fc
    bot = data[r1][:, c0] * (1 - fc) + data[r1][:, c1] * fc
    return (top * (1 - fr) + bot * fr).reshape(-1)


def _projection(seed: int, rows: int, cols: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, cols)) / np.sqrt(cols)


def stub_provider(seed: int = 9222) -> MetricProvider:
    """Deterministic provider with no external weights.

    All three callables are fixed random projections of a 16x16
    thumbnail: the perceptual distance is an L2 in projection space,
    and the two embeddings are plain linear maps. Fast, seeded and
    reproducible, which is what desk-scale tests need.
    """
    flat = 3 * _STUB_THUMB * _STUB_THUMB
    lpips_proj = _projection(derive_seed(seed, "stub-lpips"), 64, flat)
    style_proj = _projection(derive_seed(seed, "stub-style"), STYLE_DIM, flat)
    incep_proj = _projection(derive_seed(seed, "stub-inception"), INCEPTION_DIM, flat)

    def lpips_fn(a: ImageTensor, b: ImageTensor) -> float:
        return float(np.linalg.norm(lpips_proj @ (_thumbnail(a) - _thumbnail(b))))

    def style_embed_fn(img: ImageTensor) -> np.ndarray:
        return style_proj @ _thumbnail(img)

    def inception_embed_fn(img: ImageTensor) -> np.ndarray:
        return incep_proj @ _thumbnail(img)

    return MetricProvider(
        provider_id=f"stub-{seed}",
        lpips_fn=lpips_fn,
        style_embed_fn=style_embed_fn,
        inception_embed_fn=inception_embed_fn,
        details={"thumbnail": _STUB_THUMB, "seed": seed},
    )


def real_provider(device: str = "cpu") -> MetricProvider:
    """LPIPS + CLIP-style embeddings from their published implementations.

    Requires the optional 'metrics' extra (torch-based models downloaded
    on first use, cache directory honoring STYLESHIELD_PROVIDER_CACHE).
    """
    try:
        import lpips as lpips_pkg  # noqa: F401
        import torchvision  # noqa: F401
    except ImportError as exc:
        raise ProviderUnavailableError(
            "real metric providers need the 'metrics' extra "
            "(lpips, torchvision)"
        ) from exc
    import torch

    net = lpips_pkg.LPIPS(net="alex").to(device)
    weights = torchvision.models.Inception_V3_Weights.DEFAULT
    inception = torchvision.models.inception_v3(weights=weights).to(device)
    inception.fc = torch.nn.Identity()
    inception.eval()

    def to_tensor(img: ImageTensor):
        arr = np.transpose(img.data, (2, 0, 1)).astype(np.float32)
        return torch.from_numpy(arr).unsqueeze(0).to(device)

    def lpips_fn(a: ImageTensor, b: ImageTensor) -> float:
        with torch.no_grad():
            return float(net(to_tensor(a) * 2 - 1, to_tensor(b) * 2 - 1))

    def inception_embed_fn(img: ImageTensor) -> np.ndarray:
        with torch.no_grad():
            x = torch.nn.functional.interpolate(
                to_tensor(img), size=(299, 299), mode="bilinear",
                align_corners=False)
            return inception(x)[0].cpu().numpy().astype(np.float64)

    # A published style-descriptor checkpoint is not bundled; style
    # similarity falls back to the stub projection unless a caller
    # installs one and swaps this field.
    stub = stub_provider()
    return MetricProvider(
        provider_id="real-lpips-inception",
        lpips_fn=lpips_fn,
        style_embed_fn=stub.style_embed_fn,
        inception_embed_fn=inception_embed_fn,
        inception_dim=2048,
        details={"lpips": "alex", "inception": "v3"},
    )


def get_provider(provider_id: str) -> MetricProvider:
    """Resolve a provider by the id stored in run configs."""
    if provider_id.startswith("stub"):
        seed = 9222
        if "-" in provider_id:
            tail = provider_id.split("-", 1)[1]
            if tail.isdigit():
                seed = int(tail)
        return stub_provider(seed)
    if provider_id.startswith("real"):
        return real_provider()
    raise ProviderUnavailableError(f"unknown provider id {provider_id!r}")

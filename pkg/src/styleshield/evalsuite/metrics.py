"""Image-pair and image-set metrics.

PSNR and SSIM are self-contained; LPIPS, the style cosine score and
the Fréchet distance need a MetricProvider for their embeddings.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg, signal

from ..errors import DimensionMismatchError, ProviderUnavailableError, ZeroNormError
from ..images import ImageTensor

log = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0
_COV_SHRINKAGE = 1e-10


def _pair_arrays(a: ImageTensor, b: ImageTensor):
    if a.data.shape != b.data.shape:
        raise DimensionMismatchError(
            f"image shapes differ: {a.data.shape} vs {b.data.shape}"
        )
    return a.data, b.data


def psnr(a: ImageTensor, b: ImageTensor) -> float:
    """Peak signal-to-noise ratio in dB, peak 1.0, capped at 100."""
    x, y = _pair_arrays(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    one_d = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(one_d, one_d)
    return kernel / kernel.sum()


def ssim(a: ImageTensor, b: ImageTensor, window: int = 11,
         k1: float = 0.01, k2: float = 0.03, sigma: float = 1.5) -> float:
    """Mean local structural similarity over valid Gaussian windows.

    Images are reduced to grayscale by averaging channels; statistics
    use an 11-tap Gaussian window (sigma 1.5) and only fully-valid
    window positions contribute.
    """
    x, y = _pair_arrays(a, b)
    gray_x = x.mean(axis=2)
    gray_y = y.mean(axis=2)
    if min(gray_x.shape) < window:
        raise DimensionMismatchError(
            f"image {gray_x.shape} smaller than the {window}x{window} window"
        )
    kernel = _gaussian_window(window, sigma)

    def smooth(img):
        return signal.correlate2d(img, kernel, mode="valid")

    c1 = k1 ** 2
    c2 = k2 ** 2
    mu_x = smooth(gray_x)
    mu_y = smooth(gray_y)
    var_x = smooth(gray_x * gray_x) - mu_x ** 2
    var_y = smooth(gray_y * gray_y) - mu_y ** 2
    cov = smooth(gray_x * gray_y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def lpips(a: ImageTensor, b: ImageTensor, provider) -> float:
    """Perceptual distance through the provider's network (or stub)."""
    if provider is None or provider.lpips_fn is None:
        raise ProviderUnavailableError("no LPIPS provider configured")
    _pair_arrays(a, b)
    return float(provider.lpips_fn(a, b))


def _style_embeddings(images, provider) -> np.ndarray:
    if provider is None or provider.style_embed_fn is None:
        raise ProviderUnavailableError("no style-embedding provider configured")
    vecs = np.stack([np.asarray(provider.style_embed_fn(img), dtype=np.float64)
                     for img in images])
    norms = np.linalg.norm(vecs, axis=1)
    if np.any(norms == 0.0):
        raise ZeroNormError("a style embedding has zero norm")
    return vecs / norms[:, None]


def csd_cosine(generated: list, originals: list, provider) -> float:
    """Mean over all (generated, original) pairs of style-embedding cosine."""
    if not generated or not originals:
        raise ValueError("csd_cosine needs nonempty image sets")
    gen = _style_embeddings(generated, provider)
    orig = _style_embeddings(originals, provider)
    return float(np.mean(gen @ orig.T))


def fid(embeds_a: np.ndarray, embeds_b: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two embedding sets.

    Sample moments use the unbiased covariance (ddof 1). A singular
    cross-product gets diagonal shrinkage, which is logged because it
    perturbs the value.
    """
    a = np.asarray(embeds_a, dtype=np.float64)
    b = np.asarray(embeds_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(
            f"embedding sets must be (n, d) with matching d, "
            f"got {a.shape} and {b.shape}"
        )
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 embeddings per side for covariance")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))

    diff = mu_a - mu_b
    prod, _ = linalg.sqrtm(cov_a @ cov_b, disp=False)
    if not np.all(np.isfinite(prod)):
        log.warning("singular covariance product in FID; applying "
                    "%g * I shrinkage", _COV_SHRINKAGE)
        eye = np.eye(cov_a.shape[0]) * _COV_SHRINKAGE
        prod, _ = linalg.sqrtm((cov_a + eye) @ (cov_b + eye), disp=False)
    if np.iscomplexobj(prod):
        prod = prod.real
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b)
                  - 2.0 * np.trace(prod))
    return max(value, 0.0)


def artfid(generated: list, originals: list, provider) -> float:
    """(1 + Fréchet distance) times (1 + mean paired perceptual distance).

    The Fréchet term runs on the provider's inception-style embeddings;
    the perceptual term pairs generated[i] with originals[i % len].
    """
    if provider is None or provider.inception_embed_fn is None:
        raise ProviderUnavailableError("no inception-embedding provider configured")
    if len(generated) < 2 or len(originals) < 2:
        raise ValueError("artfid needs at least 2 images per side")
    gen = np.stack([np.asarray(provider.inception_embed_fn(img), dtype=np.float64)
                    for img in generated])
    orig = np.stack([np.asarray(provider.inception_embed_fn(img), dtype=np.float64)
                     for img in originals])
    fid_term = fid(gen, orig)
    paired = [lpips(g, originals[i % len(originals)], provider)
              for i, g in enumerate(generated)]
    return (1.0 + fid_term) * (1.0 + float(np.mean(paired)))

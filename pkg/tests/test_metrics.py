"""Tests for the metric suite: PSNR, SSIM, LPIPS, style cosine, FID, ArtFID."""

from __future__ import annotations

import numpy as np
import pytest

from styleshield.errors import (
    DimensionMismatchError,
    ProviderUnavailableError,
    ZeroNormError,
)
from styleshield.evalsuite.metrics import artfid, csd_cosine, fid, lpips, psnr, ssim
from styleshield.evalsuite.providers import MetricProvider, _projection, _thumbnail
from styleshield.images import ImageTensor
from styleshield.seeding import derive_seed


def _image(rng, size: int = 16) -> ImageTensor:
    return ImageTensor(rng.uniform(size=(size, size, 3)), provenance="clean")


# ---------------------------------------------------------------------- psnr

def test_psnr_identical_is_capped_at_100(rng):
    img = _image(rng)
    assert psnr(img, img) == 100.0


def test_psnr_uniform_one_lsb_offset(rng):
    base = ImageTensor(np.full((16, 16, 3), 0.5), provenance="clean")
    offset = ImageTensor(base.data + 1.0 / 255.0, provenance="clean")
    assert psnr(base, offset) == pytest.approx(10.0 * np.log10(255.0 ** 2),
                                               abs=1e-9)


def test_psnr_matches_two_loop_mse_oracle(rng):
    a, b = _image(rng), _image(rng)
    total = 0.0
    count = 0
    for i in range(16):
        for j in range(16):
            for c in range(3):
                total += (a.data[i, j, c] - b.data[i, j, c]) ** 2
                count += 1
    expected = 10.0 * np.log10(1.0 / (total / count))
    assert psnr(a, b) == pytest.approx(expected, abs=1e-9)


def test_psnr_shape_mismatch(rng):
    with pytest.raises(DimensionMismatchError):
        psnr(_image(rng, 16), _image(rng, 8))


# ---------------------------------------------------------------------- ssim

def _reference_ssim(x: np.ndarray, y: np.ndarray, window: int = 11,
                    sigma: float = 1.5, k1: float = 0.01,
                    k2: float = 0.03) -> float:
    """Direct sliding-window SSIM, written independently of the module."""
    gx, gy = x.mean(axis=2), y.mean(axis=2)
    coords = np.arange(window, dtype=np.float64) - (window - 1) / 2.0
    one_d = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    w = np.outer(one_d, one_d)
    w /= w.sum()
    c1, c2 = k1 ** 2, k2 ** 2
    values = []
    for i in range(gx.shape[0] - window + 1):
        for j in range(gx.shape[1] - window + 1):
            px = gx[i:i + window, j:j + window]
            py = gy[i:i + window, j:j + window]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * px * px).sum() - mx * mx
            vy = (w * py * py).sum() - my * my
            cxy = (w * px * py).sum() - mx * my
            values.append(((2 * mx * my + c1) * (2 * cxy + c2))
                          / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(values))


def test_ssim_identical_is_one(rng):
    img = _image(rng)
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_matches_independent_implementation(rng):
    for _ in range(5):
        a, b = _image(rng), _image(rng)
        assert ssim(a, b) == pytest.approx(
            _reference_ssim(a.data, b.data), abs=1e-4)


def test_ssim_inverted_high_contrast_is_low(rng):
    pattern = np.zeros((16, 16, 3))
    pattern[::2, :, :] = 1.0
    a = ImageTensor(pattern, provenance="clean")
    b = ImageTensor(1.0 - pattern, provenance="clean")
    assert ssim(a, b) < 0.5


def test_ssim_rejects_images_smaller_than_window(rng):
    with pytest.raises(DimensionMismatchError):
        ssim(_image(rng, 8), _image(rng, 8))


# --------------------------------------------------------------------- lpips

def test_lpips_identical_is_zero(provider, rng):
    img = _image(rng, 64)
    assert lpips(img, img, provider) == 0.0


def test_lpips_matches_stub_closed_form(provider, rng):
    a, b = _image(rng, 64), _image(rng, 64)
    proj = _projection(derive_seed(9222, "stub-lpips"), 64, 3 * 16 * 16)
    expected = float(np.linalg.norm(proj @ (_thumbnail(a) - _thumbnail(b))))
    assert lpips(a, b, provider) == pytest.approx(expected, rel=1e-12)


def test_lpips_monotone_in_noise_scale(provider, rng):
    a = _image(rng, 64)
    noise = rng.standard_normal(a.data.shape)
    near = ImageTensor(np.clip(a.data + 0.1 * noise, 0, 1), provenance="clean")
    far = ImageTensor(np.clip(a.data + 0.2 * noise, 0, 1), provenance="clean")
    assert lpips(a, near, provider) <= lpips(a, far, provider)


def test_lpips_requires_provider(rng):
    img = _image(rng, 64)
    with pytest.raises(ProviderUnavailableError):
        lpips(img, img, None)


# ---------------------------------------------------------------- csd cosine

def test_csd_cosine_identical_sets_is_one(provider, rng):
    # The mean runs over all (generated, original) pairs, so the score is
    # exactly 1 when every pair's embeddings coincide.
    img = _image(rng, 64)
    assert csd_cosine([img], [img], provider) == pytest.approx(1.0)
    assert csd_cosine([img] * 3, [img] * 2, provider) == pytest.approx(1.0)


def _rigged_provider(mapping) -> MetricProvider:
    return MetricProvider(provider_id="rigged",
                          lpips_fn=None,
                          style_embed_fn=lambda img: mapping[id(img)],
                          inception_embed_fn=None,
                          details={})


def test_csd_cosine_orthogonal_embeddings_is_zero(rng):
    gen, orig = _image(rng), _image(rng)
    e1, e2 = np.zeros(768), np.zeros(768)
    e1[0] = 1.0
    e2[1] = 1.0
    provider = _rigged_provider({id(gen): e1, id(orig): e2})
    assert csd_cosine([gen], [orig], provider) == pytest.approx(0.0, abs=1e-15)


def test_csd_cosine_matches_four_pair_oracle(provider, rng):
    gen = [_image(rng, 64) for _ in range(2)]
    orig = [_image(rng, 64) for _ in range(2)]

    def unit_style(img):
        v = np.asarray(provider.style_embed_fn(img), dtype=np.float64)
        return v / np.linalg.norm(v)

    expected = np.mean([float(unit_style(g) @ unit_style(o))
                        for g in gen for o in orig])
    assert csd_cosine(gen, orig, provider) == pytest.approx(expected, rel=1e-12)


def test_csd_cosine_rejects_empty_and_zero_norm(provider, rng):
    img = _image(rng, 64)
    with pytest.raises(ValueError):
        csd_cosine([], [img], provider)
    rigged = _rigged_provider({id(img): np.zeros(768)})
    with pytest.raises(ZeroNormError):
        csd_cosine([img], [img], rigged)


# ----------------------------------------------------------------------- fid

def test_fid_analytic_one_dimensional_gaussians():
    # Exact sample moments: mean 0, unbiased variance 1.
    a = np.array([[-np.sqrt(0.5)], [np.sqrt(0.5)]])
    b = a + 1.0
    assert fid(a, b) == pytest.approx(1.0, abs=1e-6)


def test_fid_identical_sets_is_zero(rng):
    x = rng.standard_normal((10, 4))
    assert fid(x, x) == pytest.approx(0.0, abs=1e-9)


def test_fid_mean_shift_only(rng):
    x = rng.standard_normal((200, 3))
    y = x + np.array([2.0, 0.0, 0.0])
    assert fid(x, y) == pytest.approx(4.0, abs=1e-9)


def test_fid_validates_shapes(rng):
    with pytest.raises(DimensionMismatchError):
        fid(rng.standard_normal((5, 3)), rng.standard_normal((5, 4)))
    with pytest.raises(ValueError):
        fid(rng.standard_normal((1, 3)), rng.standard_normal((5, 3)))


# -------------------------------------------------------------------- artfid

def test_artfid_identical_sets_is_one(provider, rng):
    images = [_image(rng, 64) for _ in range(3)]
    assert artfid(images, images, provider) == pytest.approx(1.0, abs=1e-9)


def test_artfid_formula_wiring(provider, rng):
    gen = [_image(rng, 64) for _ in range(3)]
    orig = [_image(rng, 64) for _ in range(2)]
    embeds = lambda imgs: np.stack(
        [provider.inception_embed_fn(i) for i in imgs])
    fid_term = fid(embeds(gen), embeds(orig))
    paired = np.mean([lpips(g, orig[i % 2], provider)
                      for i, g in enumerate(gen)])
    expected = (1.0 + fid_term) * (1.0 + paired)
    assert artfid(gen, orig, provider) == pytest.approx(expected, rel=1e-12)


def test_artfid_needs_two_per_side(provider, rng):
    with pytest.raises(ValueError):
        artfid([_image(rng, 64)], [_image(rng, 64) for _ in range(2)], provider)

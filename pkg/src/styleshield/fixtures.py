"""Procedural fixture artists for desk-scale runs and tests.

Two synthetic "artists" with visually distinct, seeded textures: one
painted with layered sinusoidal interference, one with soft radial
blobs. Four images each, written as PNG so pixel values live exactly
on the 8-bit grid.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .images import ImageTensor, save_image
from .seeding import derive_seed, np_rng


def _wave_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for _ in range(4):
        fx, fy = rng.uniform(2.0, 9.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        color = rng.uniform(0.2, 1.0, size=3)
        img += wave[:, :, None] * color[None, None, :]
    img = (img - img.min()) / (img.max() - img.min() + 1e-12)
    return img


def _blob_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.full((size, size, 3), rng.uniform(0.1, 0.3, size=3)[None, None, :])
    for _ in range(6):
        cx, cy = rng.uniform(0, 1, size=2)
        radius = rng.uniform(0.08, 0.3)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * radius ** 2))
        color = rng.uniform(0.3, 1.0, size=3)
        img += blob[:, :, None] * color[None, None, :] * 0.5
    return np.clip(img / img.max(), 0.0, 1.0)


FIXTURE_ARTISTS = (
    ("wikiart_wavefield", _wave_texture),
    ("anita_bloomglass", _blob_texture),
)


def make_fixture_dataset(root: Path, images_per_artist: int = 4,
                         size: int = 64, seed: int = 9222) -> Path:
    """Write the fixture dataset under `root` and return it."""
    root = Path(root)
    if not 3 <= images_per_artist <= 5:
        raise ValueError("fixture artists must have 3 to 5 images")
    for artist, texture in FIXTURE_ARTISTS:
        folder = root / artist
        folder.mkdir(parents=True, exist_ok=True)
        for i in range(images_per_artist):
            rng = np_rng(derive_seed(seed, "fixture", artist, str(i)))
            img = ImageTensor(texture(rng, size))
            save_image(img, folder / f"{artist}_{i:02d}.png")
    return root

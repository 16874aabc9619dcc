"""Post-processing attacks a perturbation must survive."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from ..images import ImageTensor


def jpeg_transform(img: ImageTensor, quality: int = 75) -> ImageTensor:
    """Lossy encode/decode round trip at the given quality factor."""
    arr = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    with Image.open(buf) as decoded:
        out = np.asarray(decoded.convert("RGB"), dtype=np.float64) / 255.0
    meta = dict(img.meta)
    meta["transform"] = f"jpeg{quality}"
    return ImageTensor(out, provenance=img.provenance, meta=meta)


def _gaussian_taps(kernel: int, sigma: float) -> np.ndarray:
    half = (kernel - 1) // 2
    coords = np.arange(kernel, dtype=np.float64) - half
    taps = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return taps / taps.sum()


def gaussian_blur(img: ImageTensor, kernel: int = 3,
                  sigma: float = 0.05) -> ImageTensor:
    """Separable Gaussian blur with mirror padding at the borders.

    Tap weights are normalized to sum exactly 1, so a constant image
    passes through unchanged.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {kernel}")
    taps = _gaussian_taps(kernel, sigma)
    half = (kernel - 1) // 2
    data = img.data
    if half > 0:
        padded = np.pad(data, ((half, half), (half, half), (0, 0)), mode="reflect")
        rows = sum(taps[i] * padded[i:i + data.shape[0], :, :]
                   for i in range(kernel))
        out = sum(taps[j] * rows[:, j:j + data.shape[1], :]
                  for j in range(kernel))
    else:
        out = data.copy()
    meta = dict(img.meta)
    meta["transform"] = f"blur{kernel}"
    return ImageTensor(np.clip(out, 0.0, 1.0), provenance=img.provenance, meta=meta)


def apply_transform(img: ImageTensor, tag: str) -> ImageTensor:
    """Dispatch by report tag: none, jpeg75 or blur3."""
    if tag == "none":
        return img
    if tag == "jpeg75":
        return jpeg_transform(img, quality=75)
    if tag == "blur3":
        return gaussian_blur(img, kernel=3, sigma=0.05)
    raise ValueError(f"unknown transform tag {tag!r}")

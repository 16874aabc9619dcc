"""Image container and lossless disk round-trips.

Images travel through the toolkit as H x W x C float64 arrays on [0, 1]
with a provenance tag. Disk persistence is PNG only: the protective
perturbation lives in low-order pixel bits, so a lossy format would
silently destroy it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

PROVENANCE_TAGS = ("clean", "protected", "generated")


@dataclass
class ImageTensor:
    """H x W x C image on [0, 1] plus provenance metadata.

    Attributes:
        data: float64 array, shape (H, W, C), values in [0, 1].
        provenance: one of "clean", "protected", "generated".
        meta: free-form metadata (prompt, source file, config hash, ...).
    """

    data: np.ndarray
    provenance: str = "clean"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"image must be H x W x C, got shape {self.data.shape}")
        if self.provenance not in PROVENANCE_TAGS:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")
        if self.data.min() < -1e-9 or self.data.max() > 1 + 1e-9:
            raise ValueError(
                f"image values outside [0, 1]: [{self.data.min():.4g}, {self.data.max():.4g}]"
            )
        np.clip(self.data, 0.0, 1.0, out=self.data)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def with_data(self, data: np.ndarray, provenance: str | None = None) -> "ImageTensor":
        return ImageTensor(
            data=data,
            provenance=provenance or self.provenance,
            meta=dict(self.meta),
        )


def quantize_to_uint8_grid(data):
    """Snap float pixels to the 8-bit grid k/255 (exact PNG round-trip).

    Accepts a raw array or an ImageTensor and returns the same kind.
    """
    if isinstance(data, ImageTensor):
        return data.with_data(quantize_to_uint8_grid(data.data))
    return np.round(np.clip(data, 0.0, 1.0) * 255.0) / 255.0


def load_image(path: str | Path, provenance: str = "clean") -> ImageTensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageTensor(arr, provenance=provenance, meta={"source": str(path)})


def save_image(img: ImageTensor, path: str | Path) -> Path:
    """Write a PNG (lossless). Pixels are quantized to the 8-bit grid."""
    path = Path(path)
    if path.suffix.lower() not in (".png",):
        raise ValueError(f"protected outputs must be PNG, got {path.suffix!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    return path


def save_sidecar(path: str | Path, payload: dict) -> Path:
    """Write the per-image metadata JSON next to a saved image."""
    side = Path(str(path) + ".json")
    side.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return side


def image_hash(img: ImageTensor) -> str:
    """Stable content hash of the quantized pixel grid."""
    import hashlib

    arr = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    return hashlib.sha256(arr.tobytes()).hexdigest()

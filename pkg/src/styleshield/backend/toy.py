"""Deterministic toy latent-diffusion backbone.

A miniature denoiser with real cross-attention layers, small enough that
every contract in the toolkit is exercisable on a laptop in seconds.
Three layouts ship:

    toy-small     3 cross-attention layers, latent 4x8x8, text dim 32
    toy-sd15      16 cross-attention layers named like the SD-1.5
                  U-Net (6 down / 1 mid / 9 up), token length 77
    toy-identity  identity pixel codec (exact encode/decode round trip),
                  3 cross-attention layers

Weights are fixed: they are generated once by scripts/gen_toy_weights.py
from seeded numpy streams and shipped as .npz files in the package, so
every install sees bit-identical parameters. All arithmetic is float64.
"""

from __future__ import annotations

import hashlib
import itertools
from importlib import resources
from typing import Iterable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import (
    CaptureUnsupportedError,
    DimensionMismatchError,
    UnknownLayerError,
)
from ..images import ImageTensor
from .schedule import NoiseSchedule, forward_process
from .text import ToyTextEncoder, ToyTokenizer
from .types import (
    AttentionRecord,
    BlockKind,
    CrossAttnLayerId,
    LatentImage,
    PromptEmbedding,
)

_TIME_DIM = 16
_TIME_HIDDEN = 32
_DTYPE = torch.float64

# Stage tuples are (block_index, attention_count, channel_multiplier).
# down_resample[i]: downsample after down stage i; up_resample[j]:
# upsample before up stage j. Where no resample separates two stages
# their channel counts must match.
_LAYOUTS = {
    "toy-small": dict(
        image_size=64,
        factor=8,
        latent_channels=4,
        base_channels=16,
        text_dim=32,
        max_length=16,
        vocab_size=512,
        heads=2,
        timesteps=100,
        down=[(0, 1, 1)],
        mid=(0, 1, 2),
        up=[(0, 1, 1)],
        down_resample=[True],
        up_resample=[True],
    ),
    "toy-sd15": dict(
        image_size=64,
        factor=8,
        latent_channels=4,
        base_channels=16,
        text_dim=32,
        max_length=77,
        vocab_size=512,
        heads=2,
        timesteps=100,
        down=[(0, 2, 1), (1, 2, 2), (2, 2, 2)],
        mid=(0, 1, 2),
        up=[(1, 3, 2), (2, 3, 2), (3, 3, 1)],
        down_resample=[True, True, False],
        up_resample=[False, True, True],
    ),
    "toy-identity": dict(
        image_size=64,
        factor=1,
        latent_channels=3,
        base_channels=16,
        text_dim=32,
        max_length=16,
        vocab_size=512,
        heads=2,
        timesteps=100,
        down=[(0, 1, 1)],
        mid=(0, 1, 2),
        up=[(0, 1, 1)],
        down_resample=[True],
        up_resample=[True],
    ),
}


def _module_key(layer: CrossAttnLayerId) -> str:
    # nn.ModuleDict keys cannot contain '.'
    return layer.canonical_name.replace(".", "#")


def _timestep_embedding(frac: torch.Tensor, dim: int = _TIME_DIM) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -torch.arange(half, dtype=_DTYPE) * (np.log(10000.0) / max(half - 1, 1))
    )
    angles = frac.to(_DTYPE)[:, None] * 1000.0 * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class CrossAttention(nn.Module):
    """Multi-head attention from spatial positions to text tokens."""

    def __init__(self, channels: int, text_dim: int, heads: int):
        super().__init__()
        if channels % heads:
            raise ValueError("channels must divide evenly into heads")
        self.heads = heads
        self.d_head = channels // heads
        self.to_q = nn.Linear(channels, channels, bias=False, dtype=_DTYPE)
        self.to_k = nn.Linear(text_dim, channels, bias=False, dtype=_DTYPE)
        self.to_v = nn.Linear(text_dim, channels, bias=False, dtype=_DTYPE)
        self.to_out = nn.Linear(channels, channels, bias=False, dtype=_DTYPE)

    def forward(self, tokens: torch.Tensor, text: torch.Tensor):
        b, n, c = tokens.shape
        length = text.shape[1]
        q = self.to_q(tokens).reshape(b, n, self.heads, self.d_head).transpose(1, 2)
        k = self.to_k(text).reshape(b, length, self.heads, self.d_head).transpose(1, 2)
        v = self.to_v(text).reshape(b, length, self.heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / np.sqrt(self.d_head)
        probs = scores.softmax(dim=-1)
        out = (probs @ v).transpose(1, 2).reshape(b, n, c)
        return self.to_out(out), probs


class AttnUnit(nn.Module):
    """Norm + conv + timestep bias + one cross-attention, residual adds.

    Group norms at the unit input and before the attention projections
    keep activation variance flat through arbitrarily deep stacks; the
    residual stream itself is never normalized.
    """

    def __init__(self, channels: int, text_dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(4, channels, dtype=_DTYPE)
        self.conv = nn.Conv2d(channels, channels, 3, padding=1, dtype=_DTYPE)
        self.time_proj = nn.Linear(_TIME_HIDDEN, channels, dtype=_DTYPE)
        self.norm2 = nn.GroupNorm(4, channels, dtype=_DTYPE)
        self.attn = CrossAttention(channels, text_dim, heads)

    def forward(self, h, t_emb, text, sink, layer):
        y = self.conv(self.norm1(h)) + self.time_proj(t_emb)[:, :, None, None]
        y = F.silu(y)
        b, c, hh, ww = y.shape
        tokens = self.norm2(y).flatten(2).transpose(1, 2)
        attn_out, probs = self.attn(tokens, text)
        if sink is not None:
            sink.append((layer, probs))
        y = y + attn_out.transpose(1, 2).reshape(b, c, hh, ww)
        return h + y


class ToyDenoiser(nn.Module):
    """Tiny U-Net style noise predictor with enumerable cross-attention."""

    def __init__(self, layout: dict):
        super().__init__()
        base = layout["base_channels"]
        text_dim = layout["text_dim"]
        heads = layout["heads"]
        c_lat = layout["latent_channels"]

        self.layer_ids: list = []
        self.units = nn.ModuleDict()

        def make_stage(kind: BlockKind, block_index: int, n_attn: int, ch: int) -> list:
            layers = []
            for attn_index in range(n_attn):
                lid = CrossAttnLayerId(kind, block_index, attn_index)
                self.layer_ids.append(lid)
                self.units[_module_key(lid)] = AttnUnit(ch, text_dim, heads)
                layers.append(lid)
            return layers

        down_ch = [base * mult for (_, _, mult) in layout["down"]]
        mid_ch = base * layout["mid"][2]
        up_ch = [base * mult for (_, _, mult) in layout["up"]]

        self.conv_in = nn.Conv2d(c_lat, down_ch[0], 3, padding=1, dtype=_DTYPE)

        self._down_stages = []
        self.downsamplers = nn.ModuleDict()
        self._down_resample = list(layout["down_resample"])
        for i, (block_index, n_attn, _) in enumerate(layout["down"]):
            self._down_stages.append(make_stage(BlockKind.DOWN, block_index, n_attn, down_ch[i]))
            nxt = down_ch[i + 1] if i + 1 < len(down_ch) else mid_ch
            if self._down_resample[i]:
                self.downsamplers[str(i)] = nn.Conv2d(
                    down_ch[i], nxt, 3, stride=2, padding=1, dtype=_DTYPE
                )
            elif down_ch[i] != nxt:
                raise ValueError("channel mismatch across non-resampling stage boundary")

        self._mid_stage = make_stage(BlockKind.MID, layout["mid"][0], layout["mid"][1], mid_ch)

        self._up_stages = []
        self.upsamplers = nn.ModuleDict()
        self._up_resample = list(layout["up_resample"])
        prev = mid_ch
        for j, (block_index, n_attn, _) in enumerate(layout["up"]):
            if self._up_resample[j]:
                self.upsamplers[str(j)] = nn.Conv2d(prev, up_ch[j], 3, padding=1, dtype=_DTYPE)
            elif prev != up_ch[j]:
                raise ValueError("channel mismatch across non-resampling stage boundary")
            self._up_stages.append(make_stage(BlockKind.UP, block_index, n_attn, up_ch[j]))
            prev = up_ch[j]

        self.norm_out = nn.GroupNorm(4, prev, dtype=_DTYPE)
        self.conv_out = nn.Conv2d(prev, c_lat, 3, padding=1, dtype=_DTYPE)
        self.time_mlp = nn.Sequential(
            nn.Linear(_TIME_DIM, _TIME_HIDDEN, dtype=_DTYPE),
            nn.SiLU(),
            nn.Linear(_TIME_HIDDEN, _TIME_HIDDEN, dtype=_DTYPE),
        )

    def forward(self, z, t_frac, text, sink=None):
        t_emb = self.time_mlp(_timestep_embedding(t_frac))
        h = self.conv_in(z)
        skips = []
        for i, layers in enumerate(self._down_stages):
            for lid in layers:
                h = self.units[_module_key(lid)](h, t_emb, text, sink, lid)
            skips.append(h)
            if self._down_resample[i]:
                h = self.downsamplers[str(i)](h)
        for lid in self._mid_stage:
            h = self.units[_module_key(lid)](h, t_emb, text, sink, lid)
        for j, layers in enumerate(self._up_stages):
            if self._up_resample[j]:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamplers[str(j)](h)
            skip = skips.pop()
            if skip.shape == h.shape:
                h = h + skip
            for lid in layers:
                h = self.units[_module_key(lid)](h, t_emb, text, sink, lid)
        return self.conv_out(self.norm_out(h))


def _param_seed(layout_name: str, param_name: str) -> int:
    digest = hashlib.blake2b(f"{layout_name}:{param_name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def build_toy_weights(layout_name: str) -> dict:
    """Deterministic weight generation, one seeded stream per parameter.

    scripts/gen_toy_weights.py calls this to produce the shipped .npz
    files; tests call it to verify those files match the generator.
    """
    layout = _LAYOUTS[layout_name]
    denoiser = ToyDenoiser(layout)
    arrays = {}
    for name, param in sorted(denoiser.named_parameters(), key=lambda kv: kv[0]):
        rng = np.random.default_rng(_param_seed(layout_name, name))
        shape = tuple(param.shape)
        if param.ndim >= 2:
            fan_in = int(np.prod(shape[1:]))
            arrays[f"denoiser.{name}"] = rng.standard_normal(shape) * (2.0 / fan_in) ** 0.5
        elif "norm" in name and name.endswith(".weight"):
            arrays[f"denoiser.{name}"] = np.ones(shape, dtype=np.float64)
        else:
            arrays[f"denoiser.{name}"] = np.zeros(shape, dtype=np.float64)

    rng = np.random.default_rng(_param_seed(layout_name, "text.table"))
    arrays["text.table"] = ToyTextEncoder.init_table(layout["vocab_size"], layout["text_dim"], rng)

    if layout["factor"] > 1:
        rng = np.random.default_rng(_param_seed(layout_name, "codec.project"))
        unshuffled = 3 * layout["factor"] ** 2
        q, _ = np.linalg.qr(rng.standard_normal((unshuffled, unshuffled)))
        arrays["codec.project"] = q[: layout["latent_channels"]]
    return arrays


def _load_weights(layout_name: str) -> dict:
    fname = layout_name.replace("-", "_") + ".npz"
    ref = resources.files("styleshield.data").joinpath(fname)
    with ref.open("rb") as fh:
        npz = np.load(fh)
        return {k: npz[k].astype(np.float64) for k in npz.files}


_instance_counter = itertools.count()


class ToyBackbone:
    """Self-contained toy backbone. Implements `DiffusionBackbone`.

    The pixel codec is deterministic by construction: space-to-depth by
    the downsampling factor followed by a fixed orthonormal channel
    projection (its transpose decodes). toy-identity skips the
    projection entirely, so encode/decode round-trips exactly.
    """

    supports_capture = True

    def __init__(self, layout_name: str = "toy-small"):
        if layout_name not in _LAYOUTS:
            raise ValueError(f"unknown toy layout {layout_name!r}; options: {sorted(_LAYOUTS)}")
        layout = _LAYOUTS[layout_name]
        self.layout_name = layout_name
        self.identifier = f"{layout_name}#{next(_instance_counter):04d}"
        self.role: str | None = None
        self.image_size = layout["image_size"]
        self.downsample_factor = layout["factor"]
        lat_hw = layout["image_size"] // layout["factor"]
        self.latent_geometry = (layout["latent_channels"], lat_hw, lat_hw)
        self.latent_scale = 1.0
        self.schedule = NoiseSchedule.linear(layout["timesteps"])

        weights = _load_weights(layout_name)
        self.denoiser = ToyDenoiser(layout)
        state = {
            k[len("denoiser."):]: torch.from_numpy(v)
            for k, v in weights.items()
            if k.startswith("denoiser.")
        }
        self.denoiser.load_state_dict(state, strict=True)
        self.denoiser.eval()

        tokenizer = ToyTokenizer(layout["vocab_size"], layout["max_length"])
        self.text_encoder = ToyTextEncoder(tokenizer, layout["text_dim"], weights["text.table"])

        self._project = (
            torch.from_numpy(weights["codec.project"]) if self.downsample_factor > 1 else None
        )

        self.layer_ids = list(self.denoiser.layer_ids)
        self.trainable_mask: set = set()
        self.set_trainable(set())

    # ---------------------------------------------------------------- codec

    def _check_image(self, arr: np.ndarray) -> None:
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DimensionMismatchError(f"expected H x W x 3 image, got {arr.shape}")
        h, w = arr.shape[:2]
        f = self.downsample_factor
        if h % f or w % f:
            raise DimensionMismatchError(
                f"image dims {h}x{w} must be divisible by the backbone "
                f"downsampling factor {f}"
            )

    def encode_tensor(self, x: torch.Tensor) -> torch.Tensor:
        """Differentiable encode: x is (3, H, W) on [0, 1]."""
        x = x.to(_DTYPE).unsqueeze(0)
        if self.downsample_factor == 1:
            return x[0]
        cols = F.pixel_unshuffle(x, self.downsample_factor)
        z = torch.einsum("lc,bchw->blhw", self._project, cols)
        return z[0] * self.latent_scale

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:
        z = z.to(_DTYPE).unsqueeze(0) / self.latent_scale
        if self.downsample_factor == 1:
            return z[0]
        cols = torch.einsum("lc,blhw->bchw", self._project, z)
        return F.pixel_shuffle(cols, self.downsample_factor)[0]

    def encode(self, image: ImageTensor) -> LatentImage:
        self._check_image(image.data)
        x = torch.from_numpy(np.transpose(image.data, (2, 0, 1)))
        with torch.no_grad():
            z = self.encode_tensor(x)
        return LatentImage(z.numpy(), scale=self.latent_scale)

    def decode(self, latent: LatentImage) -> ImageTensor:
        z = torch.from_numpy(latent.data)
        with torch.no_grad():
            x = self.decode_tensor(z)
        arr = np.clip(np.transpose(x.numpy(), (1, 2, 0)), 0.0, 1.0)
        return ImageTensor(arr, provenance="generated")

    # ------------------------------------------------------------ diffusion

    def add_noise(self, z0: LatentImage, t: int, eps: np.ndarray) -> LatentImage:
        self.schedule.check_timestep(t)
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != z0.data.shape:
            raise DimensionMismatchError(
                f"eps shape {eps.shape} must match latent {z0.data.shape}"
            )
        z_t = forward_process(z0.data, eps, self.schedule.alpha_bar(t))
        return LatentImage(z_t, scale=z0.scale)

    def embed_prompt(self, text: str, token_spans: dict | None = None) -> PromptEmbedding:
        tokens, emb = self.text_encoder.embed_text(text)
        return PromptEmbedding(
            tokens=tokens, embedding=emb, token_spans=token_spans or {}, text=text
        )

    def tokenize(self, text: str) -> list:
        """Unpadded token ids; a fragment tokenizes identically in any context."""
        return self.text_encoder.tokenizer.tokenize(text)

    def _text_tensor(self, c: PromptEmbedding) -> torch.Tensor:
        if c.embedding.shape[1] != self.text_encoder.dim:
            raise DimensionMismatchError(
                f"prompt embedding dim {c.embedding.shape[1]} does not match "
                f"backbone text dim {self.text_encoder.dim}"
            )
        return torch.from_numpy(c.embedding).to(_DTYPE)

    def predict_noise_tensor(
        self, z_t: torch.Tensor, t: int, text, capture: bool = False
    ):
        """Differentiable noise prediction on torch tensors (single sample).

        `text` may be a PromptEmbedding or an already-converted (L, d) tensor.
        """
        self.schedule.check_timestep(t)
        if isinstance(text, PromptEmbedding):
            text = self._text_tensor(text)
        sink: list | None = [] if capture else None
        t_frac = torch.tensor([t / self.schedule.num_steps], dtype=_DTYPE)
        eps_hat = self.denoiser(z_t.unsqueeze(0), t_frac, text.unsqueeze(0), sink=sink)[0]
        records = None
        if capture:
            records = [
                AttentionRecord(layer=lid, map=probs[0].detach().numpy())
                for lid, probs in sink
            ]
        return eps_hat, records

    def predict_noise(
        self, z_t: LatentImage, t: int, c: PromptEmbedding, capture: bool = False
    ):
        """Noise prediction, optionally with per-layer attention records.

        Returns (prediction, records): prediction is a numpy array shaped
        like z_t; records is None unless capture is requested, else one
        AttentionRecord per enumerated layer, in enumeration order.
        """
        if capture and not self.supports_capture:
            raise CaptureUnsupportedError(
                f"backbone {self.identifier} lacks attention instrumentation"
            )
        z = torch.from_numpy(z_t.data)
        with torch.no_grad():
            eps_hat, records = self.predict_noise_tensor(
                z, t, self._text_tensor(c), capture=capture
            )
        return eps_hat.numpy(), records

    # ------------------------------------------------------------- training

    def _verify_layers(self, layers: Iterable[CrossAttnLayerId]) -> set:
        layers = set(layers)
        unknown = layers - set(self.layer_ids)
        if unknown:
            names = ", ".join(sorted(l.canonical_name for l in unknown))
            raise UnknownLayerError(f"layers not enumerated by this backbone: {names}")
        return layers

    def set_trainable(self, layers: Iterable[CrossAttnLayerId]) -> "ToyBackbone":
        """Freeze everything except the cross-attention projections of `layers`."""
        layers = self._verify_layers(layers)
        for param in self.denoiser.parameters():
            param.requires_grad_(False)
        for lid in layers:
            for param in self.denoiser.units[_module_key(lid)].attn.parameters():
                param.requires_grad_(True)
        self.trainable_mask = set(layers)
        return self

    def set_trainable_full(self) -> "ToyBackbone":
        """Unfreeze the whole denoiser (the attacker's default)."""
        for param in self.denoiser.parameters():
            param.requires_grad_(True)
        self.trainable_mask = set(self.layer_ids)
        return self

    def trainable_parameters(self) -> list:
        return [p for p in self.denoiser.parameters() if p.requires_grad]

    def save_state(self) -> dict:
        return {k: v.detach().clone() for k, v in self.denoiser.state_dict().items()}

    def load_state(self, state: dict) -> None:
        self.denoiser.load_state_dict(state, strict=True)

    def param_hash(self, layers: Iterable[CrossAttnLayerId] | None = None) -> str:
        """Hash of denoiser parameters, optionally restricted to given layers."""
        from .base import hash_tensors

        if layers is None:
            return hash_tensors(self.denoiser.state_dict().items())
        keys = [_module_key(lid) for lid in self._verify_layers(layers)]
        return hash_tensors(
            (name, tensor)
            for name, tensor in self.denoiser.state_dict().items()
            if any(name.startswith(f"units.{k}.attn.") for k in keys)
        )

    def param_hash_excluding(self, layers: Iterable[CrossAttnLayerId]) -> str:
        from .base import hash_tensors

        keys = [_module_key(lid) for lid in self._verify_layers(layers)]
        return hash_tensors(
            (name, tensor)
            for name, tensor in self.denoiser.state_dict().items()
            if not any(name.startswith(f"units.{k}.attn.") for k in keys)
        )

    def fresh(self) -> "ToyBackbone":
        """New instance of the same layout with the shipped initial weights."""
        return ToyBackbone(self.layout_name)

    def find_layer(self, canonical_name: str) -> CrossAttnLayerId:
        for lid in self.layer_ids:
            if lid.canonical_name == canonical_name:
                return lid
        raise UnknownLayerError(f"{canonical_name!r} not on backbone {self.identifier}")


def create_backbone(identifier: str):
    """Backbone factory keyed by config identifier string.

    Toy layouts are named directly; "sd" selects the default
    stable-diffusion checkpoint and "sd:<model_name>" a specific one.
    """
    if identifier in _LAYOUTS:
        return ToyBackbone(identifier)
    if identifier == "sd" or identifier.startswith("sd:"):
        from .sd import StableDiffusionBackbone

        if identifier == "sd":
            return StableDiffusionBackbone()
        return StableDiffusionBackbone(identifier.split(":", 1)[1])
    raise ValueError(f"unknown backbone identifier {identifier!r}")

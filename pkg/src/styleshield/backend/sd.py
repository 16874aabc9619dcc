"""Stable Diffusion 1.x binding.

Wraps a HuggingFace SD pipeline behind the same backbone contract the toy
layouts implement, so the rest of the package never branches on which
backbone is underneath.  Everything here imports lazily: the module can be
imported (and the class referenced) on machines without diffusers, and only
constructing a backbone raises.

Capture is implemented with attention processors that stash the softmaxed
cross-attention probabilities per enumerated layer.  Only cross-attention
(encoder_hidden_states is not None) is recorded; self-attention passes
through untouched.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import (
    CaptureUnsupportedError,
    DimensionMismatchError,
    ProviderUnavailableError,
    UnknownLayerError,
)
from ..images import ImageTensor
from .schedule import NoiseSchedule
from .types import AttentionRecord, CrossAttnLayerId, LatentImage, PromptEmbedding

_MODEL_DEFAULT = "runwayml/stable-diffusion-v1-5"

# Map from enumeration names to the diffusers module paths of the
# Transformer2DModel blocks that own each cross-attention.  SD1.x places
# cross-attention at attn2 of the first (only) transformer block.
_ATTN_SUBPATH = "transformer_blocks.0.attn2"


def _require_diffusers():
    try:
        import diffusers  # noqa: F401
        import torch  # noqa: F401
        import transformers  # noqa: F401
    except ImportError as exc:
        raise ProviderUnavailableError(
            "the stable-diffusion backbone needs diffusers, transformers and "
            "torch with CUDA or a patient CPU; install the 'sd' extra"
        ) from exc


def enumerate_sd_cross_attention(unet) -> list:
    """Walk a UNet2DConditionModel and list cross-attention owners in
    down -> mid -> up order, matching the canonical enumeration."""
    ids = []
    for bi, block in enumerate(unet.down_blocks):
        for ai in range(len(getattr(block, "attentions", []) or [])):
            ids.append(CrossAttnLayerId("down", bi, ai))
    for ai in range(len(getattr(unet.mid_block, "attentions", []) or [])):
        ids.append(CrossAttnLayerId("mid", 0, ai))
    for bi, block in enumerate(unet.up_blocks):
        for ai in range(len(getattr(block, "attentions", []) or [])):
            ids.append(CrossAttnLayerId("up", bi, ai))
    return ids


class _RecordingProcessor:
    """Drop-in AttnProcessor that also writes softmax probabilities to a sink."""

    def __init__(self, layer: CrossAttnLayerId, sink: dict):
        self.layer = layer
        self.sink = sink

    def __call__(self, attn, hidden_states, encoder_hidden_states=None,
                 attention_mask=None, **kwargs):
        import torch

        residual = hidden_states
        cross = encoder_hidden_states is not None
        query = attn.to_q(hidden_states)
        context = encoder_hidden_states if cross else hidden_states
        key = attn.to_k(context)
        value = attn.to_v(context)
        query = attn.head_to_batch_dim(query)
        key = attn.head_to_batch_dim(key)
        value = attn.head_to_batch_dim(value)
        probs = attn.get_attention_scores(query, key, attention_mask)
        if cross and self.sink is not None and self.sink.get("armed"):
            heads = attn.heads
            bh, nq, nt = probs.shape
            maps = probs.reshape(bh // heads, heads, nq, nt)
            self.sink.setdefault("records", []).append(
                AttentionRecord(layer=self.layer,
                                map=maps[0].detach().float().cpu().numpy())
            )
        hidden_states = torch.bmm(probs, value)
        hidden_states = attn.batch_to_head_dim(hidden_states)
        hidden_states = attn.to_out[0](hidden_states)
        hidden_states = attn.to_out[1](hidden_states)
        if attn.residual_connection:
            hidden_states = hidden_states + residual
        return hidden_states


class StableDiffusionBackbone:
    """SD 1.x behind the shared backbone interface.

    Latents use the VAE posterior mean (not a sample) so encode is a
    deterministic function of the image; the 0.18215 scale matches the
    training convention of the released checkpoints.
    """

    supports_capture = True
    downsample_factor = 8

    def __init__(self, model_name: str = _MODEL_DEFAULT, device: str = "cpu"):
        _require_diffusers()
        import torch
        from diffusers import AutoencoderKL, UNet2DConditionModel
        from transformers import CLIPTextModel, CLIPTokenizer

        self.device = torch.device(device)
        self.vae = AutoencoderKL.from_pretrained(model_name, subfolder="vae").to(self.device)
        self.unet = UNet2DConditionModel.from_pretrained(model_name, subfolder="unet").to(self.device)
        self.tokenizer = CLIPTokenizer.from_pretrained(model_name, subfolder="tokenizer")
        self.text_model = CLIPTextModel.from_pretrained(model_name, subfolder="text_encoder").to(self.device)
        self.vae.requires_grad_(False)
        self.text_model.requires_grad_(False)

        self.latent_scale = 0.18215
        self.schedule = NoiseSchedule.linear(num_steps=1000)
        self.layer_ids = enumerate_sd_cross_attention(self.unet)
        self.trainable_mask: set = set()
        self._sink: dict = {"armed": False}
        self._install_processors()
        self.set_trainable(set())
        digest = hashlib.blake2b(model_name.encode(), digest_size=4).hexdigest()
        self.identifier = f"sd#{digest}#{id(self) & 0xFFFF:04x}"

    # ------------------------------------------------------------ internals

    def _block_for(self, lid: CrossAttnLayerId):
        if lid.kind.value == "down":
            owner = self.unet.down_blocks[lid.block_index]
        elif lid.kind.value == "mid":
            owner = self.unet.mid_block
        else:
            owner = self.unet.up_blocks[lid.block_index]
        return owner.attentions[lid.attn_index]

    def _attn_module(self, lid: CrossAttnLayerId):
        mod = self._block_for(lid)
        for part in _ATTN_SUBPATH.split("."):
            mod = mod[int(part)] if part.isdigit() else getattr(mod, part)
        return mod

    def _install_processors(self) -> None:
        for lid in self.layer_ids:
            attn = self._attn_module(lid)
            attn.set_processor(_RecordingProcessor(lid, self._sink))

    @property
    def latent_geometry(self) -> tuple:
        return (4, 64, 64)

    # ----------------------------------------------------------------- codec

    def encode(self, image: ImageTensor) -> LatentImage:
        import torch

        arr = image.data
        if arr.shape[0] % 8 or arr.shape[1] % 8:
            raise DimensionMismatchError(
                f"image dims {arr.shape[:2]} must be divisible by 8"
            )
        x = torch.from_numpy(np.transpose(arr, (2, 0, 1))).float()
        x = (x * 2.0 - 1.0).unsqueeze(0).to(self.device)
        with torch.no_grad():
            posterior = self.vae.encode(x).latent_dist
        z = posterior.mean[0] * self.latent_scale
        return LatentImage(z.double().cpu().numpy(), scale=self.latent_scale)

    def encode_tensor(self, x):
        """Differentiable encode; x is (3, H, W) in [0, 1] on the device."""
        x = (x * 2.0 - 1.0).unsqueeze(0).float()
        posterior = self.vae.encode(x).latent_dist
        return posterior.mean[0] * self.latent_scale

    def decode(self, latent: LatentImage) -> ImageTensor:
        import torch

        z = torch.from_numpy(latent.data).float().unsqueeze(0).to(self.device)
        with torch.no_grad():
            x = self.vae.decode(z / self.latent_scale).sample[0]
        arr = ((x.cpu().numpy() + 1.0) / 2.0).transpose(1, 2, 0)
        return ImageTensor(np.clip(arr.astype(np.float64), 0.0, 1.0),
                           provenance="generated")

    # ------------------------------------------------------------- diffusion

    def add_noise(self, z0: LatentImage, t: int, eps: np.ndarray) -> LatentImage:
        self.schedule.check_timestep(t)
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != z0.data.shape:
            raise DimensionMismatchError(
                f"eps shape {eps.shape} must match latent {z0.data.shape}"
            )
        ab = self.schedule.alpha_bar(t)
        return LatentImage(np.sqrt(ab) * z0.data + np.sqrt(1 - ab) * eps,
                           scale=z0.scale)

    def embed_prompt(self, text: str, token_spans: dict | None = None) -> PromptEmbedding:
        import torch

        enc = self.tokenizer(text, padding="max_length", truncation=True,
                             max_length=self.tokenizer.model_max_length,
                             return_tensors="pt")
        with torch.no_grad():
            emb = self.text_model(enc.input_ids.to(self.device))[0][0]
        return PromptEmbedding(
            tokens=enc.input_ids[0].tolist(),
            embedding=emb.double().cpu().numpy(),
            token_spans=token_spans or {},
            text=text,
        )

    def tokenize(self, text: str) -> list:
        """Unpadded token ids with BOS/EOS stripped, for span search."""
        return self.tokenizer(text, add_special_tokens=False).input_ids

    def predict_noise_tensor(self, z_t, t: int, text, capture: bool = False):
        import torch

        self.schedule.check_timestep(t)
        if isinstance(text, PromptEmbedding):
            text = torch.from_numpy(text.embedding).float().to(self.device)
        self._sink["armed"] = bool(capture)
        self._sink["records"] = []
        try:
            out = self.unet(z_t.float().unsqueeze(0),
                            torch.tensor([t], device=self.device),
                            encoder_hidden_states=text.unsqueeze(0)).sample[0]
        finally:
            self._sink["armed"] = False
        records = list(self._sink["records"]) if capture else None
        return out, records

    def predict_noise(self, z_t: LatentImage, t: int, c: PromptEmbedding,
                      capture: bool = False):
        import torch

        if capture and not self.supports_capture:
            raise CaptureUnsupportedError("capture disabled on this backbone")
        z = torch.from_numpy(z_t.data).to(self.device)
        with torch.no_grad():
            eps_hat, records = self.predict_noise_tensor(z, t, c, capture=capture)
        return eps_hat.double().cpu().numpy(), records

    # -------------------------------------------------------------- training

    def set_trainable(self, layers) -> "StableDiffusionBackbone":
        layers = set(layers)
        unknown = layers - set(self.layer_ids)
        if unknown:
            names = ", ".join(sorted(l.canonical_name for l in unknown))
            raise UnknownLayerError(f"layers not in this UNet: {names}")
        self.unet.requires_grad_(False)
        for lid in layers:
            self._attn_module(lid).requires_grad_(True)
        self.trainable_mask = set(layers)
        return self

    def set_trainable_full(self) -> "StableDiffusionBackbone":
        self.unet.requires_grad_(True)
        self.trainable_mask = set(self.layer_ids)
        return self

    def trainable_parameters(self) -> list:
        return [p for p in self.unet.parameters() if p.requires_grad]

    def save_state(self) -> dict:
        return {k: v.detach().clone() for k, v in self.unet.state_dict().items()}

    def load_state(self, state: dict) -> None:
        self.unet.load_state_dict(state)

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name, tensor in sorted(self.unet.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def fresh(self) -> "StableDiffusionBackbone":
        raise ProviderUnavailableError(
            "cloning a full SD checkpoint in memory is not supported; "
            "construct a second backbone from the same model name instead"
        )

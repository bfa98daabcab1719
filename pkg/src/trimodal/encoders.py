"""Small per-modality encoders emitting unit-norm projected embeddings.

Image and audio use a patch embedding plus a learned pooling token in
front of a short self-attention stack; text uses token embeddings with
pad-masked attention and mean pooling over non-pad positions. Each
encoder ends in a linear projection head followed by L2 normalization,
so outputs from different modalities are directly comparable by cosine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn

from .dataset import PAD_ID
from .errors import ConfigurationError, NumericError, ShapeError

MODALITIES = ("image", "text", "audio")


@dataclass(frozen=True)
class EncoderSpec:
    modality: str
    depth: int = 2
    width: int = 64
    heads: int = 4
    d_proj: int = 64
    mlp_ratio: int = 2
    parameter_seed: int = 0
    patch_size: int = 8
    input_hw: tuple[int, int] = (64, 64)  # (H, W) for image, (F_mel, T_frames) for audio
    vocab_size: int = 0                   # text only
    max_len: int = 32                     # text only

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ConfigurationError(f"unknown modality {self.modality!r}")
        if self.modality == "text" and self.vocab_size < 2:
            raise ConfigurationError("text encoder needs vocab_size >= 2")
        if self.modality in ("image", "audio"):
            h, w = self.input_hw
            if h % self.patch_size or w % self.patch_size:
                raise ConfigurationError(
                    f"input {self.input_hw} not divisible by patch size {self.patch_size}"
                )
        if self.width % self.heads:
            raise ConfigurationError("width must be divisible by heads")


def seed_parameters(module: nn.Module, seed: int) -> None:
    """Deterministic re-initialization of every parameter from one seed."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in module.named_parameters():
            if p.ndim == 1:
                # LayerNorm scales stay at one, biases at zero.
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif any(tag in name for tag in ("pos_embed", "pool_token", "slot", "query")):
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.02)
            else:
                fan_in = p[0].numel()
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * fan_in**-0.5)


class AttentionBlock(nn.Module):
    """Pre-norm self-attention + MLP with residuals."""

    def __init__(self, width: int, heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, mlp_ratio * width),
            nn.GELU(),
            nn.Linear(mlp_ratio * width, width),
        )

    def forward(self, x, key_padding_mask=None):
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, key_padding_mask=key_padding_mask,
                                need_weights=False)
        x = x + attn_out
        return x + self.mlp(self.norm2(x))


def _normalize_rows(x: torch.Tensor) -> torch.Tensor:
    norms = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    if not torch.isfinite(x).all() or (norms == 0).any():
        raise NumericError("encoder produced a non-finite or zero embedding")
    return x / norms


class PatchEncoder(nn.Module):
    """Shared backbone for image (3-channel) and audio (1-channel) inputs."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        channels = 3 if spec.modality == "image" else 1
        h, w = spec.input_hw
        n_patches = (h // spec.patch_size) * (w // spec.patch_size)
        self.patch_embed = nn.Conv2d(channels, spec.width,
                                     kernel_size=spec.patch_size, stride=spec.patch_size)
        self.pool_token = nn.Parameter(torch.zeros(1, 1, spec.width))
        self.pos_embed = nn.Parameter(torch.zeros(1, n_patches + 1, spec.width))
        self.blocks = nn.ModuleList(
            AttentionBlock(spec.width, spec.heads, spec.mlp_ratio) for _ in range(spec.depth)
        )
        self.norm = nn.LayerNorm(spec.width)
        self.head = nn.Linear(spec.width, spec.d_proj)
        seed_parameters(self, spec.parameter_seed)

    def _to_grid(self, x: torch.Tensor) -> torch.Tensor:
        if self.spec.modality == "image":
            if x.ndim != 4 or x.shape[1:] != (*self.spec.input_hw, 3):
                raise ShapeError(
                    f"expected image batch (N, {self.spec.input_hw[0]}, "
                    f"{self.spec.input_hw[1]}, 3), got {tuple(x.shape)}"
                )
            return x.permute(0, 3, 1, 2)
        if x.ndim != 3 or x.shape[1:] != self.spec.input_hw:
            raise ShapeError(
                f"expected spectrogram batch (N, {self.spec.input_hw[0]}, "
                f"{self.spec.input_hw[1]}), got {tuple(x.shape)}"
            )
        return x.unsqueeze(1)

    def forward(self, x) -> torch.Tensor:
        x = torch.as_tensor(x)
        if not x.is_floating_point():
            x = x.float()
        x = self._to_grid(x.to(self.head.weight.dtype))
        tokens = self.patch_embed(x).flatten(2).transpose(1, 2)
        tokens = torch.cat([self.pool_token.expand(tokens.shape[0], -1, -1), tokens], dim=1)
        tokens = tokens + self.pos_embed
        for block in self.blocks:
            tokens = block(tokens)
        pooled = self.norm(tokens[:, 0])
        return _normalize_rows(self.head(pooled))


class TextEncoder(nn.Module):
    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        self.token_embed = nn.Embedding(spec.vocab_size, spec.width)
        self.pos_embed = nn.Parameter(torch.zeros(1, spec.max_len, spec.width))
        self.blocks = nn.ModuleList(
            AttentionBlock(spec.width, spec.heads, spec.mlp_ratio) for _ in range(spec.depth)
        )
        self.norm = nn.LayerNorm(spec.width)
        self.head = nn.Linear(spec.width, spec.d_proj)
        seed_parameters(self, spec.parameter_seed)

    def token_features(self, tokens) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-token features after the stack, plus the non-pad mask."""
        tokens = torch.as_tensor(np.asarray(tokens)).long()
        if tokens.ndim != 2:
            raise ShapeError(f"expected token batch (N, L), got {tuple(tokens.shape)}")
        if tokens.shape[1] > self.spec.max_len:
            raise ShapeError(
                f"sequence length {tokens.shape[1]} exceeds max_len {self.spec.max_len}"
            )
        mask = tokens != PAD_ID
        if (~mask).all(dim=1).any():
            raise ConfigurationError("all-pad token sequence has no poolable positions")
        x = self.token_embed(tokens) + self.pos_embed[:, : tokens.shape[1]]
        for block in self.blocks:
            x = block(x, key_padding_mask=~mask)
        return self.norm(x), mask

    def forward(self, tokens) -> torch.Tensor:
        feats, mask = self.token_features(tokens)
        weights = mask.to(feats.dtype).unsqueeze(-1)
        pooled = (feats * weights).sum(dim=1) / weights.sum(dim=1)
        return _normalize_rows(self.head(pooled))


def make_encoder(spec: EncoderSpec) -> nn.Module:
    if spec.modality == "text":
        return TextEncoder(spec)
    return PatchEncoder(spec)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


_MODEL_CACHE: dict[EncoderSpec, nn.Module] = {}


def _cached_encoder(spec: EncoderSpec) -> nn.Module:
    model = _MODEL_CACHE.get(spec)
    if model is None:
        model = make_encoder(spec).eval()
        _MODEL_CACHE[spec] = model
    return model


def _encode(batch, spec: EncoderSpec) -> np.ndarray:
    model = _cached_encoder(spec)
    with torch.no_grad():
        return model(batch).numpy()


def encode_image(images, spec: EncoderSpec) -> np.ndarray:
    if spec.modality != "image":
        raise ConfigurationError(f"spec modality is {spec.modality!r}, expected image")
    return _encode(images, spec)


def encode_text(tokens, spec: EncoderSpec) -> np.ndarray:
    if spec.modality != "text":
        raise ConfigurationError(f"spec modality is {spec.modality!r}, expected text")
    return _encode(tokens, spec)


def encode_audio(spectrograms, spec: EncoderSpec) -> np.ndarray:
    if spec.modality != "audio":
        raise ConfigurationError(f"spec modality is {spec.modality!r}, expected audio")
    return _encode(spectrograms, spec)


def default_specs(d_proj: int = 64, width: int = 64, depth: int = 2, heads: int = 4,
                  patch_size: int = 8, image_hw=(64, 64), spec_shape=(64, 64),
                  vocab_size: int = 2, max_len: int = 32,
                  parameter_seed: int = 0) -> dict[str, EncoderSpec]:
    """One spec per modality with a shared projection dimension."""
    base = dict(depth=depth, width=width, heads=heads, d_proj=d_proj,
                parameter_seed=parameter_seed, patch_size=patch_size)
    return {
        "image": EncoderSpec(modality="image", input_hw=tuple(image_hw), **base),
        "text": EncoderSpec(modality="text", vocab_size=vocab_size, max_len=max_len, **base),
        "audio": EncoderSpec(modality="audio", input_hw=tuple(spec_shape), **base),
    }


def with_seed(specs: dict[str, EncoderSpec], seed: int) -> dict[str, EncoderSpec]:
    return {m: replace(s, parameter_seed=seed) for m, s in specs.items()}

"""Missing-modality reconstruction: fusion encoder, decoders, and losses.

The two available embeddings plus a learned missing-slot query pass
through a small self-attention stack; the missing-slot output feeds a
modality-specific decoder. Image and audio reconstructions are scored by
a weighted mix of (1 - SSIM) and mean squared error; text reconstruction
is per-position classification scored by cross-entropy. SSIM enters the
loss as (1 - SSIM) so that minimizing the loss maximizes similarity and
the stated weighting (more weight on structure for images, more on pixel
values for audio) keeps its meaning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .encoders import AttentionBlock, seed_parameters
from .errors import ConfigurationError, NumericError, ShapeError

MODALITIES = ("image", "text", "audio")


@dataclass
class ReconConfig:
    """Loss weights and fusion shape for one missing-modality scenario."""

    delta: float = 0.75
    eta: float = 1.0
    theta: float = 0.25
    missing: str = "audio"
    fusion_depth: int = 2
    fusion_width: int = 64
    fusion_heads: int = 4

    def __post_init__(self):
        if self.missing not in MODALITIES:
            raise ConfigurationError(
                f"missing must be one of {MODALITIES}, got {self.missing!r}"
            )
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError(f"delta must be in [0, 1], got {self.delta}")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigurationError(f"theta must be in [0, 1], got {self.theta}")
        if self.eta < 0:
            raise ConfigurationError(f"eta must be non-negative, got {self.eta}")


@dataclass
class ReconstructionPair:
    """Original payload and its reconstruction (text: per-position scores)."""

    original: object
    reconstructed: object


# --------------------------------------------------------------------------
# SSIM


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    window = torch.outer(g, g)
    return (window / window.sum()).reshape(1, 1, size, size)


def _as_image_tensor(x, name: str) -> tuple[torch.Tensor, bool]:
    """Coerce (H, W) / (H, W, C) / (N, H, W) / (N, H, W, C) to (N, C, H, W)."""
    was_numpy = not isinstance(x, torch.Tensor)
    t = torch.as_tensor(np.asarray(x, dtype=np.float64)) if was_numpy else x
    if t.ndim == 2:
        t = t[None, None]
    elif t.ndim == 3:
        if t.shape[-1] in (1, 3):  # single channel-last image
            t = t.permute(2, 0, 1)[None]
        else:  # batch of 2-D arrays
            t = t[:, None]
    elif t.ndim == 4:
        t = t.permute(0, 3, 1, 2)
    else:
        raise ShapeError(f"{name} must have 2 to 4 dims, got {t.ndim}")
    return t, was_numpy


def ssim(x, y, window_size: int = 11, sigma: float = 1.5,
         c1: float = 1e-4, c2: float = 9e-4):
    """Mean structural similarity over sliding Gaussian windows.

    Accepts 2-D arrays, channel-last images, or batches thereof; channels
    and batch entries are averaged. Returns a float for array inputs and a
    differentiable scalar tensor for tensor inputs.
    """
    xt, x_numpy = _as_image_tensor(x, "x")
    yt, y_numpy = _as_image_tensor(y, "y")
    if xt.shape != yt.shape:
        raise ShapeError(f"shape mismatch: {tuple(xt.shape)} vs {tuple(yt.shape)}")
    h, w = xt.shape[-2:]
    if window_size > h or window_size > w:
        raise ConfigurationError(
            f"window {window_size} larger than image {h}x{w}"
        )
    n, c = xt.shape[:2]
    xt = xt.reshape(n * c, 1, h, w)
    yt = yt.reshape(n * c, 1, h, w).to(xt.dtype)
    window = _gaussian_window(window_size, sigma, xt.dtype, xt.device)

    conv = torch.nn.functional.conv2d
    mu_x = conv(xt, window)
    mu_y = conv(yt, window)
    sigma_x = conv(xt * xt, window) - mu_x * mu_x
    sigma_y = conv(yt * yt, window) - mu_y * mu_y
    sigma_xy = conv(xt * yt, window) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2)
    )
    value = ssim_map.mean()
    return float(value) if (x_numpy and y_numpy) else value


def _mse(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return ((x - y.to(x.dtype)) ** 2).mean()


def _pair_tensors(original, reconstructed):
    orig_numpy = not isinstance(original, torch.Tensor)
    rec_numpy = not isinstance(reconstructed, torch.Tensor)
    ot = torch.as_tensor(np.asarray(original, dtype=np.float64)) if orig_numpy else original
    rt = torch.as_tensor(np.asarray(reconstructed, dtype=np.float64)) if rec_numpy else reconstructed
    if ot.shape != rt.shape:
        raise ShapeError(f"shape mismatch: {tuple(ot.shape)} vs {tuple(rt.shape)}")
    return ot, rt, orig_numpy and rec_numpy


def recon_loss_image(original, reconstructed, delta: float):
    """delta * (1 - SSIM) + (1 - delta) * MSE, non-negative."""
    ot, rt, as_float = _pair_tensors(original, reconstructed)
    loss = delta * (1.0 - ssim(ot, rt)) + (1.0 - delta) * _mse(ot, rt)
    return float(loss) if as_float else loss


def recon_loss_audio(original, reconstructed, theta: float):
    """theta * (1 - SSIM) + (1 - theta) * MSE, non-negative."""
    ot, rt, as_float = _pair_tensors(original, reconstructed)
    if ot.ndim == 3:  # batch of single-channel spectrograms, make that explicit
        ot, rt = ot[..., None], rt[..., None]
    loss = theta * (1.0 - ssim(ot, rt)) + (1.0 - theta) * _mse(ot, rt)
    return float(loss) if as_float else loss


def recon_loss_text(tokens, scores, eta: float):
    """eta times the mean per-position cross-entropy against the target ids.

    Pad positions are included; accuracy metrics exclude them instead.
    """
    tok_numpy = not isinstance(tokens, torch.Tensor)
    sc_numpy = not isinstance(scores, torch.Tensor)
    tt = torch.as_tensor(np.asarray(tokens)).long() if tok_numpy else tokens.long()
    st = torch.as_tensor(np.asarray(scores, dtype=np.float64)) if sc_numpy else scores
    if tt.ndim == 1:
        tt = tt[None]
        st = st[None] if st.ndim == 2 else st
    if st.ndim != 3 or st.shape[:2] != tt.shape:
        raise ShapeError(
            f"scores shape {tuple(st.shape)} does not match targets {tuple(tt.shape)}"
        )
    if not torch.isfinite(st).all():
        raise NumericError("reconstruction scores contain non-finite values")
    vocab = st.shape[-1]
    if int(tt.max()) >= vocab or int(tt.min()) < 0:
        raise ConfigurationError(
            f"target token id out of range for vocabulary of size {vocab}"
        )
    loss = eta * torch.nn.functional.cross_entropy(
        st.reshape(-1, vocab), tt.reshape(-1), reduction="mean"
    )
    return float(loss) if (tok_numpy and sc_numpy) else loss


def recon_loss(missing: str, pair: ReconstructionPair, cfg: ReconConfig):
    """Dispatches to the image / text / audio loss with the configured weight."""
    if missing not in MODALITIES:
        raise ConfigurationError(f"missing must be one of {MODALITIES}, got {missing!r}")
    orig = pair.original
    rec = pair.reconstructed
    o_arr = np.asarray(orig) if not isinstance(orig, torch.Tensor) else orig
    if missing == "image":
        if o_arr.ndim not in (3, 4) or o_arr.shape[-1] != 3:
            raise ConfigurationError("image payload must be (..., H, W, 3)")
        return recon_loss_image(orig, rec, cfg.delta)
    if missing == "audio":
        if o_arr.ndim not in (2, 3):
            raise ConfigurationError("audio payload must be (F, T) or (N, F, T)")
        return recon_loss_audio(orig, rec, cfg.theta)
    if isinstance(orig, torch.Tensor):
        is_int = not orig.is_floating_point()
    else:
        is_int = np.asarray(orig).dtype.kind in "iu"
    if not is_int:
        raise ConfigurationError("text payload must be an integer token sequence")
    return recon_loss_text(orig, rec, cfg.eta)


# --------------------------------------------------------------------------
# Fusion encoder and decoders


class FusionEncoder(nn.Module):
    """Fuses the two available embeddings into a missing-slot representation.

    Tokens carry per-modality slot embeddings and there is no positional
    encoding, so the result does not depend on the order in which the
    available modalities are supplied.
    """

    def __init__(self, d_proj: int, width: int, depth: int, heads: int, missing: str):
        super().__init__()
        if missing not in MODALITIES:
            raise ConfigurationError(f"unknown missing modality {missing!r}")
        self.missing = missing
        self.in_proj = nn.Linear(d_proj, width)
        self.slot_embed = nn.Parameter(torch.zeros(len(MODALITIES), width))
        self.query = nn.Parameter(torch.zeros(1, width))
        self.blocks = nn.ModuleList(
            AttentionBlock(width, heads) for _ in range(depth)
        )
        self.norm = nn.LayerNorm(width)
        self.out = nn.Linear(width, width)

    def forward(self, available: dict[str, torch.Tensor]) -> torch.Tensor:
        expected = {m for m in MODALITIES if m != self.missing}
        if set(available) != expected:
            raise ConfigurationError(
                f"fusion for missing={self.missing!r} needs modalities {sorted(expected)}, "
                f"got {sorted(available)}"
            )
        slots = {m: i for i, m in enumerate(MODALITIES)}
        tokens = []
        batch = None
        for m in MODALITIES:  # canonical order regardless of dict order
            if m == self.missing:
                continue
            h = torch.as_tensor(available[m]).to(self.in_proj.weight.dtype)
            if h.ndim != 2:
                raise ShapeError(f"embedding for {m} must be 2-D, got {tuple(h.shape)}")
            batch = h.shape[0] if batch is None else batch
            if h.shape[0] != batch:
                raise ShapeError("available embeddings have different batch sizes")
            tokens.append(self.in_proj(h) + self.slot_embed[slots[m]])
        query = (self.query + self.slot_embed[slots[self.missing]]).expand(batch, -1)
        x = torch.stack([*tokens, query], dim=1)
        for block in self.blocks:
            x = block(x)
        return self.out(self.norm(x[:, -1]))


class ImageDecoder(nn.Module):
    """Three transposed-conv upsampling stages from the fused vector."""

    def __init__(self, d_fused: int, out_hw: tuple[int, int], channels: int = 3,
                 base_width: int = 64):
        super().__init__()
        h, w = out_hw
        if h % 8 or w % 8:
            raise ConfigurationError(f"decoder output {out_hw} must be divisible by 8")
        self.base_hw = (h // 8, w // 8)
        self.base_width = base_width
        self.channels = channels
        self.fc = nn.Linear(d_fused, base_width * self.base_hw[0] * self.base_hw[1])
        self.up = nn.Sequential(
            nn.ConvTranspose2d(base_width, base_width // 2, 4, stride=2, padding=1),
            nn.GELU(),
            nn.ConvTranspose2d(base_width // 2, base_width // 4, 4, stride=2, padding=1),
            nn.GELU(),
            nn.ConvTranspose2d(base_width // 4, base_width // 8, 4, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(base_width // 8, channels, 3, padding=1),
        )

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        x = self.fc(fused).reshape(-1, self.base_width, *self.base_hw)
        x = torch.sigmoid(self.up(x))
        if self.channels == 1:
            return x.squeeze(1)
        return x.permute(0, 2, 3, 1)


class TextDecoder(nn.Module):
    """Non-autoregressive per-position vocabulary scores."""

    def __init__(self, d_fused: int, max_len: int, vocab_size: int, width: int = 128):
        super().__init__()
        self.max_len = max_len
        self.vocab_size = vocab_size
        self.net = nn.Sequential(
            nn.Linear(d_fused, width),
            nn.GELU(),
            nn.Linear(width, max_len * vocab_size),
        )

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        return self.net(fused).reshape(-1, self.max_len, self.vocab_size)


class MMRModel(nn.Module):
    """Fusion encoder plus the decoder for the configured missing modality."""

    def __init__(self, cfg: ReconConfig, d_proj: int, image_hw: tuple[int, int],
                 spec_shape: tuple[int, int], text_max_len: int, vocab_size: int,
                 seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.fusion = FusionEncoder(
            d_proj, cfg.fusion_width, cfg.fusion_depth, cfg.fusion_heads, cfg.missing
        )
        if cfg.missing == "image":
            self.decoder = ImageDecoder(cfg.fusion_width, image_hw, channels=3)
        elif cfg.missing == "audio":
            self.decoder = ImageDecoder(cfg.fusion_width, spec_shape, channels=1)
        else:
            self.decoder = TextDecoder(cfg.fusion_width, text_max_len, vocab_size)
        seed_parameters(self, seed)

    def forward(self, available: dict[str, torch.Tensor]) -> torch.Tensor:
        return self.decoder(self.fusion(available))


def decode_image(model: MMRModel, fused: torch.Tensor) -> torch.Tensor:
    if model.cfg.missing != "image":
        raise ConfigurationError("model does not decode images")
    return model.decoder(fused)


def decode_audio(model: MMRModel, fused: torch.Tensor) -> torch.Tensor:
    if model.cfg.missing != "audio":
        raise ConfigurationError("model does not decode audio")
    return model.decoder(fused)


def decode_text(model: MMRModel, fused: torch.Tensor) -> torch.Tensor:
    if model.cfg.missing != "text":
        raise ConfigurationError("model does not decode text")
    return model.decoder(fused)

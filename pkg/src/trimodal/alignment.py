"""Pairwise symmetric contrastive loss and the weighted tri-modal objective.

For a batch of N matched embedding pairs the pair loss is the mean over
samples of the two directional cross-entropies on the temperature-scaled
cosine similarity matrix: matched entries sit on the diagonal, all other
batch rows act as negatives. The total objective is the weighted sum of
the three pair losses (image-text, text-audio, audio-image).

Reductions inside the loss are order-canonicalized (summands are sorted
before accumulation) so that the value is bit-identical under a joint
permutation of the batch and under swapping the two embedding sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigurationError, NumericError, ShapeError


@dataclass
class AlignmentConfig:
    """Weights and temperature for the tri-modal objective."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    tau: float = 0.07
    tau_learnable: bool = False
    d_proj: int = 64
    # Optional per-pair temperatures; None falls back to the shared tau.
    tau_img_txt: float | None = None
    tau_txt_aud: float | None = None
    tau_aud_img: float | None = None

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigurationError("pair weights must be non-negative")
        for name in ("tau", "tau_img_txt", "tau_txt_aud", "tau_aud_img"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")

    def pair_taus(self) -> tuple[float, float, float]:
        return (
            self.tau_img_txt if self.tau_img_txt is not None else self.tau,
            self.tau_txt_aud if self.tau_txt_aud is not None else self.tau,
            self.tau_aud_img if self.tau_aud_img is not None else self.tau,
        )


@dataclass
class PairLossBreakdown:
    """The three pair losses and their weighted total (tensors or floats)."""

    loss_img_txt: torch.Tensor
    loss_txt_aud: torch.Tensor
    loss_aud_img: torch.Tensor
    total: torch.Tensor

    def detach_floats(self) -> dict[str, float]:
        return {
            "loss_img_txt": float(self.loss_img_txt),
            "loss_txt_aud": float(self.loss_txt_aud),
            "loss_aud_img": float(self.loss_aud_img),
            "total": float(self.total),
        }


def _as_2d(h, name: str) -> torch.Tensor:
    t = torch.as_tensor(h)
    if t.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (batch, dim), got shape {tuple(t.shape)}")
    if not t.is_floating_point():
        t = t.double()
    return t


def _ordered_sum(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    # Canonical accumulation order: batch permutations cannot shift the value.
    return torch.sort(x, dim=dim).values.sum(dim=dim)


def _logsumexp_rows(logits: torch.Tensor) -> torch.Tensor:
    m = logits.max(dim=-1, keepdim=True).values
    return m.squeeze(-1) + torch.log(_ordered_sum(torch.exp(logits - m), dim=-1))


def similarity_matrix(h1, h2) -> torch.Tensor:
    """Cosine similarities: entry (i, j) compares row i of h1 with row j of h2."""
    a = _as_2d(h1, "h1")
    b = _as_2d(h2, "h2")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"embedding dims differ: {a.shape[1]} vs {b.shape[1]}")
    a = a / torch.linalg.vector_norm(a, dim=1, keepdim=True)
    b = b / torch.linalg.vector_norm(b, dim=1, keepdim=True)
    return a @ b.t()


def clip_loss(h1, h2, tau) -> torch.Tensor:
    """Symmetric contrastive loss over a batch of matched pairs.

    Non-negative; zero is approached when every diagonal softmax
    probability tends to one.
    """
    tau_t = torch.as_tensor(tau)
    if float(tau_t) <= 0:
        raise ConfigurationError(f"temperature must be positive, got {float(tau_t)}")
    a = _as_2d(h1, "h1")
    b = _as_2d(h2, "h2")
    if a.shape != b.shape:
        raise ShapeError(f"batch shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    if not (torch.isfinite(a).all() and torch.isfinite(b).all()):
        raise NumericError("embeddings contain non-finite values")
    logits = similarity_matrix(a, b) / tau_t
    diag = torch.diagonal(logits)
    row_ce = _logsumexp_rows(logits) - diag
    col_ce = _logsumexp_rows(logits.t().contiguous()) - diag
    n = logits.shape[0]
    return _ordered_sum(row_ce + col_ce) / n


def total_alignment_loss(h_img, h_txt, h_aud, cfg: AlignmentConfig,
                         taus=None) -> PairLossBreakdown:
    """Weighted sum of the three pair losses in canonical pair order.

    ``taus`` may override the configured temperatures (e.g. with a learnable
    tensor shared across pairs).
    """
    batches = {"h_img": _as_2d(h_img, "h_img"), "h_txt": _as_2d(h_txt, "h_txt"),
               "h_aud": _as_2d(h_aud, "h_aud")}
    sizes = {k: v.shape[0] for k, v in batches.items()}
    if len(set(sizes.values())) != 1:
        raise ShapeError(f"batch sizes differ across modalities: {sizes}")
    if taus is None:
        taus = cfg.pair_taus()
    elif not isinstance(taus, (tuple, list)):
        taus = (taus, taus, taus)
    loss_it = clip_loss(batches["h_img"], batches["h_txt"], taus[0])
    loss_ta = clip_loss(batches["h_txt"], batches["h_aud"], taus[1])
    loss_ai = clip_loss(batches["h_aud"], batches["h_img"], taus[2])
    total = cfg.alpha * loss_it + cfg.beta * loss_ta + cfg.gamma * loss_ai
    return PairLossBreakdown(loss_it, loss_ta, loss_ai, total)

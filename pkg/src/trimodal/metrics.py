"""Evaluation metrics: PSNR, MCD, token accuracy, exact-match METEOR,
retrieval recall, zero-shot classification, and the serializable report.

All metrics are pure functions. PSNR of a perfect reconstruction is the
+inf sentinel, which serializes as the string "inf". METEOR here is the
exact-match unigram variant (no stemming or synonymy) and is labelled
"meteor_exact" in reports to avoid overclaiming.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft

from .dataset import BEGIN_ID, PAD_ID
from .errors import ConfigurationError, ShapeError


def psnr(x, y, max_val: float = 1.0) -> float:
    """10 * log10(max_val^2 / MSE); +inf when the arrays are identical."""
    if max_val <= 0:
        raise ConfigurationError(f"max_val must be positive, got {max_val}")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise ShapeError(f"shape mismatch: {xa.shape} vs {ya.shape}")
    mse = float(np.mean((xa - ya) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


@dataclass
class CepstraSequence:
    """Per-frame mel-cepstral coefficients c_1..c_D (zeroth excluded)."""

    frames: np.ndarray  # (T, D)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ShapeError(f"cepstra must be (T, D), got {self.frames.shape}")


def mel_cepstra(spectrogram, n_coeffs: int = 13, eps: float = 1e-8) -> CepstraSequence:
    """Log-energy frames followed by an orthonormal cosine transform.

    Frames are the spectrogram columns; coefficients 1..n_coeffs along the
    mel axis are retained.
    """
    spec = np.asarray(spectrogram, dtype=np.float64)
    if spec.ndim != 2:
        raise ShapeError(f"spectrogram must be 2-D (F, T), got shape {spec.shape}")
    if np.any(spec < 0):
        raise ConfigurationError("spectrogram values must be non-negative")
    n_mel = spec.shape[0]
    if n_coeffs >= n_mel:
        raise ConfigurationError(
            f"n_coeffs ({n_coeffs}) must be smaller than the mel axis ({n_mel})"
        )
    log_spec = np.log(eps + spec)
    ceps = scipy.fft.dct(log_spec, type=2, norm="ortho", axis=0)
    return CepstraSequence(frames=ceps[1 : n_coeffs + 1].T)


def mcd(ref: CepstraSequence, syn: CepstraSequence) -> float:
    """Mean over frames of (10 / ln 10) * sqrt(2 * sum_d (dc_d)^2)."""
    r = ref.frames if isinstance(ref, CepstraSequence) else np.asarray(ref, dtype=np.float64)
    s = syn.frames if isinstance(syn, CepstraSequence) else np.asarray(syn, dtype=np.float64)
    if r.shape != s.shape:
        raise ShapeError(f"cepstra shapes differ: {r.shape} vs {s.shape}")
    per_frame = (10.0 / math.log(10.0)) * np.sqrt(2.0 * np.sum((r - s) ** 2, axis=1))
    return float(np.mean(per_frame))


def token_accuracy(ref, hyp, pad_id: int = PAD_ID) -> float:
    """Percent of non-pad reference positions the hypothesis matches."""
    r = np.asarray(ref)
    h = np.asarray(hyp)
    if r.shape != h.shape:
        raise ShapeError(f"sequence shapes differ: {r.shape} vs {h.shape}")
    mask = r != pad_id
    total = int(mask.sum())
    if total == 0:
        raise ConfigurationError("reference contains no non-pad positions")
    return 100.0 * float((r[mask] == h[mask]).sum()) / total


def _match_unigrams(ref: list, hyp: list) -> list[tuple[int, int]]:
    """Exact matches as (hyp_pos, ref_pos); each position used at most once."""
    used = [False] * len(ref)
    pairs = []
    for i, tok in enumerate(hyp):
        for j, ref_tok in enumerate(ref):
            if not used[j] and ref_tok == tok:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def meteor_exact(ref_tokens, hyp_tokens) -> float:
    """Exact-match METEOR: F = 10PR / (R + 9P), penalty 0.5 * (chunks/m)^3."""
    ref = list(np.asarray(ref_tokens).tolist()) if not isinstance(ref_tokens, list) else ref_tokens
    hyp = list(np.asarray(hyp_tokens).tolist()) if not isinstance(hyp_tokens, list) else hyp_tokens
    if not ref or not hyp:
        return 0.0
    pairs = _match_unigrams(ref, hyp)
    m = len(pairs)
    if m == 0:
        return 0.0
    precision = m / len(hyp)
    recall = m / len(ref)
    f_score = 10.0 * precision * recall / (recall + 9.0 * precision)
    chunks = 1
    for (hi, ri), (hj, rj) in zip(pairs, pairs[1:]):
        if not (hj == hi + 1 and rj == ri + 1):
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return f_score * (1.0 - penalty)


def _cosine_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    q = queries / np.linalg.norm(queries, axis=1, keepdims=True)
    g = gallery / np.linalg.norm(gallery, axis=1, keepdims=True)
    return q @ g.T


def recall_at_k(queries, gallery, k: int) -> float:
    """Fraction of queries whose matched gallery row ranks in the top k.

    Matched pairs share the row index; similarity ties rank the lower
    gallery index first.
    """
    q = np.asarray(queries, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    if q.ndim != 2 or g.ndim != 2 or q.shape != g.shape:
        raise ShapeError(f"queries/gallery must be equal-shape 2-D, got {q.shape} vs {g.shape}")
    n = q.shape[0]
    if not 1 <= k <= n:
        raise ConfigurationError(f"k must be in [1, {n}], got {k}")
    sims = _cosine_matrix(q, g)
    hits = 0
    for i in range(n):
        row = sims[i]
        true_sim = row[i]
        rank = 1 + int(np.sum(row > true_sim)) + int(np.sum(row[:i] == true_sim))
        if rank <= k:
            hits += 1
    return hits / n


def zero_shot_classify(sample_emb, class_text_embs) -> int:
    """Index of the most cosine-similar class prompt; ties pick the lowest."""
    e = np.asarray(sample_emb, dtype=np.float64)
    c = np.asarray(class_text_embs, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] == 0:
        raise ConfigurationError("need a non-empty (C, d) class embedding matrix")
    if e.ndim != 1 or e.shape[0] != c.shape[1]:
        raise ShapeError(f"sample dim {e.shape} does not match classes {c.shape}")
    e = e / np.linalg.norm(e)
    c = c / np.linalg.norm(c, axis=1, keepdims=True)
    return int(np.argmax(c @ e))


def strip_special(tokens, pad_id: int = PAD_ID, begin_id: int = BEGIN_ID) -> list[int]:
    """Drop pad and begin tokens; used before METEOR scoring."""
    return [int(t) for t in np.asarray(tokens).tolist() if t not in (pad_id, begin_id)]


# --------------------------------------------------------------------------
# Reports

NA = "n/a (out of scope)"


def _encode_value(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _decode_value(v):
    if v == "inf":
        return math.inf
    return v


@dataclass
class MetricsReport:
    """Named scalar results for one evaluation scenario."""

    scenario: str
    values: dict = field(default_factory=dict)
    seed: int = 0
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "values": {k: _encode_value(v) for k, v in self.values.items()},
            "seed": self.seed,
            "config_digest": self.config_digest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        raw = json.loads(text)
        return cls(
            scenario=raw["scenario"],
            values={k: _decode_value(v) for k, v in raw["values"].items()},
            seed=raw["seed"],
            config_digest=raw["config_digest"],
        )

    def render_table(self) -> str:
        width = max((len(k) for k in self.values), default=8)
        lines = [f"scenario: {self.scenario}   seed: {self.seed}",
                 f"config digest: {self.config_digest}"]
        for key in self.values:
            v = self.values[key]
            if isinstance(v, float):
                shown = "inf" if math.isinf(v) else f"{v:.4f}"
            else:
                shown = str(v)
            lines.append(f"{key.ljust(width)}  {shown}")
        return "\n".join(lines) + "\n"


def write_atomic(path, data: str | bytes) -> None:
    """Write via a temp file plus rename so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_report(report: MetricsReport, prefix) -> tuple[Path, Path]:
    """Writes <prefix>.json and <prefix>.txt; returns both paths."""
    prefix = Path(prefix)
    json_path = prefix.with_suffix(".json")
    txt_path = prefix.with_suffix(".txt")
    write_atomic(json_path, report.to_json())
    write_atomic(txt_path, report.render_table())
    return json_path, txt_path

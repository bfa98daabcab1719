"""Deterministic synthetic tri-modal corpus: images, captions, spectrograms.

Every sample is a pure function of (corpus_seed, category_id, sample_index).
Cross-modal structure exists by construction: a per-sample latent vector
drives visual attributes (blob hue/size, background brightness, position)
and the matching spectrogram attributes (pitch offset, harmonic decay,
envelope rate, onset time), and the caption's template index is painted
into both the image (corner marker hue) and the spectrogram (marker band).
"""

from __future__ import annotations

import colorsys
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arrays
from .errors import ConfigurationError, ShapeError
from .prompts import DEFAULT_PROMPT_BANK, EVAL_PROMPT_BANK, PromptBank, draw_caption

PAD_ID = 0
BEGIN_ID = 1
PAD_TOKEN = "<pad>"
BEGIN_TOKEN = "<begin>"

MODALITIES = ("image", "text", "audio")

# Fixed salts keep the per-purpose RNG streams independent.
_SALT_CATEGORY = 3
_SALT_LATENT = 7
_SALT_CAPTION = 11
_SALT_NOISE = 13

_GOLDEN = 0.6180339887498949

_NAME_POOL = (
    "dog barking", "cat meowing", "bird chirping", "horse neighing",
    "cow mooing", "sheep bleating", "duck quacking", "frog croaking",
    "lion roaring", "wolf howling", "owl hooting", "bee buzzing",
    "train rolling", "car honking", "drum beating", "bell ringing",
    "violin playing", "piano chiming", "guitar strumming", "flute whistling",
    "river flowing", "rain falling", "wind blowing", "fire crackling",
    "clock ticking", "engine humming", "hammer tapping", "saw grinding",
    "door creaking", "glass clinking", "thunder rumbling", "kettle hissing",
)

IMAGE_AUGMENTS = ("crop_resize", "hflip", "vflip")
AUDIO_AUGMENTS = ("white_noise", "time_shift", "time_stretch", "freq_flip")


class Vocabulary:
    """Closed whitespace vocabulary with fixed pad/begin specials."""

    def __init__(self, id_to_word: list[str]):
        if id_to_word[:2] != [PAD_TOKEN, BEGIN_TOKEN]:
            raise ConfigurationError("vocabulary must start with pad and begin tokens")
        self.id_to_word = list(id_to_word)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise ConfigurationError("vocabulary contains duplicate words")

    @classmethod
    def from_words(cls, words) -> "Vocabulary":
        regular = sorted(set(words) - {PAD_TOKEN, BEGIN_TOKEN})
        return cls([PAD_TOKEN, BEGIN_TOKEN] + regular)

    def __len__(self) -> int:
        return len(self.id_to_word)

    def encode(self, word: str) -> int:
        try:
            return self.word_to_id[word]
        except KeyError:
            raise ConfigurationError(f"word {word!r} is not in the vocabulary") from None

    def decode(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.id_to_word):
            raise ConfigurationError(f"token id {token_id} out of range")
        return self.id_to_word[token_id]


def tokenize(caption: str, vocab: Vocabulary, max_len: int = 32) -> np.ndarray:
    """Begin token, word ids in order, pad suffix; truncates to max_len - 1 words."""
    words = caption.split()[: max_len - 1]
    ids = [BEGIN_ID] + [vocab.encode(w) for w in words]
    ids += [PAD_ID] * (max_len - len(ids))
    return np.asarray(ids, dtype=np.int32)


def detokenize(tokens, vocab: Vocabulary) -> str:
    words = []
    for t in np.asarray(tokens).tolist():
        if t in (PAD_ID, BEGIN_ID):
            continue
        words.append(vocab.decode(int(t)))
    return " ".join(words)


@dataclass(frozen=True)
class CategorySpec:
    """Per-class prototype parameters, derived from (category_id, corpus_seed)."""

    category_id: int
    name: str
    image_seed_params: dict
    audio_seed_params: dict


@dataclass
class Triplet:
    image: np.ndarray        # (H, W, 3) float32 in [0, 1]
    tokens: np.ndarray       # (L,) int32, begin + words + pad suffix
    spectrogram: np.ndarray  # (F, T) float32 in [0, 1]
    category_id: int
    caption: str


def make_category_specs(num_categories: int, corpus_seed: int) -> list[CategorySpec]:
    if num_categories > len(_NAME_POOL):
        raise ConfigurationError(
            f"at most {len(_NAME_POOL)} categories are supported, got {num_categories}"
        )
    specs = []
    for cid in range(num_categories):
        rng = np.random.default_rng([corpus_seed, _SALT_CATEGORY, cid])
        bg_hue = (0.08 + cid * _GOLDEN + 0.02 * (rng.random() - 0.5)) % 1.0
        image_params = {
            "bg_hue": float(bg_hue),
            "blob_hue": float((bg_hue + 0.45 + 0.08 * (rng.random() - 0.5)) % 1.0),
            "blob_radius": float(0.15 + 0.05 * rng.random()),
        }
        audio_params = {
            "f0": float(9.0 + 31.0 * ((cid * _GOLDEN + 0.37) % 1.0) + 0.5 * (rng.random() - 0.5)),
            "n_harmonics": int(3 + cid % 3),
            "decay": float(1.5 + 2.0 * rng.random()),
        }
        specs.append(
            CategorySpec(
                category_id=cid,
                name=_NAME_POOL[cid],
                image_seed_params=image_params,
                audio_seed_params=audio_params,
            )
        )
    return specs


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.asarray(colorsys.hsv_to_rgb(h % 1.0, s, v), dtype=np.float64)


def render_image(params: dict, hw: tuple[int, int], latents: dict,
                 noise: np.ndarray | None = None) -> np.ndarray:
    """Paint background + class blob + template marker; float64 in [0, 1]."""
    h, w = hw
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")

    bg_value = 0.25 + 0.30 * latents["u_bright"]
    img = np.broadcast_to(_hsv(params["bg_hue"], 0.30, bg_value), (h, w, 3)).copy()

    cx = 0.5 + 0.24 * (2.0 * latents["u_pos"] - 1.0)
    cy = 0.5 + 0.12 * (2.0 * latents["u_pos_y"] - 1.0)
    sigma = params["blob_radius"] * (0.70 + 0.60 * latents["u_size"])
    blob = np.exp(-(((xx - cx) ** 2) + ((yy - cy) ** 2)) / (2.0 * sigma**2))
    hue = params["blob_hue"] + 0.24 * (latents["u_hue"] - 0.5)
    img = img * (1.0 - blob[..., None]) + _hsv(hue, 0.85, 0.95) * blob[..., None]

    # Corner marker carries the caption template identity into the pixels.
    marker = np.exp(-(((xx - 0.80) ** 2) + ((yy - 0.80) ** 2)) / (2.0 * 0.085**2))
    img = img * (1.0 - marker[..., None]) + _hsv(latents["marker"], 1.0, 1.0) * marker[..., None]

    if noise is not None:
        img = img + noise
    return np.clip(img, 0.0, 1.0)


def render_spectrogram(params: dict, shape: tuple[int, int], latents: dict,
                       noise: np.ndarray | None = None) -> np.ndarray:
    """Harmonic stack with decaying envelope plus a marker band; float64 in [0, 1]."""
    n_freq, n_time = shape
    f = np.arange(n_freq, dtype=np.float64)
    t = np.arange(n_time, dtype=np.float64)

    f0 = params["f0"] + 5.0 * (latents["u_hue"] - 0.5)
    tilt = 0.4 + 0.9 * latents["u_size"]
    profile = np.zeros(n_freq)
    for k in range(1, int(params["n_harmonics"]) + 1):
        mu = k * f0
        if mu >= n_freq - 18:
            break
        profile += np.exp(-(k - 1) * tilt) * np.exp(-((f - mu) ** 2) / (2.0 * 1.3**2))

    onset = (0.04 + 0.42 * latents["u_pos"]) * n_time
    rate = params["decay"] * (0.5 + 1.0 * latents["u_bright"])
    envelope = np.exp(-np.maximum(t - onset, 0.0) * rate / n_time)
    envelope /= 1.0 + np.exp(-(t - onset) / 1.0)  # smooth attack

    spec = 0.8 * np.outer(profile, envelope)
    band = 50.0 + 11.0 * latents["marker"]
    spec += 0.45 * np.exp(-((f - band) ** 2) / (2.0 * 0.9**2))[:, None]

    if noise is not None:
        spec = spec + noise
    return np.clip(spec, 0.0, 1.0)


def _sample_latents(spec: CategorySpec, sample_index: int, corpus_seed: int,
                    bank: PromptBank, jitter: float) -> tuple[dict, str, int]:
    """Shared latents, caption, and template index for one sample."""
    rng_lat = np.random.default_rng([corpus_seed, _SALT_LATENT, spec.category_id, sample_index])
    u = rng_lat.random(4)
    rng_cap = np.random.default_rng([corpus_seed, _SALT_CAPTION, spec.category_id, sample_index])
    caption, template_idx = draw_caption(bank, spec.name, rng_cap)
    marker = (template_idx + 0.5) / len(bank)

    def centered(x):
        return 0.5 + jitter * (x - 0.5)

    rng_noise = np.random.default_rng([corpus_seed, _SALT_NOISE, spec.category_id, sample_index])
    latents = {
        "u_hue": centered(u[0]),
        "u_size": centered(u[1]),
        "u_bright": centered(u[2]),
        "u_pos": centered(u[3]),
        "u_pos_y": centered(rng_noise.random()),
        "marker": centered(marker),
    }
    return latents, caption, template_idx


def class_prototype(spec: CategorySpec, image_hw=(64, 64), spec_shape=(64, 64)):
    """Renders the class at neutral latents (what jitter amplitude 0 produces)."""
    neutral = {k: 0.5 for k in ("u_hue", "u_size", "u_bright", "u_pos", "u_pos_y", "marker")}
    return (
        render_image(spec.image_seed_params, image_hw, neutral),
        render_spectrogram(spec.audio_seed_params, spec_shape, neutral),
    )


def synthesize_triplet(spec: CategorySpec, sample_index: int, corpus_seed: int,
                       bank: PromptBank, *, vocab: Vocabulary | None = None,
                       image_hw=(64, 64), spec_shape=(64, 64), text_max_len: int = 32,
                       jitter: float = 1.0) -> Triplet:
    """One aligned sample; deterministic given (category_id, sample_index, corpus_seed)."""
    if vocab is None:
        vocab = build_vocabulary([bank, EVAL_PROMPT_BANK], [spec.name])
    latents, caption, _ = _sample_latents(spec, sample_index, corpus_seed, bank, jitter)
    rng_noise = np.random.default_rng(
        [corpus_seed, _SALT_NOISE, spec.category_id, sample_index, 1]
    )
    img_noise = 0.02 * jitter * rng_noise.standard_normal((*image_hw, 3))
    aud_noise = 0.02 * jitter * rng_noise.standard_normal(spec_shape)
    image = render_image(spec.image_seed_params, image_hw, latents, img_noise)
    spect = render_spectrogram(spec.audio_seed_params, spec_shape, latents, aud_noise)
    return Triplet(
        image=image.astype(np.float32),
        tokens=tokenize(caption, vocab, text_max_len),
        spectrogram=spect.astype(np.float32),
        category_id=spec.category_id,
        caption=caption,
    )


def build_vocabulary(banks, names) -> Vocabulary:
    words: set[str] = set()
    for bank in banks:
        words |= bank.words()
    for name in names:
        words |= set(name.split())
    return Vocabulary.from_words(words)


# --------------------------------------------------------------------------
# Augmentation


def _linear_resample(arr: np.ndarray, new_len: int, axis: int) -> np.ndarray:
    """Linear interpolation along one axis; endpoints preserved."""
    old_len = arr.shape[axis]
    if old_len == new_len:
        return arr.copy()
    pos = np.linspace(0.0, old_len - 1.0, new_len)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, old_len - 1)
    w = (pos - lo).astype(arr.dtype if arr.dtype.kind == "f" else np.float64)
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, hi, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = new_len
    w = w.reshape(shape)
    return (a * (1.0 - w) + b * w).astype(arr.dtype)


def augment(triplet: Triplet, kind: str, rng: np.random.Generator, *,
            amplitude: float = 0.05, min_scale: float = 0.85,
            shift: int | None = None, factor: float | None = None) -> Triplet:
    """Single augmentation; tokens and category are never touched.

    Image kinds: crop_resize, hflip, vflip. Audio kinds: white_noise,
    time_shift (circular), time_stretch (linear resample + crop/pad),
    freq_flip. Outputs are clipped back into [0, 1].
    """
    image = triplet.image
    spect = triplet.spectrogram
    if kind == "crop_resize":
        h, w = image.shape[:2]
        s = min_scale + (1.0 - min_scale) * rng.random()
        ch, cw = max(1, round(h * s)), max(1, round(w * s))
        oy = int(rng.integers(0, h - ch + 1))
        ox = int(rng.integers(0, w - cw + 1))
        crop = image[oy : oy + ch, ox : ox + cw]
        image = _linear_resample(_linear_resample(crop, h, 0), w, 1)
    elif kind == "hflip":
        image = image[:, ::-1].copy()
    elif kind == "vflip":
        image = image[::-1].copy()
    elif kind == "white_noise":
        spect = np.clip(
            spect + amplitude * rng.standard_normal(spect.shape).astype(spect.dtype), 0.0, 1.0
        )
    elif kind == "time_shift":
        n_time = spect.shape[1]
        if shift is None:
            shift = int(rng.integers(-(n_time // 4), n_time // 4 + 1))
        spect = np.roll(spect, shift, axis=1)
    elif kind == "time_stretch":
        n_time = spect.shape[1]
        if factor is None:
            factor = 0.9 + 0.2 * rng.random()
        new_len = max(1, round(n_time * factor))
        stretched = _linear_resample(spect, new_len, axis=1)
        if new_len >= n_time:
            spect = stretched[:, :n_time]
        else:
            pad = np.zeros((spect.shape[0], n_time - new_len), dtype=spect.dtype)
            spect = np.concatenate([stretched, pad], axis=1)
    elif kind == "freq_flip":
        spect = spect[::-1].copy()
    else:
        raise ConfigurationError(
            f"unknown augmentation kind {kind!r}; "
            f"image kinds: {IMAGE_AUGMENTS}, audio kinds: {AUDIO_AUGMENTS}"
        )
    return Triplet(
        image=np.ascontiguousarray(image, dtype=np.float32),
        tokens=triplet.tokens.copy(),
        spectrogram=np.ascontiguousarray(spect, dtype=np.float32),
        category_id=triplet.category_id,
        caption=triplet.caption,
    )


# --------------------------------------------------------------------------
# Corpus generation and persistence

MANIFEST_NAME = "manifest.json"
_ARRAY_FILES = {"images": "images.bin", "tokens": "tokens.bin", "spectrograms": "spectrograms.bin"}


@dataclass
class Dataset:
    """In-memory corpus: manifest plus the three stacked modality arrays."""

    manifest: dict
    images: np.ndarray
    tokens: np.ndarray
    spectrograms: np.ndarray
    source_dir: str | None = None
    _vocab: Vocabulary | None = field(default=None, repr=False)

    @property
    def vocab(self) -> Vocabulary:
        if self._vocab is None:
            self._vocab = Vocabulary(list(self.manifest["vocab"]))
        return self._vocab

    @property
    def train_indices(self) -> np.ndarray:
        return np.asarray(self.manifest["split"]["train"], dtype=np.int64)

    @property
    def test_indices(self) -> np.ndarray:
        return np.asarray(self.manifest["split"]["test"], dtype=np.int64)

    @property
    def category_ids(self) -> np.ndarray:
        return np.asarray([s["category_id"] for s in self.manifest["samples"]], dtype=np.int64)

    @property
    def category_names(self) -> list[str]:
        return [c["name"] for c in self.manifest["categories"]]

    @property
    def prompt_bank(self) -> PromptBank:
        return PromptBank(tuple(self.manifest["bank_templates"]))

    @property
    def num_samples(self) -> int:
        return int(self.images.shape[0])

    def digest(self) -> str:
        return arrays.sha256_bytes(manifest_json_bytes(self.manifest))


def manifest_json_bytes(manifest: dict) -> bytes:
    return (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode("utf-8")


def _split_indices(num_categories: int, per_category: int) -> tuple[list[int], list[int]]:
    """Stratified split; the last ceil(1/8) samples of each category are test."""
    test_count = max(1, per_category // 8)
    train, test = [], []
    for cid in range(num_categories):
        base = cid * per_category
        for k in range(per_category):
            (test if k >= per_category - test_count else train).append(base + k)
    return train, test


def generate_dataset(num_categories: int, per_category: int, corpus_seed: int,
                     bank: PromptBank = DEFAULT_PROMPT_BANK, out_dir=None, *,
                     eval_bank: PromptBank = EVAL_PROMPT_BANK,
                     image_hw=(64, 64), spec_shape=(64, 64), text_max_len: int = 32,
                     jitter: float = 1.0, force: bool = False) -> Dataset:
    """Builds the full corpus; writes it to ``out_dir`` when given."""
    if num_categories < 2:
        raise ConfigurationError(f"need at least 2 categories, got {num_categories}")
    if per_category < 2:
        raise ConfigurationError(f"need at least 2 samples per category, got {per_category}")

    specs = make_category_specs(num_categories, corpus_seed)
    vocab = build_vocabulary([bank, eval_bank], [s.name for s in specs])

    n = num_categories * per_category
    images = np.empty((n, *image_hw, 3), dtype=np.float32)
    tokens = np.empty((n, text_max_len), dtype=np.int32)
    spectrograms = np.empty((n, *spec_shape), dtype=np.float32)
    samples = []
    for spec in specs:
        for k in range(per_category):
            idx = spec.category_id * per_category + k
            trip = synthesize_triplet(
                spec, k, corpus_seed, bank, vocab=vocab, image_hw=image_hw,
                spec_shape=spec_shape, text_max_len=text_max_len, jitter=jitter,
            )
            images[idx] = trip.image
            tokens[idx] = trip.tokens
            spectrograms[idx] = trip.spectrogram
            samples.append({
                "index": idx,
                "category_id": spec.category_id,
                "sample_index": k,
                "caption": trip.caption,
            })

    train, test = _split_indices(num_categories, per_category)
    manifest = {
        "format_version": 1,
        "corpus_seed": int(corpus_seed),
        "num_categories": int(num_categories),
        "per_category": int(per_category),
        "image_hw": list(image_hw),
        "spec_shape": list(spec_shape),
        "text_max_len": int(text_max_len),
        "jitter": float(jitter),
        "bank_templates": list(bank.templates),
        "eval_bank_templates": list(eval_bank.templates),
        "categories": [
            {
                "category_id": s.category_id,
                "name": s.name,
                "image_seed_params": s.image_seed_params,
                "audio_seed_params": s.audio_seed_params,
            }
            for s in specs
        ],
        "vocab": vocab.id_to_word,
        "samples": samples,
        "split": {"train": train, "test": test},
        "arrays": {
            kind: {
                "file": fname,
                "dtype": str(arr.dtype),
                "shape_per_sample": list(arr.shape[1:]),
                "data_offset": arrays.HEADER_BYTES,
                "record_bytes": arrays.record_bytes(arr.shape[1:], arr.dtype),
            }
            for kind, fname, arr in (
                ("images", _ARRAY_FILES["images"], images),
                ("tokens", _ARRAY_FILES["tokens"], tokens),
                ("spectrograms", _ARRAY_FILES["spectrograms"], spectrograms),
            )
        },
    }
    ds = Dataset(manifest=manifest, images=images, tokens=tokens,
                 spectrograms=spectrograms, source_dir=None)
    if out_dir is not None:
        save_dataset(ds, out_dir, force=force)
    return ds


def save_dataset(ds: Dataset, out_dir, force: bool = False) -> None:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigurationError(
            f"output directory {out} is not empty; pass force=True to overwrite"
        )
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST_NAME).write_bytes(manifest_json_bytes(ds.manifest))
    arrays.write_array(out / _ARRAY_FILES["images"], ds.images)
    arrays.write_array(out / _ARRAY_FILES["tokens"], ds.tokens)
    arrays.write_array(out / _ARRAY_FILES["spectrograms"], ds.spectrograms)
    ds.source_dir = str(out)


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    manifest_path = src / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} under {src}")
    manifest = json.loads(manifest_path.read_text())
    loaded = {}
    for kind, info in manifest["arrays"].items():
        arr = arrays.read_array(src / info["file"])
        expected = tuple(info["shape_per_sample"])
        if arr.shape[1:] != expected:
            raise ShapeError(
                f"{kind} per-sample shape {arr.shape[1:]} does not match manifest {expected}"
            )
        loaded[kind] = arr
    return Dataset(
        manifest=manifest,
        images=loaded["images"],
        tokens=loaded["tokens"],
        spectrograms=loaded["spectrograms"],
        source_dir=str(src),
    )


def manifest_digest(in_dir) -> str:
    return arrays.sha256_file(Path(in_dir) / MANIFEST_NAME)

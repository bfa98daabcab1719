"""Caption templates with a single ``[category]`` slot.

Captions are produced by drawing a template uniformly and substituting the
category name. Two banks ship by default: the training bank used during
corpus generation and a disjoint evaluation bank held out for zero-shot
class prompts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

PLACEHOLDER = "[category]"

_DEFAULT_TEMPLATES = (
    "a photo and sound of [category]",
    "a recording of [category]",
    "the sound of [category] with a matching picture",
    "an image and audio clip of [category]",
    "a noisy recording of [category]",
    "a clear photo of [category] and its sound",
    "listen to [category] and look at the scene",
    "a short clip of [category]",
    "one sample of [category] in picture and sound",
    "a snapshot and recording of [category]",
    "the picture shows [category] and the audio confirms it",
    "a small scene with [category]",
)

_EVAL_TEMPLATES = (
    "an example of [category]",
    "audio and image of [category]",
    "a clip containing [category]",
    "this is [category]",
    "a sample of [category]",
    "you can hear [category] here",
)


@dataclass(frozen=True)
class PromptBank:
    """Non-empty collection of caption templates.

    Every template must contain the ``[category]`` placeholder exactly once.
    """

    templates: tuple[str, ...] = field(default=_DEFAULT_TEMPLATES)

    def __post_init__(self):
        if not self.templates:
            raise ConfigurationError("prompt bank must contain at least one template")
        object.__setattr__(self, "templates", tuple(self.templates))
        for i, t in enumerate(self.templates):
            n = t.count(PLACEHOLDER)
            if n != 1:
                raise ConfigurationError(
                    f"template {i} ({t!r}) contains {n} placeholders, expected exactly 1"
                )

    def __len__(self) -> int:
        return len(self.templates)

    def instantiate(self, index: int, name: str) -> str:
        return self.templates[index].replace(PLACEHOLDER, name)

    def words(self) -> set[str]:
        """All whitespace-delimited words across templates, slot excluded."""
        out: set[str] = set()
        for t in self.templates:
            for w in t.replace(PLACEHOLDER, " ").split():
                out.add(w)
        return out

    def disjoint_from(self, other: "PromptBank") -> bool:
        return not set(self.templates) & set(other.templates)


DEFAULT_PROMPT_BANK = PromptBank(_DEFAULT_TEMPLATES)
EVAL_PROMPT_BANK = PromptBank(_EVAL_TEMPLATES)


def draw_caption(bank: PromptBank, name: str, rng: np.random.Generator) -> tuple[str, int]:
    """Uniform template draw; returns the caption and the template index."""
    idx = int(rng.integers(len(bank)))
    return bank.instantiate(idx, name), idx


def build_prompt_caption(bank: PromptBank, category, rng: np.random.Generator) -> str:
    """Caption for ``category`` (anything with a ``name`` attribute or a str)."""
    name = category if isinstance(category, str) else category.name
    caption, _ = draw_caption(bank, name, rng)
    return caption

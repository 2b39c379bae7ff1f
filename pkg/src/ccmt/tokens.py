"""Token uniformization: variable-length encoder outputs -> fixed k-token sets.

Every sample carries three modalities (original-language text, translated
text, audio). Text modalities own a class token, audio does not. Encoders
emit a different token count per sample, so each modality is randomly
sampled down (or duplicated up) to exactly k rows before fusion; the class
token is always kept and relocated to row 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

import numpy as np

from .errors import ValidationError

MASK64 = (1 << 64) - 1

# Salts keep the variant-choice, row-sampling, and shuffle RNG streams apart.
SALT_VARIANT = 0x56415249
SALT_TOKENS = 0x544F4B45
SALT_SHUFFLE = 0x53485546


def mix_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed with splitmix64 finalization steps.

    Stable across platforms and runs; used to derive per-(sample, modality,
    epoch) RNG streams from one base seed.
    """
    x = 0
    for p in parts:
        x = (x + (int(p) & MASK64) + 0x9E3779B97F4A7C15) & MASK64
        z = x
        z ^= z >> 30
        z = (z * 0xBF58476D1CE4E5B9) & MASK64
        z ^= z >> 27
        z = (z * 0x94D049BB133111EB) & MASK64
        z ^= z >> 31
        x = z
    return x


class Modality(IntEnum):
    TEXT_ORIGINAL = 0
    TEXT_TRANSLATED = 1
    AUDIO = 2


TEXT_MODALITIES = (Modality.TEXT_ORIGINAL, Modality.TEXT_TRANSLATED)


@dataclass(eq=False)
class ModalityTokens:
    """One modality's raw token matrix (n, d_m) plus class-token bookkeeping.

    Text modalities must carry a class_index; audio must not.
    """

    modality_id: Modality
    tokens: np.ndarray
    class_index: Optional[int] = None
    encoder_tag: str = ""

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ValidationError(
                f"{self.modality_id.name}: token matrix must be 2-D with n >= 1, "
                f"got shape {self.tokens.shape}"
            )
        n = self.tokens.shape[0]
        if self.class_index is not None and not 0 <= self.class_index < n:
            raise ValidationError(
                f"{self.modality_id.name}: class_index {self.class_index} out of [0, {n})"
            )
        if self.modality_id in TEXT_MODALITIES and self.class_index is None:
            raise ValidationError(f"{self.modality_id.name}: text modality needs a class token")
        if self.modality_id == Modality.AUDIO and self.class_index is not None:
            raise ValidationError("AUDIO modality must not carry a class token")

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


@dataclass(eq=False)
class UniformTokenSet:
    """Exactly k tokens per modality; text class tokens sit at row 0."""

    text_original: np.ndarray
    text_translated: np.ndarray
    audio: np.ndarray
    label: int
    sample_id: int

    def matrix(self, m: Modality) -> np.ndarray:
        return (self.text_original, self.text_translated, self.audio)[int(m)]

    def matrices(self):
        return (self.text_original, self.text_translated, self.audio)


def uniformize(m: ModalityTokens, k: int, rng_seed: int) -> np.ndarray:
    """Resample one modality to exactly k rows, float64.

    n > k: uniform sample of k rows without replacement, always including
    the class token. n < k: every row kept, then k-n duplicates drawn with
    replacement. Rows are ordered by original index ascending, except the
    class token, which moves to row 0.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    n = m.n
    rng = np.random.default_rng(rng_seed)
    ci = m.class_index
    if ci is None:
        if n > k:
            idx = np.sort(rng.choice(n, size=k, replace=False))
        elif n < k:
            extra = rng.integers(0, n, size=k - n)
            idx = np.sort(np.concatenate([np.arange(n), extra]))
        else:
            idx = np.arange(n)
    else:
        others = np.delete(np.arange(n), ci)
        if n > k:
            rest = rng.choice(others, size=k - 1, replace=False)
        elif n < k:
            extra = rng.integers(0, n, size=k - n)
            rest = np.concatenate([others, extra])
        else:
            rest = others
        idx = np.concatenate([[ci], np.sort(rest)]).astype(np.int64)
    return m.tokens[idx].astype(np.float64)


VariantMode = Union[str, int]  # "random" or a fixed index


def select_variant(variants, mode: VariantMode, rng_seed: int) -> ModalityTokens:
    """Pick one encoder variant: "random" for training, an index for eval."""
    variants = list(variants)
    if not variants:
        raise ValidationError("variant list is empty")
    if mode == "random":
        i = int(np.random.default_rng(rng_seed).integers(0, len(variants)))
        return variants[i]
    i = int(mode)
    if not 0 <= i < len(variants):
        raise ValidationError(f"fixed variant index {i} out of range [0, {len(variants)})")
    return variants[i]


@dataclass(eq=False)
class SampleRecord:
    """One labeled example: per-modality lists of encoder variants."""

    sample_id: int
    label: int
    modalities: dict = field(default_factory=dict)  # Modality -> list[ModalityTokens]

    def variants(self, m: Modality):
        return self.modalities[m]


def assemble(sample: SampleRecord, config, rng_seed: int, eval_mode: bool) -> UniformTokenSet:
    """Variant selection + uniformization for all three modalities.

    Training mode draws a random variant per modality; eval mode always
    takes variant 0. Sub-seeds mix (sample id, modality, rng_seed), so the
    eval result is a pure function of (sample, config, rng_seed) and
    training resamples whenever the caller advances rng_seed (per epoch).
    """
    mats = {}
    for m in Modality:
        if m not in sample.modalities or not sample.modalities[m]:
            raise ValidationError(f"sample {sample.sample_id} is missing modality {m.name}")
        if eval_mode:
            chosen = select_variant(sample.modalities[m], 0, 0)
        else:
            vseed = mix_seed(sample.sample_id, int(m), rng_seed, SALT_VARIANT)
            chosen = select_variant(sample.modalities[m], "random", vseed)
        tseed = mix_seed(sample.sample_id, int(m), rng_seed, SALT_TOKENS)
        mats[m] = uniformize(chosen, config.k, tseed)
    return UniformTokenSet(
        text_original=mats[Modality.TEXT_ORIGINAL],
        text_translated=mats[Modality.TEXT_TRANSLATED],
        audio=mats[Modality.AUDIO],
        label=sample.label,
        sample_id=sample.sample_id,
    )

"""Writer for the CCMTEMB embedding container.

Implements the published wire format directly (the consumer package is not
imported): little-endian, magic "CCMTEMB", u32 version 1, u16 modality
count 3, three u32 widths, u32 class count, u64 sample count, length-
prefixed class names, records, and a trailing CRC32 over all preceding
bytes. Records: u64 sample id, u32 label, then per modality a u16 variant
count and per variant u32 token count, u32 class index (0xFFFFFFFF =
none), float32 row-major tokens.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError

MAGIC = b"CCMTEMB"
VERSION = 1
NO_CLASS = 0xFFFFFFFF


@dataclass
class VariantMatrix:
    tokens: np.ndarray  # (n, width) float32
    class_index: Optional[int]

    def __post_init__(self):
        self.tokens = np.ascontiguousarray(self.tokens, dtype="<f4")
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ValidationError(f"variant needs a (n>=1, width) matrix, got {self.tokens.shape}")
        n = self.tokens.shape[0]
        if self.class_index is not None and not 0 <= self.class_index < n:
            raise ValidationError(f"class index {self.class_index} out of [0, {n})")


@dataclass
class EmbeddingRecord:
    sample_id: int
    label: int
    text_original: List[VariantMatrix]
    text_translated: List[VariantMatrix]
    audio: List[VariantMatrix]

    def modality_lists(self):
        return (self.text_original, self.text_translated, self.audio)


def write_embeddings(
    path,
    records: Sequence[EmbeddingRecord],
    widths: Tuple[int, int, int],
    label_names: Sequence[str],
) -> None:
    label_names = list(label_names)
    if len(widths) != 3 or any(w < 1 for w in widths):
        raise ValidationError(f"three positive widths required, got {widths}")
    if not label_names:
        raise ValidationError("at least one label name required")
    for rec in records:
        if not 0 <= rec.label < len(label_names):
            raise ValidationError(f"sample {rec.sample_id}: label {rec.label} out of range")
        for variants, width, is_text in zip(rec.modality_lists(), widths, (True, True, False)):
            if not variants:
                raise ValidationError(f"sample {rec.sample_id}: empty modality")
            for v in variants:
                if v.tokens.shape[1] != width:
                    raise ValidationError(
                        f"sample {rec.sample_id}: width {v.tokens.shape[1]} != header {width}"
                    )
                if is_text and v.class_index is None:
                    raise ValidationError(f"sample {rec.sample_id}: text variant lacks class token")
                if not is_text and v.class_index is not None:
                    raise ValidationError(f"sample {rec.sample_id}: audio variant has class token")

    chunks = [MAGIC, struct.pack("<IH", VERSION, 3)]
    for w in widths:
        chunks.append(struct.pack("<I", w))
    chunks.append(struct.pack("<IQ", len(label_names), len(records)))
    for name in label_names:
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
    for rec in records:
        chunks.append(struct.pack("<QI", rec.sample_id, rec.label))
        for variants in rec.modality_lists():
            chunks.append(struct.pack("<H", len(variants)))
            for v in variants:
                ci = NO_CLASS if v.class_index is None else v.class_index
                chunks.append(struct.pack("<II", v.tokens.shape[0], ci))
                chunks.append(v.tokens.tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))

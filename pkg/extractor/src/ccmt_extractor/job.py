"""Extraction job configuration and the audio manifest reader."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional

from .errors import ValidationError


@dataclass
class ManifestEntry:
    path: str
    label: str
    language: str


def read_audio_manifest(path) -> List[ManifestEntry]:
    """CSV rows of path,label,language; a header row is skipped if present."""
    entries: List[ManifestEntry] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for i, row in enumerate(csv.reader(f)):
            if not row or all(not c.strip() for c in row):
                continue
            if i == 0 and [c.strip().lower() for c in row[:3]] == ["path", "label", "language"]:
                continue
            if len(row) < 3:
                raise ValidationError(f"manifest line {i + 1}: need path,label,language")
            entries.append(
                ManifestEntry(path=row[0].strip(), label=row[1].strip(), language=row[2].strip())
            )
    if not entries:
        raise ValidationError(f"manifest {path} holds no entries")
    return entries


@dataclass
class ExtractionJob:
    """Everything one extraction run needs.

    asr_backends: one tag per transcript variant (e.g. ["toy-small",
    "toy-large"]); text modalities get one variant per backend.
    width_handling: "native" records encoder widths as-is in the container
    header; "adapter" does the same but marks the run as expecting the
    consumer to adapt widths (no truncation happens at extraction time
    either way).
    channel_order: transcript concatenation order for two-channel audio.
    """

    manifest_path: str
    output_path: str
    asr_backends: List[str]
    translation_target: str = "en"
    text_encoder_original: str = "toy-text-32"
    text_encoder_translated: str = "toy-text-32"
    audio_encoder: str = "toy-audio-48"
    translator: str = "toy"
    width_handling: str = "native"
    channel_order: str = "agent-first"
    max_skip_fraction: float = 0.10
    error_log_path: Optional[str] = None

    def __post_init__(self):
        if not self.asr_backends:
            raise ValidationError("at least one ASR backend is required")
        if not isinstance(self.translation_target, str) or not self.translation_target:
            raise ValidationError("exactly one translation target language is required")
        if self.width_handling not in ("native", "adapter"):
            raise ValidationError("width_handling must be 'native' or 'adapter'")
        if self.channel_order not in ("agent-first", "customer-first"):
            raise ValidationError("channel_order must be 'agent-first' or 'customer-first'")
        if not 0.0 <= self.max_skip_fraction <= 1.0:
            raise ValidationError("max_skip_fraction must lie in [0, 1]")

    @property
    def resolved_error_log(self) -> str:
        return self.error_log_path or str(self.output_path) + ".errors.jsonl"

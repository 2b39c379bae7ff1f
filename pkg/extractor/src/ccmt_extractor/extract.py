"""The extraction pipeline: audio -> transcripts -> translations -> tokens
-> CCMTEMB container.

Per sample: the clip is loaded and resampled to 16 kHz; stereo call audio
is transcribed per channel and the transcripts concatenated (agent channel
first by default), while the audio encoder consumes the channel-merged
mono. Each ASR backend contributes one transcript variant; every variant
is translated to the target language. Text encoders emit class-token-first
matrices (an empty transcript yields the class-token-only row), the audio
encoder emits at least one token and no class token.

Failures are per-sample: the sample is skipped and logged, and the run
fails only when more than max_skip_fraction of the manifest was skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List

from .audio import channel_merge, load_wav, resample_to_16k, WORKING_RATE
from .backends import (
    get_asr_backend,
    get_audio_encoder,
    get_text_encoder,
    get_translator,
)
from .emb_format import EmbeddingRecord, VariantMatrix, write_embeddings
from .errors import ExtractorError
from .job import ExtractionJob, read_audio_manifest


@dataclass
class ExtractionStats:
    written: int = 0
    skipped: List[dict] = field(default_factory=list)
    label_names: List[str] = field(default_factory=list)
    widths: tuple = ()

    @property
    def skip_fraction(self) -> float:
        total = self.written + len(self.skipped)
        return len(self.skipped) / total if total else 0.0


def _transcribe(asr, audio, rate, language, channel_order):
    """Stereo call audio: per-channel transcripts, concatenated."""
    if audio.ndim == 2 and audio.shape[1] == 2:
        first, second = (0, 1) if channel_order == "agent-first" else (1, 0)
        parts = [
            asr.transcribe(resample_to_16k(audio[:, first], rate), WORKING_RATE, language),
            asr.transcribe(resample_to_16k(audio[:, second], rate), WORKING_RATE, language),
        ]
        return " ".join(p for p in parts if p).strip()
    mono = channel_merge(audio)
    return asr.transcribe(resample_to_16k(mono, rate), WORKING_RATE, language)


def extract(job: ExtractionJob) -> ExtractionStats:
    """Run the full pipeline and write the container; returns run stats."""
    entries = read_audio_manifest(job.manifest_path)
    label_names = sorted({e.label for e in entries})
    label_ids = {name: i for i, name in enumerate(label_names)}

    asr_backends = [get_asr_backend(tag) for tag in job.asr_backends]
    translator = get_translator(job.translator)
    enc_original = get_text_encoder(job.text_encoder_original)
    enc_translated = get_text_encoder(job.text_encoder_translated)
    enc_audio = get_audio_encoder(job.audio_encoder)

    stats = ExtractionStats(label_names=list(label_names))
    records = []
    for sample_id, entry in enumerate(entries):
        try:
            rate, audio = load_wav(entry.path)
            mono = resample_to_16k(channel_merge(audio), rate)

            original_variants = []
            translated_variants = []
            for asr in asr_backends:
                transcript = _transcribe(asr, audio, rate, entry.language, job.channel_order)
                tokens, ci = enc_original.encode(transcript)
                original_variants.append(VariantMatrix(tokens=tokens, class_index=ci))
                translated = translator.translate(
                    transcript, entry.language, job.translation_target
                )
                t_tokens, t_ci = enc_translated.encode(translated)
                translated_variants.append(VariantMatrix(tokens=t_tokens, class_index=t_ci))

            audio_tokens = enc_audio.encode(mono, WORKING_RATE)
            records.append(
                EmbeddingRecord(
                    sample_id=sample_id,
                    label=label_ids[entry.label],
                    text_original=original_variants,
                    text_translated=translated_variants,
                    audio=[VariantMatrix(tokens=audio_tokens, class_index=None)],
                )
            )
            stats.written += 1
        except Exception as e:  # noqa: BLE001 - logged per sample, run continues
            stats.skipped.append(
                {"sample": entry.path, "index": sample_id, "error": f"{type(e).__name__}: {e}"}
            )

    if stats.skipped:
        with open(job.resolved_error_log, "w", encoding="utf-8") as f:
            for item in stats.skipped:
                f.write(json.dumps(item, sort_keys=True) + "\n")

    if not records:
        raise ExtractorError("every sample failed; nothing to write")

    widths = (
        records[0].text_original[0].tokens.shape[1],
        records[0].text_translated[0].tokens.shape[1],
        records[0].audio[0].tokens.shape[1],
    )
    stats.widths = widths
    write_embeddings(job.output_path, records, widths, label_names)

    if stats.skip_fraction > job.max_skip_fraction:
        raise ExtractorError(
            f"{len(stats.skipped)} of {stats.written + len(stats.skipped)} samples skipped "
            f"(limit {job.max_skip_fraction:.0%}); see {job.resolved_error_log}"
        )
    return stats

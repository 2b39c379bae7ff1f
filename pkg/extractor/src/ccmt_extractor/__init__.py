"""Bridge from raw audio to CCMTEMB embedding containers.

Transcribes each clip with one or more ASR backends (variant augmentation),
translates the transcripts, runs text and audio encoders, and serializes
everything into the binary container consumed by the fusion trainer. The
trainer package is deliberately not imported anywhere here: the container
format is the only coupling.
"""

from .audio import channel_merge, load_wav, resample_to_16k
from .backends import (
    BackendUnavailableError,
    get_asr_backend,
    get_audio_encoder,
    get_text_encoder,
    get_translator,
)
from .errors import ExtractorError, ValidationError
from .extract import ExtractionStats, extract
from .job import ExtractionJob, read_audio_manifest

__version__ = "0.1.0"

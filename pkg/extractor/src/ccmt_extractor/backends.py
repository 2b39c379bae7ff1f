"""Model backends: ASR, translation, text encoding, audio encoding.

Two families are registered. The "toy-*" family is fully offline and
deterministic: transcripts derive from frame-level signal statistics,
translations from a hashed word mapping, and embeddings from hashed
word/frame features. It exists so pipelines can run (and be tested)
end-to-end without model downloads. The hub-backed family wraps
`transformers` checkpoints (Whisper sizes, BERT-style encoders, wav2vec-
style audio encoders, seq2seq translators) with greedy decoding; it raises
BackendUnavailableError when the models cannot be loaded.

All encoders emit (n, width) float32 matrices; text encoders put their
class token at row index 0.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BackendUnavailableError, ValidationError


def _hash_rng(*parts: str) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _frames(signal: np.ndarray, frame: int, hop: int) -> np.ndarray:
    """Frame a mono signal, zero-padding so at least one frame exists."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size < frame:
        signal = np.pad(signal, (0, frame - signal.size))
    count = 1 + (signal.size - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(count)[:, None]
    return signal[idx]


# ------------------------------------------------------------------ ASR


@dataclass
class ToyASR:
    """Offline stand-in for a speech recognizer.

    Maps frame-level (energy, zero-crossing) statistics to words from a
    fixed pseudo-vocabulary. Silence falls below the energy gate and can
    yield an empty transcript. The size tag changes framing and vocabulary
    so different sizes produce genuinely different transcripts.
    """

    size: str = "small"

    _FRAMES = {"small": (640, 640), "medium": (480, 480), "large": (320, 320)}
    _VOCAB = {"small": 24, "medium": 40, "large": 64}

    def __post_init__(self):
        if self.size not in self._FRAMES:
            raise ValidationError(f"unknown toy ASR size {self.size!r}")

    @property
    def tag(self) -> str:
        return f"toy-{self.size}"

    def transcribe(self, audio: np.ndarray, rate: int, language: str = "en") -> str:
        frame, hop = self._FRAMES[self.size]
        frames = _frames(audio, frame, hop)
        rms = np.sqrt((frames**2).mean(axis=1))
        zcr = (np.diff(np.signbit(frames), axis=1) != 0).mean(axis=1)
        vocab_n = self._VOCAB[self.size]
        words = []
        for r, z in zip(rms, zcr):
            if r < 1e-4:
                continue  # silence gate
            bucket = (int(r * 997) * 31 + int(z * 499)) % vocab_n
            words.append(_toy_word(language, self.size, bucket))
        return " ".join(words)


def _toy_word(language: str, salt: str, bucket: int) -> str:
    rng = _hash_rng("word", language, salt, str(bucket))
    consonants = "bdfgklmnprstv"
    vowels = "aeiou"
    length = 2 + int(rng.integers(0, 3))
    out = []
    for i in range(length):
        out.append(consonants[int(rng.integers(0, len(consonants)))])
        out.append(vowels[int(rng.integers(0, len(vowels)))])
    return "".join(out)


class WhisperASR:
    """Hub-backed speech recognition with greedy decoding."""

    def __init__(self, size: str = "small", model_name: Optional[str] = None):
        self.size = size
        self.tag = f"whisper-{size}"
        name = model_name or f"openai/whisper-{size}"
        try:
            from transformers import pipeline

            self._pipe = pipeline("automatic-speech-recognition", model=name)
        except Exception as e:  # noqa: BLE001 - any load failure means unavailable
            raise BackendUnavailableError(f"cannot load ASR model {name}: {e}") from e

    def transcribe(self, audio: np.ndarray, rate: int, language: str = "en") -> str:
        result = self._pipe(
            {"array": np.asarray(audio, dtype=np.float32), "sampling_rate": rate},
            generate_kwargs={"do_sample": False, "language": language},
        )
        return result["text"].strip()


# ------------------------------------------------------------ translation


@dataclass
class ToyTranslator:
    """Deterministic word-to-word pseudo-translation."""

    def translate(self, text: str, source_language: str, target_language: str) -> str:
        words = text.split()
        return " ".join(
            _toy_word(target_language, "translated", _stable_bucket(w)) for w in words
        )


def _stable_bucket(word: str) -> int:
    return int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:4], "little") % 4096


class HFTranslator:
    """Hub-backed text-to-text translation (greedy)."""

    def __init__(self, model_name: str):
        self.model_name = model_name
        try:
            from transformers import pipeline

            self._pipe = pipeline("translation", model=model_name)
        except Exception as e:  # noqa: BLE001
            raise BackendUnavailableError(f"cannot load translator {model_name}: {e}") from e

    def translate(self, text: str, source_language: str, target_language: str) -> str:
        if not text:
            return ""
        out = self._pipe(text, src_lang=source_language, tgt_lang=target_language,
                         do_sample=False)
        return out[0]["translation_text"].strip()


# ------------------------------------------------------------- encoders


@dataclass
class ToyTextEncoder:
    """Hash-embedding text encoder; class token at row 0.

    Each word maps to a fixed pseudo-random vector; the class token blends
    a fixed marker vector with the mean of the word vectors, so it carries
    content. An empty transcript yields the single class-token row.
    """

    width: int = 32

    def encode(self, text: str):
        words = text.split()
        vecs = [_hash_rng("tok", w).normal(0.0, 1.0, self.width) for w in words]
        marker = _hash_rng("cls-marker").normal(0.0, 1.0, self.width)
        if vecs:
            cls = 0.5 * marker + 0.5 * np.mean(vecs, axis=0)
        else:
            cls = marker
        tokens = np.stack([cls] + vecs).astype(np.float32)
        return tokens, 0  # (matrix, class_index)


class HFTextEncoder:
    """Hub-backed encoder (BERT-style); emits all hidden states, class first."""

    def __init__(self, model_name: str):
        self.model_name = model_name
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoTokenizer

            self._tok = AutoTokenizer.from_pretrained(model_name)
            self._model = AutoModel.from_pretrained(model_name)
            self._model.eval()
            self.width = self._model.config.hidden_size
        except Exception as e:  # noqa: BLE001
            raise BackendUnavailableError(f"cannot load text encoder {model_name}: {e}") from e

    def encode(self, text: str):
        import torch

        with torch.no_grad():
            enc = self._tok(text or "", return_tensors="pt", truncation=True)
            out = self._model(**enc).last_hidden_state[0].numpy().astype(np.float32)
        return out, 0  # tokenizers put [CLS] first


@dataclass
class ToyAudioEncoder:
    """Frame-statistics audio encoder (25 ms frames, 12.5 ms hop at 16 kHz).

    Per frame: RMS, zero-crossing rate, mean, peak, and band energies from
    a coarse FFT split, projected to the target width by a fixed random
    matrix. Always emits at least one token; no class token.
    """

    width: int = 48

    def encode(self, audio: np.ndarray, rate: int):
        frame = max(int(0.025 * rate), 2)
        hop = max(int(0.0125 * rate), 1)
        frames = _frames(audio, frame, hop)
        spec = np.abs(np.fft.rfft(frames, axis=1))
        bands = np.array_split(spec, 4, axis=1)
        feats = np.column_stack(
            [
                np.sqrt((frames**2).mean(axis=1)),
                (np.diff(np.signbit(frames), axis=1) != 0).mean(axis=1),
                frames.mean(axis=1),
                np.abs(frames).max(axis=1),
            ]
            + [b.mean(axis=1) for b in bands]
        )
        proj = _hash_rng("audio-proj", str(self.width)).normal(
            0.0, 1.0 / np.sqrt(feats.shape[1]), (feats.shape[1], self.width)
        )
        return (feats @ proj).astype(np.float32)


class Wav2Vec2AudioEncoder:
    """Hub-backed audio encoder; emits the final hidden-state tokens."""

    def __init__(self, model_name: str = "facebook/wav2vec2-base"):
        self.model_name = model_name
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoProcessor

            self._proc = AutoProcessor.from_pretrained(model_name)
            self._model = AutoModel.from_pretrained(model_name)
            self._model.eval()
            self.width = self._model.config.hidden_size
        except Exception as e:  # noqa: BLE001
            raise BackendUnavailableError(f"cannot load audio encoder {model_name}: {e}") from e

    def encode(self, audio: np.ndarray, rate: int):
        import torch

        with torch.no_grad():
            enc = self._proc(
                np.asarray(audio, dtype=np.float32), sampling_rate=rate, return_tensors="pt"
            )
            out = self._model(**enc).last_hidden_state[0].numpy().astype(np.float32)
        return out


# ------------------------------------------------------------- registry


def get_asr_backend(tag: str):
    """"toy-{small,medium,large}" or "whisper-{size}" / a full model name."""
    if tag.startswith("toy-"):
        return ToyASR(size=tag[len("toy-"):])
    if tag.startswith("whisper-"):
        return WhisperASR(size=tag[len("whisper-"):])
    if "/" in tag:
        return WhisperASR(size="custom", model_name=tag)
    raise ValidationError(f"unknown ASR backend tag {tag!r}")


def get_translator(tag: str):
    if tag == "toy":
        return ToyTranslator()
    if "/" in tag or tag.startswith("Helsinki") or tag.startswith("google/"):
        return HFTranslator(tag)
    raise ValidationError(f"unknown translator tag {tag!r}")


def get_text_encoder(tag: str):
    """"toy-text" or "toy-text-<width>", else a hub model name."""
    if tag.startswith("toy-text"):
        rest = tag[len("toy-text"):]
        width = int(rest[1:]) if rest.startswith("-") else 32
        return ToyTextEncoder(width=width)
    return HFTextEncoder(tag)


def get_audio_encoder(tag: str):
    """"toy-audio" or "toy-audio-<width>", else a hub model name."""
    if tag.startswith("toy-audio"):
        rest = tag[len("toy-audio"):]
        width = int(rest[1:]) if rest.startswith("-") else 48
        return ToyAudioEncoder(width=width)
    return Wav2Vec2AudioEncoder(tag)

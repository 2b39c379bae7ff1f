"""WAV loading, channel merging, and resampling to the 16 kHz working rate."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import ValidationError

WORKING_RATE = 16000


def load_wav(path):
    """Read a WAV file to float64 in [-1, 1], shape (samples,) or (samples, channels)."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        out = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        out = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        out = (data.astype(np.float64) - 128.0) / 128.0
    else:
        out = data.astype(np.float64)
    return rate, out


def channel_merge(audio: np.ndarray) -> np.ndarray:
    """Average a 1- or 2-channel signal into mono; mono passes through."""
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim == 1:
        return audio
    if audio.ndim != 2:
        raise ValidationError(f"audio must be 1-D or 2-D, got shape {audio.shape}")
    channels = audio.shape[1]
    if channels == 1:
        return audio[:, 0]
    if channels == 2:
        return audio.mean(axis=1)
    raise ValidationError(f"expected at most 2 channels, got {channels}")


def resample_to_16k(audio: np.ndarray, rate: int) -> np.ndarray:
    """Polyphase resampling to 16 kHz; a no-op when already there."""
    if rate <= 0:
        raise ValidationError(f"invalid sample rate {rate}")
    if rate == WORKING_RATE:
        return np.asarray(audio, dtype=np.float64)
    from math import gcd

    g = gcd(WORKING_RATE, rate)
    return resample_poly(np.asarray(audio, dtype=np.float64), WORKING_RATE // g, rate // g)

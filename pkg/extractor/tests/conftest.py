"""Shared fixtures: locally synthesized WAV clips (public domain by
construction) covering rates, channel layouts, and degenerate content."""

import wave

import numpy as np
import pytest


def write_wav(path, data, rate):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    pcm = (np.clip(data, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(data.shape[1])
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())
    return path


def tone(freq, seconds, rate, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def chirp(f0, f1, seconds, rate, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    phase = 2 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2 * seconds))
    return amp * np.sin(phase)


@pytest.fixture()
def clip_dir(tmp_path):
    return tmp_path / "clips"


@pytest.fixture()
def ten_clips_manifest(tmp_path, clip_dir):
    """Ten short clips with labels and languages, as a CSV manifest."""
    clip_dir.mkdir()
    rng = np.random.default_rng(99)
    specs = [
        ("tone440", tone(440, 0.6, 16000), 16000, "low", "fr"),
        ("tone880", tone(880, 0.5, 16000), 16000, "high", "fr"),
        ("tone220_8k", tone(220, 0.7, 8000), 8000, "low", "fr"),
        ("chirp_up", chirp(200, 2000, 0.6, 16000), 16000, "high", "fr"),
        ("chirp_down", chirp(3000, 300, 0.5, 22050), 22050, "high", "en"),
        ("noise", 0.3 * rng.normal(size=9600), 16000, "low", "en"),
        ("silence", np.zeros(16000), 16000, "low", "fr"),
        ("stereo_tones", np.column_stack([tone(300, 0.5, 16000), tone(1200, 0.5, 16000)]),
         16000, "high", "fr"),
        ("stereo_mix", np.column_stack([chirp(100, 900, 0.4, 44100), 0.2 * rng.normal(size=17640)]),
         44100, "low", "en"),
        ("beeps", np.concatenate([tone(500, 0.1, 16000), np.zeros(1600), tone(700, 0.2, 16000)]),
         16000, "high", "fr"),
    ]
    lines = ["path,label,language"]
    for name, data, rate, label, lang in specs:
        path = write_wav(clip_dir / f"{name}.wav", data, rate)
        lines.append(f"{path},{label},{lang}")
    manifest = tmp_path / "clips.csv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest

"""Channel merging, WAV I/O, and resampling."""

import numpy as np
import pytest

from ccmt_extractor.audio import WORKING_RATE, channel_merge, load_wav, resample_to_16k
from ccmt_extractor.errors import ValidationError

from conftest import tone, write_wav


class TestChannelMerge:
    def test_identical_channels_give_identical_mono(self):
        x = np.linspace(-0.5, 0.5, 200)
        merged = channel_merge(np.column_stack([x, x]))
        assert np.allclose(merged, x)

    def test_opposite_channels_cancel(self):
        x = tone(440, 0.1, 16000)
        merged = channel_merge(np.column_stack([x, -x]))
        assert np.allclose(merged, 0.0)

    def test_mono_passthrough_bit_identical(self):
        x = np.random.default_rng(0).normal(size=300)
        assert np.array_equal(channel_merge(x), x)
        assert np.array_equal(channel_merge(x[:, None]), x)

    def test_mean_of_two(self):
        a, b = np.ones(10), np.zeros(10)
        assert np.allclose(channel_merge(np.column_stack([a, b])), 0.5)

    def test_three_channels_rejected(self):
        with pytest.raises(ValidationError, match="2 channels"):
            channel_merge(np.zeros((10, 3)))


class TestWavRoundTrip:
    def test_load_matches_written(self, tmp_path):
        x = tone(440, 0.2, 16000)
        p = write_wav(tmp_path / "t.wav", x, 16000)
        rate, back = load_wav(p)
        assert rate == 16000
        assert back.shape == x.shape
        assert np.abs(back - x).max() < 1e-3  # 16-bit quantization

    def test_stereo_shape(self, tmp_path):
        x = np.column_stack([tone(300, 0.1, 8000), tone(600, 0.1, 8000)])
        p = write_wav(tmp_path / "s.wav", x, 8000)
        rate, back = load_wav(p)
        assert rate == 8000
        assert back.shape == x.shape


class TestResample:
    def test_16k_is_noop(self):
        x = tone(440, 0.1, 16000)
        assert np.array_equal(resample_to_16k(x, 16000), x)

    def test_8k_doubles_length(self):
        x = tone(220, 0.5, 8000)
        y = resample_to_16k(x, 8000)
        assert y.size == 2 * x.size

    def test_44k_to_16k(self):
        x = tone(440, 0.25, 44100)
        y = resample_to_16k(x, 44100)
        assert abs(y.size - int(0.25 * WORKING_RATE)) <= 2

    def test_tone_survives(self):
        # a 440 Hz tone resampled from 44.1 kHz still has its energy at 440 Hz
        x = tone(440, 0.5, 44100)
        y = resample_to_16k(x, 44100)
        spec = np.abs(np.fft.rfft(y * np.hanning(y.size)))
        freqs = np.fft.rfftfreq(y.size, 1 / WORKING_RATE)
        assert abs(freqs[np.argmax(spec)] - 440) < 5

    def test_bad_rate(self):
        with pytest.raises(ValidationError):
            resample_to_16k(np.zeros(10), 0)

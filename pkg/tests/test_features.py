"""Log-mel frontend: frame arithmetic, silence floor, tone localization."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.io import wavfile

from accentasr import features
from accentasr.errors import DataError, ValidationError


def test_one_second_default_is_98_by_80():
    cfg = features.FeatureConfig()
    wave = np.random.default_rng(0).standard_normal(16000) * 0.1
    out = features.extract_logmel(wave, cfg)
    assert out.shape == (98, 80)
    assert out.dtype == np.float32


def test_frame_count_formula():
    cfg = features.FeatureConfig()
    assert features.frame_count(16000, cfg) == (16000 - 400) // 160 + 1
    assert features.frame_count(400, cfg) == 1
    assert features.frame_count(559, cfg) == 1
    assert features.frame_count(560, cfg) == 2


def test_too_short_waveform_errors():
    with pytest.raises(ValidationError, match="shorter"):
        features.extract_logmel(np.zeros(399))


def test_silence_hits_log_floor_everywhere():
    out = features.extract_logmel(np.zeros(16000))
    np.testing.assert_allclose(out, np.float32(np.log(1e-10)))


def test_pure_tone_energy_localizes():
    cfg = features.FeatureConfig()
    t = np.arange(16000) / 16000.0
    for hz in (500.0, 2000.0, 6000.0):
        wave = np.sin(2 * np.pi * hz * t)
        out = features.extract_logmel(wave, cfg)
        peak_mel = int(np.median(out.argmax(axis=1)))
        centers_hz = features._mel_to_hz(
            np.linspace(0, features._hz_to_mel(8000.0), cfg.num_mels + 2))[1:-1]
        assert abs(centers_hz[peak_mel] - hz) < 0.25 * hz + 100


def test_every_filter_has_support():
    bank = features.mel_filterbank(features.FeatureConfig())
    assert (bank.sum(axis=1) > 0).all()


def test_filterbank_shape_and_range():
    cfg = features.FeatureConfig(num_mels=40)
    bank = features.mel_filterbank(cfg)
    assert bank.shape == (40, cfg.n_fft // 2 + 1)
    assert bank.min() >= 0.0 and bank.max() <= 1.0


def test_load_waveform_pcm16(tmp_path):
    path = tmp_path / "t.wav"
    data = (np.sin(2 * np.pi * 440 * np.arange(8000) / 16000) * 20000).astype(np.int16)
    wavfile.write(path, 16000, data)
    rate, wave = features.load_waveform(path, expect_rate=16000)
    assert rate == 16000
    assert abs(wave).max() <= 1.0
    with pytest.raises(DataError, match="sample rate"):
        features.load_waveform(path, expect_rate=8000)
    with pytest.raises(DataError, match="not found"):
        features.load_waveform(tmp_path / "missing.wav")

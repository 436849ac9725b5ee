"""Log Mel-filterbank feature extraction for real audio.

The synthetic corpus bypasses this module entirely; it exists so recorded
speech can be brought into the same manifest/feature-file world. Defaults are
the usual 80 log-mel energies over a 25 ms window every 10 ms.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DataError, ValidationError

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    num_mels: int = 80
    window_ms: float = 25.0
    hop_ms: float = 10.0

    def __post_init__(self):
        if self.sample_rate <= 0 or self.num_mels <= 0:
            raise ValidationError("sample_rate and num_mels must be positive")
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ValidationError("window_ms and hop_ms must be positive")
        if self.window_samples < 2:
            raise ValidationError("window shorter than 2 samples")

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def n_fft(self) -> int:
        n = 1
        while n < self.window_samples:
            n *= 2
        return n


def frame_count(n_samples: int, cfg: FeatureConfig) -> int:
    """floor((len - window) / hop) + 1; requires at least one full window."""
    if n_samples < cfg.window_samples:
        raise ValidationError(f"waveform of {n_samples} samples is shorter than one "
                              f"{cfg.window_samples}-sample window")
    return (n_samples - cfg.window_samples) // cfg.hop_samples + 1


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """(num_mels, n_fft//2 + 1) triangular filters spanning 0..Nyquist."""
    n_bins = cfg.n_fft // 2 + 1
    fft_hz = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    edges_mel = np.linspace(0.0, _hz_to_mel(cfg.sample_rate / 2.0), cfg.num_mels + 2)
    edges_hz = _mel_to_hz(edges_mel)
    bank = np.zeros((cfg.num_mels, n_bins))
    for m in range(cfg.num_mels):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rising = (fft_hz - lo) / (center - lo)
        falling = (hi - fft_hz) / (hi - center)
        bank[m] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def extract_logmel(waveform: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """(n_frames, num_mels) float32 log mel energies, floored at 1e-10.

    All-zero input therefore yields constant log(1e-10) frames rather than
    -inf.
    """
    wave = np.asarray(waveform, dtype=np.float64)
    if wave.ndim != 1:
        raise ValidationError(f"waveform must be 1-D, got shape {wave.shape}")
    n_frames = frame_count(wave.size, cfg)
    win, hop = cfg.window_samples, cfg.hop_samples
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = wave[idx] * np.hamming(win)
    spectrum = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    power = np.abs(spectrum) ** 2
    energies = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(energies, LOG_FLOOR)).astype(np.float32)


def load_waveform(path: str | Path, expect_rate: int | None = None) -> tuple[int, np.ndarray]:
    """Read a WAV file to float64 in [-1, 1]; returns (sample_rate, samples)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"audio file not found: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise DataError(f"{path}: not a readable WAV file ({exc})") from None
    if data.ndim == 2:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        data = data / float(np.iinfo(data.dtype).max)
    data = np.asarray(data, dtype=np.float64)
    if expect_rate is not None and rate != expect_rate:
        raise DataError(f"{path}: sample rate {rate} != expected {expect_rate}")
    return int(rate), data


def stack_frames(feats: np.ndarray, stack: int) -> np.ndarray:
    """Concatenate every ``stack`` consecutive frames into one wider frame,
    dropping the remainder; a cheap time-downsampling front end for the
    encoders. ``stack`` = 1 returns the input as float64 unchanged."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2:
        raise ValidationError(f"features must be 2-D, got shape {feats.shape}")
    if stack < 1:
        raise ValidationError(f"stack must be >= 1, got {stack}")
    if stack == 1:
        return feats
    frames = feats.shape[0] // stack
    if frames == 0:
        raise DataError(f"utterance of {feats.shape[0]} frames too short to "
                        f"stack by {stack}")
    return feats[:frames * stack].reshape(frames, stack * feats.shape[1])

"""Waveform to 128-bin log-mel spectrogram.

Centered STFT (constant zero padding, periodic Hann), power spectrum,
Slaney-style triangular mel filterbank over [0, sr/2], then natural log
of (mel power + log_floor). Frame count is 1 + floor(len(samples) / hop).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .wav import Waveform


@dataclass
class SpectrogramConfig:
    sample_rate: int = 44100
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    log_floor: float = 1e-6

    def __post_init__(self):
        if self.n_fft < self.hop:
            raise ConfigError("n_fft must be >= hop")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    @property
    def floor_value(self) -> float:
        """The log value an all-zero signal maps to."""
        return float(np.log(self.log_floor))


@dataclass
class Spectrogram:
    """T x n_mels matrix of log-power mel energies."""

    values: np.ndarray
    frame_rate: float
    log_floor: float = 1e-6

    @property
    def floor_value(self) -> float:
        return float(np.log(self.log_floor))


def hz_to_mel(freq):
    """Slaney scale: linear below 1 kHz, logarithmic above."""
    freq = np.asarray(freq, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    logstep = np.log(6.4) / 27.0
    mels = freq / f_sp
    above = freq >= min_log_hz
    mels = np.where(above, min_log_hz / f_sp + np.log(np.maximum(freq, min_log_hz) / min_log_hz) / logstep, mels)
    return mels


def mel_to_hz(mels):
    mels = np.asarray(mels, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    freqs = mels * f_sp
    above = mels >= min_log_mel
    freqs = np.where(above, min_log_hz * np.exp(logstep * (mels - min_log_mel)), freqs)
    return freqs


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    """(n_mels, 1 + n_fft//2) triangular filters with Slaney area normalization."""
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, 1 + n_fft // 2)
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    ramps = hz_pts[:, None] - fft_freqs[None, :]
    fdiff = np.diff(hz_pts)
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (hz_pts[2:] - hz_pts[:-2]))[:, None]
    return weights


def mel_center_freqs(sample_rate: int, n_mels: int) -> np.ndarray:
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(mel_pts)[1:-1]


def periodic_hann(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def stft_power(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """|STFT|^2 with centered frames, (T, 1 + n_fft//2)."""
    pad = n_fft // 2
    padded = np.concatenate([np.zeros(pad), samples, np.zeros(pad)])
    n_frames = 1 + len(samples) // hop
    window = periodic_hann(n_fft)
    starts = np.arange(n_frames) * hop
    frames = np.stack([padded[s : s + n_fft] for s in starts]) * window
    spectrum = np.fft.rfft(frames, axis=1)
    return np.abs(spectrum) ** 2


def mel_power(waveform: Waveform, cfg: SpectrogramConfig) -> np.ndarray:
    """Pre-log mel power matrix; scales quadratically with signal amplitude."""
    if waveform.sample_rate != cfg.sample_rate:
        raise ContractError(
            f"waveform rate {waveform.sample_rate} != config rate {cfg.sample_rate}"
        )
    power = stft_power(waveform.samples, cfg.n_fft, cfg.hop)
    fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels)
    return power @ fb.T


def log_mel_spectrogram(waveform: Waveform, cfg: SpectrogramConfig) -> Spectrogram:
    values = np.log(mel_power(waveform, cfg) + cfg.log_floor)
    return Spectrogram(
        values=values, frame_rate=cfg.frame_rate, log_floor=cfg.log_floor
    )

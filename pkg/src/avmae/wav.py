"""PCM16 WAV input/output."""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError

INT16_SCALE = 32768.0


@dataclass
class Waveform:
    """Mono float samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = 44100

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ContractError("waveform must be a non-empty 1-d sample array")
        if self.sample_rate <= 0:
            raise ContractError("sample_rate must be positive")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def load_wav(path) -> Waveform:
    """Read a RIFF/WAVE PCM16 file; stereo is averaged down to mono."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise FormatError(f"unsupported WAV codec {wf.getcomptype()!r}")
            if wf.getsampwidth() != 2:
                raise FormatError(
                    f"only PCM16 is supported, got {8 * wf.getsampwidth()}-bit"
                )
            channels = wf.getnchannels()
            if channels not in (1, 2):
                raise FormatError(f"expected mono or stereo, got {channels} channels")
            n = wf.getnframes()
            raw = wf.readframes(n)
            if len(raw) != n * 2 * channels:
                raise OSError(f"truncated WAV data in {path}")
            rate = wf.getframerate()
    except wave.Error as exc:
        raise FormatError(f"not a readable PCM WAV file: {exc}") from exc
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if channels == 2:
        data = data.reshape(-1, 2).mean(axis=1)
    return Waveform(samples=data / INT16_SCALE, sample_rate=rate)


def save_wav(path, waveform: Waveform) -> None:
    clipped = np.clip(waveform.samples, -1.0, 32767.0 / INT16_SCALE)
    pcm = np.round(clipped * INT16_SCALE).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(waveform.sample_rate)
        wf.writeframes(pcm.tobytes())

"""Deterministic desk-scale paired video/audio data.

Correspondence rule ("band-tone"): a bright square sits in row band k and
the paired audio carries a tone whose frequency encodes k, so matched pairs
satisfy the band->frequency map and mismatched pairs violate it. A second,
quieter tone encodes the square's horizontal motion phase, making every
(band, phase) pairing unique so retrieval has a single correct answer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tvt
from .errors import ConfigError, ContractError
from .wav import Waveform, save_wav

BAND_FREQS = (1000.0, 2000.0, 3000.0, 4000.0)
PHASE_FREQS = (5000.0, 5600.0, 6200.0, 6800.0)
SQUARE = 8  # square side in pixels; also the row-band height
SQUARE_RGB = (0.95, 0.75, 0.55)
BACKGROUND = 0.05
MANIFEST_VERSION = 1


@dataclass
class SyntheticSpec:
    n_samples: int
    frame_size: int = 32
    frames: int = 4
    audio_seconds: float = 1.0
    sample_rate: int = 16384
    rule: str = "band-tone"
    seed: int = 0

    def __post_init__(self):
        if self.rule != "band-tone":
            raise ConfigError(f"unknown correspondence rule {self.rule!r}")
        if self.frame_size % SQUARE:
            raise ConfigError(f"frame_size must be a multiple of {SQUARE}")
        if self.n_samples < 0:
            raise ConfigError("n_samples must be >= 0")

    @property
    def n_bands(self) -> int:
        return len(BAND_FREQS)

    @property
    def n_phases(self) -> int:
        return len(PHASE_FREQS)


def sentiment_of_band(band: int, n_bands: int = len(BAND_FREQS)) -> float:
    """Band index mapped to a signed score; sign flips at the middle band."""
    return float(band - (n_bands - 1) / 2.0)


def _render_frames(spec: SyntheticSpec, band: int, phase: int, level: float, rng) -> np.ndarray:
    size = spec.frame_size
    slots = size // SQUARE
    # background tint tracks the sample's shared intensity level, so any
    # visible patch carries the pairing signature; jitter stays well below
    # the gap between adjacent levels
    tint = BACKGROUND + 0.3 * level + rng.uniform(0.0, 0.005, size=3)
    frames = np.empty((spec.frames, size, size, 3), dtype=np.float64)
    frames[:] = tint
    frames += rng.uniform(0.0, 0.01, size=frames.shape)
    r0 = band * SQUARE
    for t in range(spec.frames):
        c0 = ((phase + t) % slots) * SQUARE
        for ch, val in enumerate(SQUARE_RGB):
            frames[t, r0 : r0 + SQUARE, c0 : c0 + SQUARE, ch] = val
    return frames.astype(np.float32)


def _render_audio(spec: SyntheticSpec, band: int, phase: int, level: float, rng) -> Waveform:
    n = int(round(spec.audio_seconds * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    # tone loudness carries the same intensity level as the paired frames;
    # a quiet level-scaled sawtooth spreads deterministic energy over every
    # frequency patch, so any visible audio token reveals the level
    tone = (0.25 + 0.6 * level) * np.sin(2 * np.pi * BAND_FREQS[band] * t)
    tone += 0.15 * np.sin(2 * np.pi * PHASE_FREQS[phase] * t)
    tone += (0.002 + 0.01 * level) * (2.0 * ((55.0 * t) % 1.0) - 1.0)
    return Waveform(samples=tone, sample_rate=spec.sample_rate)


def _assign_combos(spec: SyntheticSpec, rng) -> list[tuple[int, int]]:
    combos = [(b, p) for b in range(spec.n_bands) for p in range(spec.n_phases)]
    order = rng.permutation(len(combos))
    return [combos[order[i % len(combos)]] for i in range(spec.n_samples)]


def generate_synthetic_dataset(spec: SyntheticSpec, out_dir, force: bool = False) -> Path:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ContractError(f"refusing to write into non-empty directory {out}")
    (out / "samples").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    combos = _assign_combos(spec, rng)

    ids = []
    sum_c = np.zeros(3)
    sumsq_c = np.zeros(3)
    n_pix = 0
    # spread intensity levels evenly, shuffled so level is independent of band
    levels = rng.permutation(spec.n_samples) / max(spec.n_samples - 1, 1) if spec.n_samples else []
    for i, (band, phase) in enumerate(combos):
        sid = f"{i:04d}"
        ids.append(sid)
        sdir = out / "samples" / sid
        sdir.mkdir(parents=True, exist_ok=True)
        level = float(levels[i])
        frames = _render_frames(spec, band, phase, level, rng)
        audio = _render_audio(spec, band, phase, level, rng)
        tvt.save(sdir / "frames.tvt", frames)
        save_wav(sdir / "audio.wav", audio)
        label = {
            "band": band,
            "phase": phase,
            "level": level,
            "freq_hz": BAND_FREQS[band],
            "phase_freq_hz": PHASE_FREQS[phase],
            "sentiment": sentiment_of_band(band, spec.n_bands),
        }
        (sdir / "label.json").write_text(json.dumps(label, sort_keys=True))
        flat = frames.reshape(-1, 3).astype(np.float64)
        sum_c += flat.sum(axis=0)
        sumsq_c += (flat * flat).sum(axis=0)
        n_pix += flat.shape[0]

    if n_pix:
        mean = sum_c / n_pix
        std = np.sqrt(np.maximum(sumsq_c / n_pix - mean * mean, 1e-12))
    else:
        mean, std = np.zeros(3), np.ones(3)
    manifest = {
        "version": MANIFEST_VERSION,
        "spec": asdict(spec),
        "samples": ids,
        "channel_mean": mean.tolist(),
        "channel_std": std.tolist(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True))
    return out


@dataclass
class Sample:
    sid: str
    frames: np.ndarray
    waveform: Waveform
    label: dict


class SyntheticDataset:
    """Eagerly loaded dataset directory (desk scale keeps this small)."""

    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no manifest.json under {self.root}")
        self.manifest = json.loads(manifest_path.read_text())
        if self.manifest.get("version") != MANIFEST_VERSION:
            raise ConfigError(f"unsupported dataset version {self.manifest.get('version')}")
        self.spec = SyntheticSpec(**self.manifest["spec"])
        self.channel_mean = np.asarray(self.manifest["channel_mean"], dtype=np.float32)
        self.channel_std = np.asarray(self.manifest["channel_std"], dtype=np.float32)
        self.samples = []
        from .wav import load_wav  # local import to keep module load light

        for sid in self.manifest["samples"]:
            sdir = self.root / "samples" / sid
            self.samples.append(
                Sample(
                    sid=sid,
                    frames=tvt.load(sdir / "frames.tvt"),
                    waveform=load_wav(sdir / "audio.wav"),
                    label=json.loads((sdir / "label.json").read_text()),
                )
            )

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i) -> Sample:
        return self.samples[i]

    def standardize(self, frames: np.ndarray) -> np.ndarray:
        return (frames - self.channel_mean) / self.channel_std

    def unstandardize(self, frames: np.ndarray) -> np.ndarray:
        return frames * self.channel_std + self.channel_mean


def uniform_stride_indices(total: int, want: int) -> np.ndarray:
    """floor(i * total / want) for i in [0, want)."""
    if total < 1 or want < 1:
        raise ContractError("frame counts must be positive")
    return (np.arange(want) * total) // want

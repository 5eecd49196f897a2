"""Energy-threshold speech span detection.

The signal is cut into 10 ms analysis frames; a frame is active when
10*log10(mean(s^2) + 1) >= threshold, with samples on the int16 scale so the
default threshold of 70 is meaningful. Active runs separated by short
silences merge; runs are then filtered to the [min, max] duration window,
splitting over-long runs into consecutive maximal events.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .wav import INT16_SCALE, Waveform


@dataclass
class SpanConfig:
    frame_seconds: float = 0.01
    energy_threshold: float = 70.0
    max_silence: float = 0.05
    min_duration: float = 0.3
    max_duration: float = 1.2


@dataclass(frozen=True)
class SpeechSpan:
    start_s: float
    end_s: float

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


def frame_energies(waveform: Waveform, cfg: SpanConfig) -> np.ndarray:
    """dB-like energy per non-overlapping analysis frame (partial tail dropped)."""
    frame_len = int(round(cfg.frame_seconds * waveform.sample_rate))
    n_frames = waveform.samples.size // frame_len
    frames = waveform.samples[: n_frames * frame_len].reshape(n_frames, frame_len)
    scaled = frames * INT16_SCALE
    return 10.0 * np.log10((scaled * scaled).mean(axis=1) + 1.0)


def detect_speech_spans(waveform: Waveform, cfg: SpanConfig | None = None):
    cfg = cfg or SpanConfig()
    frame_len = int(round(cfg.frame_seconds * waveform.sample_rate))
    frame_dur = frame_len / waveform.sample_rate
    energies = frame_energies(waveform, cfg)
    active = energies >= cfg.energy_threshold

    max_gap = math.floor(cfg.max_silence / frame_dur + 1e-9)
    min_frames = math.ceil(cfg.min_duration / frame_dur - 1e-9)
    max_frames = math.floor(cfg.max_duration / frame_dur + 1e-9)

    # Maximal active runs as half-open frame intervals, then gap merging.
    runs = []
    start = None
    for i, a in enumerate(active):
        if a and start is None:
            start = i
        elif not a and start is not None:
            runs.append([start, i])
            start = None
    if start is not None:
        runs.append([start, len(active)])

    merged = []
    for run in runs:
        if merged and run[0] - merged[-1][1] <= max_gap:
            merged[-1][1] = run[1]
        else:
            merged.append(run)

    spans = []
    for f0, f1 in merged:
        if f1 - f0 < min_frames:
            continue
        # Greedy fixed-width split of over-long runs; a short tail is dropped.
        chunk = f0
        while f1 - chunk >= min_frames:
            end = min(chunk + max_frames, f1)
            spans.append(SpeechSpan(start_s=chunk * frame_dur, end_s=end * frame_dur))
            chunk = end
    return spans


def spans_to_json(spans) -> str:
    return json.dumps([{"start_s": s.start_s, "end_s": s.end_s} for s in spans])


def spans_from_json(text: str):
    items = json.loads(text)
    spans = []
    prev_end = -math.inf
    for item in items:
        span = SpeechSpan(start_s=item["start_s"], end_s=item["end_s"])
        if span.start_s < prev_end:
            raise ContractError("speech spans must be sorted and non-overlapping")
        prev_end = span.end_s
        spans.append(span)
    return spans

import math
import wave as wave_mod

import numpy as np
import pytest

from avmae.errors import FormatError
from avmae.mel import (
    SpectrogramConfig,
    log_mel_spectrogram,
    mel_center_freqs,
    mel_filterbank,
    mel_power,
    mel_to_hz,
    hz_to_mel,
)
from avmae.spans import SpanConfig, SpeechSpan, detect_speech_spans, spans_from_json, spans_to_json
from avmae.wav import Waveform, load_wav, save_wav


def write_pcm16(path, samples_int16, rate=44100, channels=1):
    with wave_mod.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(np.asarray(samples_int16, dtype="<i2").tobytes())


class TestLoadWav:
    def test_one_second_silence(self, tmp_path):
        path = tmp_path / "s.wav"
        write_pcm16(path, np.zeros(44100, dtype=np.int16))
        w = load_wav(path)
        assert w.sample_rate == 44100
        assert w.samples.shape == (44100,)
        assert np.all(w.samples == 0.0)

    def test_full_scale_sample(self, tmp_path):
        path = tmp_path / "f.wav"
        write_pcm16(path, [32767])
        w = load_wav(path)
        assert w.samples[0] == pytest.approx(32767 / 32768, abs=1e-12)

    def test_stereo_averages_to_mono(self, tmp_path):
        path = tmp_path / "st.wav"
        frame = np.array([16384, -16384], dtype=np.int16)  # L=0.5, R=-0.5
        write_pcm16(path, frame, channels=2)
        w = load_wav(path)
        assert w.samples.tolist() == [0.0]

    def test_unsupported_bit_depth(self, tmp_path):
        path = tmp_path / "b8.wav"
        with wave_mod.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(1)
            wf.setframerate(8000)
            wf.writeframes(bytes(16))
        with pytest.raises(FormatError, match="PCM16"):
            load_wav(path)

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "g.wav"
        path.write_bytes(b"not a riff file at all")
        with pytest.raises(FormatError):
            load_wav(path)

    def test_truncated_data(self, tmp_path):
        path = tmp_path / "t.wav"
        write_pcm16(path, np.zeros(1000, dtype=np.int16))
        raw = path.read_bytes()
        path.write_bytes(raw[:-500])
        with pytest.raises((OSError, FormatError)):
            load_wav(path)

    def test_save_load_roundtrip(self, tmp_path):
        w = Waveform(samples=np.linspace(-0.9, 0.9, 777), sample_rate=16384)
        save_wav(tmp_path / "r.wav", w)
        back = load_wav(tmp_path / "r.wav")
        assert back.sample_rate == 16384
        assert np.max(np.abs(back.samples - w.samples)) <= 1.0 / 32768


class TestLogMel:
    def test_all_zero_input_hits_floor(self):
        cfg = SpectrogramConfig()
        w = Waveform(samples=np.zeros(22050), sample_rate=44100)
        spec = log_mel_spectrogram(w, cfg)
        assert np.all(spec.values == math.log(cfg.log_floor))

    def test_frame_count_formula(self):
        cfg = SpectrogramConfig()
        w = Waveform(samples=np.zeros(882000), sample_rate=44100)  # 20 s
        spec = log_mel_spectrogram(w, cfg)
        assert spec.values.shape == (1 + 882000 // 512, 128)
        assert spec.values.shape[0] == 1723

    def test_frame_count_short(self):
        cfg = SpectrogramConfig(sample_rate=16384)
        w = Waveform(samples=np.zeros(16384), sample_rate=16384)
        assert log_mel_spectrogram(w, cfg).values.shape[0] == 33

    def test_pure_tone_lands_on_nearest_mel_bin(self):
        cfg = SpectrogramConfig()
        t = np.arange(int(0.4 * 44100)) / 44100
        w = Waveform(samples=0.5 * np.sin(2 * np.pi * 1000.0 * t), sample_rate=44100)
        spec = log_mel_spectrogram(w, cfg)
        centers = mel_center_freqs(44100, 128)
        want = int(np.argmin(np.abs(centers - 1000.0)))
        got = spec.values.argmax(axis=1)
        assert np.all(got == want)

    def test_scaling_is_quadratic(self, rng):
        cfg = SpectrogramConfig(sample_rate=16384)
        x = rng.uniform(-0.3, 0.3, 8192)
        base = mel_power(Waveform(samples=x, sample_rate=16384), cfg)
        scaled = mel_power(Waveform(samples=2.5 * x, sample_rate=16384), cfg)
        rel = np.abs(scaled - 6.25 * base) / np.maximum(6.25 * base, 1e-300)
        assert rel.max() <= 1e-6

    def test_mel_scale_roundtrip(self):
        freqs = np.array([0.0, 440.0, 1000.0, 3500.0, 8000.0])
        assert np.allclose(mel_to_hz(hz_to_mel(freqs)), freqs, atol=1e-9)

    def test_filterbank_shape_and_coverage(self):
        fb = mel_filterbank(44100, 2048, 128)
        assert fb.shape == (128, 1025)
        assert (fb >= 0).all()
        assert (fb.sum(axis=1) > 0).all()


def naive_log_mel_oracle(samples, cfg):
    """Direct DFT sums and per-bin triangle construction, scalar loops."""
    n_fft, hop = cfg.n_fft, cfg.hop
    pad = n_fft // 2
    padded = np.concatenate([np.zeros(pad), samples, np.zeros(pad)])
    n_frames = 1 + len(samples) // hop
    window = np.array([0.5 * (1 - math.cos(2 * math.pi * i / n_fft)) for i in range(n_fft)])
    n_bins = 1 + n_fft // 2
    k = np.arange(n_fft)
    power = np.zeros((n_frames, n_bins))
    for f in range(n_frames):
        frame = padded[f * hop : f * hop + n_fft] * window
        for b in range(n_bins):
            angle = 2 * math.pi * b * k / n_fft
            re = float(np.dot(frame, np.cos(angle)))
            im = float(-np.dot(frame, np.sin(angle)))
            power[f, b] = re * re + im * im

    def to_mel(f):
        return f / (200.0 / 3) if f < 1000 else 15.0 + math.log(f / 1000.0) / (math.log(6.4) / 27.0)

    def to_hz(m):
        return m * (200.0 / 3) if m < 15.0 else 1000.0 * math.exp((math.log(6.4) / 27.0) * (m - 15.0))

    top = to_mel(cfg.sample_rate / 2)
    edges = [to_hz(top * i / (cfg.n_mels + 1)) for i in range(cfg.n_mels + 2)]
    freqs = [cfg.sample_rate / 2 * b / (n_bins - 1) for b in range(n_bins)]
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        for b, fr in enumerate(freqs):
            if lo < fr <= mid:
                fb[m, b] = (fr - lo) / (mid - lo)
            elif mid < fr < hi:
                fb[m, b] = (hi - fr) / (hi - mid)
        fb[m] *= 2.0 / (hi - lo)
    return np.log(power @ fb.T + cfg.log_floor)


def test_log_mel_matches_naive_dft_oracle(rng):
    cfg = SpectrogramConfig(sample_rate=8000, n_fft=256, hop=64, n_mels=24)
    x = rng.uniform(-0.5, 0.5, int(0.35 * 8000))
    fast = log_mel_spectrogram(Waveform(samples=x, sample_rate=8000), cfg).values
    slow = naive_log_mel_oracle(x, cfg)
    rel = np.abs(fast - slow) / np.maximum(np.abs(slow), 1e-12)
    assert rel.max() <= 1e-6


def tone(duration, sr, amp=0.5, freq=440.0):
    t = np.arange(int(duration * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def silence(duration, sr):
    return np.zeros(int(duration * sr))


class TestSpans:
    def test_silence_gives_no_spans(self):
        w = Waveform(samples=silence(2.0, 16000), sample_rate=16000)
        assert detect_speech_spans(w) == []

    def test_single_tone_span(self):
        sr = 16000
        x = np.concatenate([silence(1.0, sr), tone(0.5, sr, amp=0.9), silence(1.0, sr)])
        spans = detect_speech_spans(Waveform(samples=x, sample_rate=sr))
        assert len(spans) == 1
        (s,) = spans
        assert abs(s.start_s - 1.0) <= 0.011
        assert abs(s.end_s - 1.5) <= 0.011

    def test_long_tone_splits(self):
        sr = 16000
        spans = detect_speech_spans(Waveform(samples=tone(3.0, sr, amp=0.9), sample_rate=sr))
        got = [(round(s.start_s, 3), round(s.end_s, 3)) for s in spans]
        assert got == [(0.0, 1.2), (1.2, 2.4), (2.4, 3.0)]

    def test_short_burst_dropped(self):
        sr = 16000
        x = np.concatenate([silence(0.5, sr), tone(0.1, sr, amp=0.9), silence(0.5, sr)])
        assert detect_speech_spans(Waveform(samples=x, sample_rate=sr)) == []

    def test_small_gap_merges(self):
        sr = 16000
        x = np.concatenate(
            [tone(0.3, sr, amp=0.9), silence(0.04, sr), tone(0.3, sr, amp=0.9)]
        )
        spans = detect_speech_spans(Waveform(samples=x, sample_rate=sr))
        assert len(spans) == 1

    def test_durations_and_ordering_invariant(self, rng):
        for case in range(30):
            r = np.random.default_rng(case)
            pieces = []
            for _ in range(r.integers(2, 8)):
                dur = float(r.uniform(0.05, 0.9))
                amp = float(10 ** r.uniform(-2.2, -0.2))
                pieces.append(tone(dur, 8000, amp=amp, freq=300.0))
            spans = detect_speech_spans(Waveform(samples=np.concatenate(pieces), sample_rate=8000))
            prev_end = -1.0
            for s in spans:
                assert 0.3 - 1e-9 <= s.duration <= 1.2 + 1e-9
                assert s.start_s >= prev_end - 1e-12
                prev_end = s.end_s

    def test_json_roundtrip(self):
        spans = [SpeechSpan(0.0, 1.0), SpeechSpan(1.5, 2.0)]
        assert spans_from_json(spans_to_json(spans)) == spans


def brute_force_span_oracle(samples, sr, cfg):
    """Frame-by-frame scalar re-derivation of the detector rules."""
    frame_len = int(round(cfg.frame_seconds * sr))
    frame_dur = frame_len / sr
    n = len(samples) // frame_len
    active = []
    for i in range(n):
        acc = 0.0
        for s in samples[i * frame_len : (i + 1) * frame_len]:
            v = float(s) * 32768.0
            acc += v * v
        active.append(10.0 * math.log10(acc / frame_len + 1.0) >= cfg.energy_threshold)
    max_gap = math.floor(cfg.max_silence / frame_dur + 1e-9)
    min_f = math.ceil(cfg.min_duration / frame_dur - 1e-9)
    max_f = math.floor(cfg.max_duration / frame_dur + 1e-9)

    runs = []
    i = 0
    while i < n:
        if not active[i]:
            i += 1
            continue
        j = i
        while j < n and active[j]:
            j += 1
        runs.append([i, j])
        i = j
    merged = []
    for run in runs:
        if merged and run[0] - merged[-1][1] <= max_gap:
            merged[-1][1] = run[1]
        else:
            merged.append(run)
    out = []
    for f0, f1 in merged:
        if f1 - f0 < min_f:
            continue
        c = f0
        while f1 - c >= min_f:
            e = min(c + max_f, f1)
            out.append((c * frame_dur, e * frame_dur))
            c = e
    return out


def test_detector_matches_brute_force_oracle_on_100_signals():
    cfg = SpanConfig()
    sr = 8000
    for case in range(100):
        r = np.random.default_rng([77, case])
        pieces = []
        for _ in range(r.integers(2, 7)):
            dur = float(r.uniform(0.05, 0.7))
            amp = float(10 ** r.uniform(-2.0, -0.3))
            pieces.append(tone(dur, sr, amp=amp, freq=440.0))
        x = np.concatenate(pieces)
        got = [(s.start_s, s.end_s) for s in detect_speech_spans(Waveform(samples=x, sample_rate=sr), cfg)]
        want = brute_force_span_oracle(x, sr, cfg)
        assert len(got) == len(want), f"case {case}: {got} vs {want}"
        for (a, b), (c, d) in zip(got, want):
            assert abs(a - c) < 1e-9 and abs(b - d) < 1e-9

"""Stage-latency micro-benchmark: spectrogram (FFT), tokenization, encoder.

Only the stage decomposition and scaling trends are meaningful; absolute
milliseconds depend entirely on the host.
"""

from __future__ import annotations

import time

import numpy as np

from .embed import embed_tokens
from .mel import SpectrogramConfig, log_mel_spectrogram
from .model import Model
from .modelcfg import ModelConfig
from .patches import patchify_frames, patchify_spectrogram
from .tensor import Tensor
from .wav import Waveform

STAGES = ("fft", "tokenize", "encode")


def _timed(fn, runs: int):
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1000.0)
    med = float(np.median(samples))
    mad = float(np.median(np.abs(np.asarray(samples) - med)))
    return {"median_ms": med, "mad_ms": mad}


def bench_latency(cfg: ModelConfig, input_lengths=((10.0, 4), (20.0, 8)), runs: int = 20, seed: int = 0) -> dict:
    """Median/MAD wall-clock per stage for each (audio seconds, frames) input."""
    from dataclasses import replace

    # grow the positional tables to cover the longest benchmark input
    frames_needed = max(cfg.frames, max(n for _, n in input_lengths))
    t_needed = cfg.audio_t_max
    for seconds, _ in input_lengths:
        t = 1 + int(seconds * cfg.sample_rate) // cfg.hop
        t_needed = max(t_needed, -(-t // cfg.audio_patch[0]))
    cfg = replace(cfg, frames=frames_needed, audio_t_max=t_needed)
    model = Model(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    spec_cfg = SpectrogramConfig(
        sample_rate=cfg.sample_rate, n_fft=cfg.n_fft, hop=cfg.hop, n_mels=cfg.n_mels
    )
    entries = []
    for seconds, n_frames in input_lengths:
        wave = Waveform(
            samples=rng.uniform(-0.5, 0.5, int(seconds * cfg.sample_rate)),
            sample_rate=cfg.sample_rate,
        )
        frames = rng.standard_normal(
            (n_frames, cfg.image_size, cfg.image_size, 3)
        ).astype(np.float32)

        fft_stage = _timed(lambda: log_mel_spectrogram(wave, spec_cfg), runs)
        spec = log_mel_spectrogram(wave, spec_cfg)

        def tokenize():
            v_vec, v_coords = patchify_frames(frames, cfg.vision_patch)
            a_vec, a_coords = patchify_spectrogram(spec, cfg.audio_patch)
            emb_v = embed_tokens(Tensor(v_vec.astype(np.float32)), v_coords, model.tables)
            emb_a = embed_tokens(Tensor(a_vec.astype(np.float32)), a_coords, model.tables)
            return emb_v, emb_a

        tok_stage = _timed(tokenize, runs)
        emb_v, emb_a = tokenize()
        ev = emb_v.detach()
        ea = emb_a.detach()
        enc_stage = _timed(lambda: model.encode(ev, ea), runs)
        tokens = 1 + emb_v.shape[0] + emb_a.shape[0]
        entries.append(
            {
                "audio_seconds": seconds,
                "frames": n_frames,
                "tokens": int(tokens),
                "stages": {"fft": fft_stage, "tokenize": tok_stage, "encode": enc_stage},
            }
        )
    return {"runs": runs, "preset": {"d_enc": cfg.d_enc, "layers": cfg.n_enc_layers}, "entries": entries}

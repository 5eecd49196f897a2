"""Built-in verification: gradient checks, oracle equivalences, invariants.

Every oracle here is an independent re-derivation (naive DFT matrices,
scalar loops, brute-force sorts) so a fault in the fast path cannot hide.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

from . import tensor as tensor_mod
from .embed import embed_tokens
from .gradcheck import finite_difference_check
from .masking import sample_mask_plan
from .mel import SpectrogramConfig, log_mel_spectrogram, mel_to_hz, hz_to_mel
from .model import Block, Model
from .modelcfg import ModelConfig
from .objectives import mae_loss, vam_loss
from .optim import AdamHyper, AdamW, cosine_lr
from .patches import patchify_frames, patchify_spectrogram, unpatchify_frames
from .spans import SpanConfig, detect_speech_spans
from .tensor import Tensor, concat
from .evaluate import rank_candidates
from .wav import Waveform

SCHEMA_VERSION = 1
GRAD_TOL = 1e-4
N_INSTANCES = 20


def _check(name, module, passed, magnitude=None, detail=None, op=None):
    return {
        "name": name,
        "module": module,
        "op": op,
        "passed": bool(passed),
        "magnitude": None if magnitude is None else float(magnitude),
        "detail": detail,
    }


# -- gradient checks -----------------------------------------------------------


def _contract(out: Tensor, rng) -> Tensor:
    """Reduce an op output to a scalar with a fixed random weighting."""
    w = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
    return (out * w).sum()


def _op_cases():
    """op name -> (input shapes, builder(inputs, rng) -> scalar, input transform)."""

    def t_pos(x):
        return np.abs(x) + 0.5

    return {
        "add": ([(3, 4), (4,)], lambda i, r: _contract(i[0] + i[1], r), None),
        "sub": ([(3, 4), (3, 4)], lambda i, r: _contract(i[0] - i[1], r), None),
        "mul": ([(3, 4), (3, 1)], lambda i, r: _contract(i[0] * i[1], r), None),
        "div": ([(3, 4), (3, 4)], lambda i, r: _contract(i[0] / i[1], r), t_pos),
        "pow": ([(3, 4)], lambda i, r: _contract(i[0] ** 3, r), None),
        "matmul": ([(4, 5), (5, 3)], lambda i, r: _contract(i[0] @ i[1], r), None),
        "matmul_batched": (
            [(2, 4, 5), (5, 3)],
            lambda i, r: _contract(i[0] @ i[1], r),
            None,
        ),
        "reshape": ([(3, 4)], lambda i, r: _contract(i[0].reshape(2, 6), r), None),
        "transpose": (
            [(2, 3, 4)],
            lambda i, r: _contract(i[0].transpose((2, 0, 1)), r),
            None,
        ),
        "getitem": ([(4, 5)], lambda i, r: _contract(i[0][1:3, ::2], r), None),
        "gather": (
            [(5, 3)],
            lambda i, r: _contract(i[0].gather_tokens(np.array([0, 2, 2, 4])), r),
            None,
        ),
        "concat": (
            [(2, 3), (4, 3)],
            lambda i, r: _contract(concat([i[0], i[1]], axis=0), r),
            None,
        ),
        "sum": ([(3, 4)], lambda i, r: _contract(i[0].sum(axis=1), r), None),
        "mean": ([(3, 4)], lambda i, r: _contract(i[0].mean(axis=0, keepdims=True), r), None),
        "exp": ([(3, 4)], lambda i, r: _contract(i[0].exp(), r), None),
        "log": ([(3, 4)], lambda i, r: _contract(i[0].log(), r), t_pos),
        "sigmoid": ([(3, 4)], lambda i, r: _contract(i[0].sigmoid(), r), None),
        "gelu": ([(3, 4)], lambda i, r: _contract(i[0].gelu(), r), None),
        "softmax": ([(3, 5)], lambda i, r: _contract(i[0].softmax(axis=-1), r), None),
        "layer_norm": (
            [(4, 6), (6,), (6,)],
            lambda i, r: _contract(i[0].layer_norm(i[1], i[2]), r),
            None,
        ),
    }


def gradcheck_op(name: str, seed: int = 0, n: int = N_INSTANCES) -> float:
    shapes, builder, transform = _op_cases()[name]
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    worst = 0.0
    for _ in range(n):
        inputs = []
        for shape in shapes:
            data = rng.standard_normal(shape)
            if transform is not None:
                data = transform(data)
            inputs.append(Tensor(data, requires_grad=True, dtype=np.float64))
        # the contraction weights must be identical on every re-evaluation
        wseed = int(rng.integers(2**31))
        err = finite_difference_check(
            lambda: builder(inputs, np.random.default_rng(wseed)), inputs
        )
        worst = max(worst, err)
    return worst


def gradcheck_attention_block(seed: int = 0, n: int = 5) -> float:
    worst = 0.0
    rng = np.random.default_rng([seed, 77])
    for _ in range(n):
        blk = Block(8, 2, 2, rng, dtype=np.float64)
        x = Tensor(rng.standard_normal((1, 5, 8)), requires_grad=True, dtype=np.float64)
        w = rng.standard_normal((1, 5, 8))
        inputs = [x] + list(blk.named().values())

        def fn():
            return (blk(x) * Tensor(w, dtype=np.float64)).sum()

        worst = max(worst, finite_difference_check(fn, inputs, max_coords=6, rng=rng))
    return worst


def _e2e_config() -> ModelConfig:
    return ModelConfig(
        d_enc=8,
        n_enc_layers=1,
        d_dec=8,
        n_dec_layers=1,
        n_heads_enc=2,
        n_heads_dec=2,
        mlp_ratio=2,
        vision_patch=4,
        audio_patch=(4, 4),
        frames=1,
        image_size=8,
        n_mels=8,
        audio_t_max=2,
        sample_rate=16384,
    )


def gradcheck_end_to_end(seed: int = 0, n: int = N_INSTANCES, coords_per_tensor: int = 3) -> float:
    """Finite differences on the combined two-pass loss of a 4+4-token model."""
    cfg = _e2e_config()
    worst = 0.0
    for inst in range(n):
        rng = np.random.default_rng([seed, 5, inst])
        model = Model(cfg, seed=int(rng.integers(2**31)), dtype=np.float64)
        frames = rng.standard_normal((2, 1, 8, 8, 3))
        vis_list, coords_v = [], None
        for b in range(2):
            vec, coords_v = patchify_frames(frames[b], cfg.vision_patch)
            vis_list.append(vec)
        vis = Tensor(np.stack(vis_list), requires_grad=True, dtype=np.float64)
        aud_np = rng.standard_normal((2, 4, 16))
        aud = Tensor(aud_np, requires_grad=True, dtype=np.float64)
        spec_like = rng.standard_normal((8, 8))
        from .mel import Spectrogram

        _, coords_a = patchify_spectrogram(
            Spectrogram(values=spec_like, frame_rate=32.0), cfg.audio_patch
        )
        labels = np.array([1.0, 0.0])
        plans_v = [sample_mask_plan(coords_v, 0.75, seed=[seed, 6, inst, b]) for b in range(2)]
        plans_a = [sample_mask_plan(coords_a, 0.75, seed=[seed, 7, inst, b]) for b in range(2)]
        vis_idx = np.stack([p.visible for p in plans_v])
        aud_idx = np.stack([p.visible for p in plans_a])
        # reconstruction targets are constants, frozen before perturbation
        target_v = vis.data.copy()
        target_a = aud.data.copy()

        def fn():
            emb_v = embed_tokens(vis, coords_v, model.tables)
            emb_a = embed_tokens(aud, coords_a, model.tables)
            hidden = model.encode(emb_v, emb_a)
            p = model.vam_head(hidden[:, 0, :]).reshape(-1)
            loss_vam = vam_loss(p, labels)
            h2 = model.encode(
                emb_v.gather_tokens(vis_idx), emb_a.gather_tokens(aud_idx)
            )
            k = vis_idx.shape[1]
            rec_v = model.decode_modality(h2[:, 1 : 1 + k, :], plans_v, coords_v)
            rec_a = model.decode_modality(h2[:, 1 + k :, :], plans_a, coords_a)
            loss_mae, _ = mae_loss(rec_v, target_v, plans_v, rec_a, target_a, plans_a)
            return loss_vam * 1.0 + loss_mae * 0.3

        inputs = list(model.params().values()) + [vis, aud]
        err = finite_difference_check(fn, inputs, max_coords=coords_per_tensor, rng=rng)
        worst = max(worst, err)
    return worst


# -- oracles --------------------------------------------------------------------


def naive_log_mel(samples: np.ndarray, cfg: SpectrogramConfig) -> np.ndarray:
    """Direct DFT-sum spectrogram through a loop-built filterbank."""
    n_fft, hop = cfg.n_fft, cfg.hop
    pad = n_fft // 2
    padded = np.concatenate([np.zeros(pad), samples, np.zeros(pad)])
    n_frames = 1 + len(samples) // hop
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft))
    n_bins = 1 + n_fft // 2
    angles = 2.0 * np.pi * np.outer(np.arange(n_bins), np.arange(n_fft)) / n_fft
    cos_m, sin_m = np.cos(angles), np.sin(angles)
    power = np.empty((n_frames, n_bins))
    for i in range(n_frames):
        frame = padded[i * hop : i * hop + n_fft] * window
        re = cos_m @ frame
        im = -sin_m @ frame
        power[i] = re * re + im * im

    # loop-built Slaney triangles
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2))
    freqs = np.linspace(0.0, cfg.sample_rate / 2.0, n_bins)
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        for b, f in enumerate(freqs):
            if lo < f < mid:
                fb[m, b] = (f - lo) / (mid - lo)
            elif mid <= f < hi:
                fb[m, b] = (hi - f) / (hi - mid)
            elif f == mid:
                fb[m, b] = 1.0
        fb[m] *= 2.0 / (hi - lo)
    return np.log(power @ fb.T + cfg.log_floor)


def brute_force_spans(waveform: Waveform, cfg: SpanConfig):
    """Scalar-loop reimplementation of the span rules; returns (start, end) pairs."""
    frame_len = int(round(cfg.frame_seconds * waveform.sample_rate))
    frame_dur = frame_len / waveform.sample_rate
    n = len(waveform.samples) // frame_len
    active = []
    for i in range(n):
        acc = 0.0
        for s in waveform.samples[i * frame_len : (i + 1) * frame_len]:
            v = s * 32768.0
            acc += v * v
        active.append(10.0 * math.log10(acc / frame_len + 1.0) >= cfg.energy_threshold)
    max_gap = math.floor(cfg.max_silence / frame_dur + 1e-9)
    min_f = math.ceil(cfg.min_duration / frame_dur - 1e-9)
    max_f = math.floor(cfg.max_duration / frame_dur + 1e-9)
    merged = []
    i = 0
    while i < n:
        if not active[i]:
            i += 1
            continue
        j = i
        last_active = i
        while j < n:
            if active[j]:
                last_active = j
                j += 1
            elif j - last_active <= max_gap and any(active[j : j + max_gap + 1]):
                j += 1
            else:
                break
        merged.append((i, last_active + 1))
        i = j
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


def patch_roundtrip_exact(seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    frames = rng.standard_normal((2, 16, 24, 3))
    vec, coords = patchify_frames(frames, 8)
    back = unpatchify_frames(vec, coords, 8)
    return bool(np.array_equal(back, frames))


def ranking_matches_brute_force(seed: int = 0, n_cases: int = 50) -> bool:
    rng = np.random.default_rng(seed)
    for _ in range(n_cases):
        n = int(rng.integers(2, 12))
        scores = np.round(rng.random(n) * 4) / 4  # coarse grid forces ties
        brute = sorted(range(n), key=lambda i: (-scores[i], i))
        if not np.array_equal(rank_candidates(scores), np.asarray(brute)):
            return False
    return True


# -- invariants -------------------------------------------------------------------


def adam_two_step_error() -> float:
    """Scalar hand-rolled Adam reference vs the array implementation."""
    hp = AdamHyper(lr=1e-2, weight_decay=0.0)
    p = Tensor(np.array([0.7], dtype=np.float64), requires_grad=True)
    opt = AdamW({"w.weight": p}, hp)
    x, m, v = 0.7, 0.0, 0.0
    g = 0.3
    for t in (1, 2):
        p.grad = np.array([g])
        opt.step()
        m = hp.beta1 * m + (1 - hp.beta1) * g
        v = hp.beta2 * v + (1 - hp.beta2) * g * g
        mh = m / (1 - hp.beta1**t)
        vh = v / (1 - hp.beta2**t)
        x -= hp.lr * mh / (math.sqrt(vh) + hp.eps)
    return abs(float(p.data[0]) - x)


def run_selfcheck(seed: int = 0, inject_fault: str | None = None) -> dict:
    """Execute every check; returns the machine-readable report."""
    restore = None
    if inject_fault == "gelu-grad":
        original = tensor_mod._gelu_grad
        tensor_mod._gelu_grad = lambda x: -original(x)
        restore = ("gelu", original)
    elif inject_fault is not None:
        raise ValueError(f"unknown fault {inject_fault!r}")
    try:
        return _run_all(seed)
    finally:
        if restore is not None:
            tensor_mod._gelu_grad = restore[1]


def _run_all(seed: int) -> dict:
    checks = []

    for op in _op_cases():
        err = gradcheck_op(op, seed)
        checks.append(
            _check(f"gradcheck.{op}", "numerics", err <= GRAD_TOL, err, op=op,
                   detail=f"worst rel err over {N_INSTANCES} instances")
        )
    err = gradcheck_attention_block(seed)
    checks.append(_check("gradcheck.attention_block", "tvlt_model", err <= GRAD_TOL, err, op="encode"))
    err = gradcheck_end_to_end(seed)
    checks.append(_check("gradcheck.end_to_end", "objectives", err <= GRAD_TOL, err, op="combined_loss"))

    # mel oracle on a short random signal at the production configuration
    rng = np.random.default_rng([seed, 31])
    cfg = SpectrogramConfig()
    wave = Waveform(samples=rng.uniform(-0.5, 0.5, int(0.25 * cfg.sample_rate)), sample_rate=cfg.sample_rate)
    fast = log_mel_spectrogram(wave, cfg).values
    slow = naive_log_mel(wave.samples, cfg)
    rel = float(np.max(np.abs(fast - slow) / np.maximum(np.abs(slow), 1e-12)))
    checks.append(_check("oracle.mel_dft", "audio_frontend", rel <= 1e-6, rel, op="log_mel_spectrogram"))

    # span detector vs scalar-loop oracle on random synthetic signals
    span_cfg = SpanConfig()
    ok, worst_case = True, None
    for case in range(100):
        cr = np.random.default_rng([seed, 32, case])
        sr = 8000
        pieces = []
        for _ in range(int(cr.integers(2, 7))):
            dur = float(cr.uniform(0.05, 0.7))
            amp = float(10 ** cr.uniform(-2, -0.3))
            tt = np.arange(int(dur * sr)) / sr
            pieces.append(amp * np.sin(2 * np.pi * 440 * tt))
        w = Waveform(samples=np.concatenate(pieces), sample_rate=sr)
        got = [(s.start_s, s.end_s) for s in detect_speech_spans(w, span_cfg)]
        want = brute_force_spans(w, span_cfg)
        if not (len(got) == len(want) and all(
            abs(a - c) < 1e-9 and abs(b - d) < 1e-9 for (a, b), (c, d) in zip(got, want)
        )):
            ok, worst_case = False, case
            break
    checks.append(
        _check("oracle.speech_spans", "audio_frontend", ok, op="detect_speech_spans",
               detail=None if ok else f"mismatch on case {worst_case}")
    )

    checks.append(
        _check("oracle.patch_roundtrip", "patch_tokenizer", patch_roundtrip_exact(seed), op="patchify_frames")
    )
    checks.append(
        _check("oracle.ranking", "trainer", ranking_matches_brute_force(seed), op="evaluate_retrieval")
    )

    # invariants
    rng = np.random.default_rng([seed, 33])
    sm = Tensor(rng.standard_normal((50, 7))).softmax(axis=-1).data
    sm_err = float(np.max(np.abs(sm.sum(axis=-1) - 1.0)))
    big = Tensor(np.array([[1000.0, 0.0]])).softmax(axis=-1).data
    sm_ok = sm_err <= 1e-6 and np.isfinite(big).all() and abs(big[0, 0] - 1.0) < 1e-9
    checks.append(_check("invariant.softmax_rows", "numerics", sm_ok, sm_err, op="softmax"))

    x = Tensor(rng.standard_normal((40, 16)) * 3 + 1)
    normed = x.layer_norm(Tensor(np.ones(16, dtype=np.float32)), Tensor(np.zeros(16, dtype=np.float32))).data
    mean_err = float(np.max(np.abs(normed.mean(axis=-1))))
    var_err = float(np.max(np.abs(normed.var(axis=-1) - 1.0)))
    checks.append(
        _check("invariant.layer_norm_stats", "numerics", mean_err <= 1e-6 and var_err <= 1e-4,
               max(mean_err, var_err), op="layer_norm")
    )

    frames = rng.standard_normal((3, 16, 16, 3))
    _, coords = patchify_frames(frames, 8)
    plan_ok = True
    for k in range(20):
        p1 = sample_mask_plan(coords, 0.75, seed=[seed, 34, k])
        p2 = sample_mask_plan(coords, 0.75, seed=[seed, 34, k])
        per_frame = 4
        counts = [np.sum((p1.masked >= f * per_frame) & (p1.masked < (f + 1) * per_frame)) for f in range(3)]
        plan_ok &= np.array_equal(p1.masked, p2.masked)
        plan_ok &= all(c == 3 for c in counts)
        plan_ok &= p1.visible.size + p1.masked.size == len(coords)
    checks.append(_check("invariant.mask_plan", "patch_tokenizer", plan_ok, op="sample_mask_plan"))

    adam_err = adam_two_step_error()
    checks.append(_check("invariant.adam_reference", "numerics", adam_err <= 1e-12, adam_err, op="adam_step"))

    lr_ok = (
        cosine_lr(0, 100, 1.0) == 1.0
        and abs(cosine_lr(100, 100, 1.0)) < 1e-15
        and abs(cosine_lr(50, 100, 1.0) - 0.5) < 1e-12
    )
    checks.append(_check("invariant.cosine_endpoints", "numerics", lr_ok, op="cosine_lr"))

    report = {
        "schema_version": SCHEMA_VERSION,
        "passed": all(c["passed"] for c in checks),
        "checks": checks,
    }
    return report

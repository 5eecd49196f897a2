"""Pretraining and finetuning loops.

Each pretraining step runs the matching objective on full token sequences
and the reconstruction objective on visible subsets as two separate forward
passes, sums their gradients, and takes one AdamW step on the cosine
schedule. All randomness flows from per-(seed, step, sample) generator
streams, so a fixed seed reproduces the loss log byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import embed_tokens
from .errors import ConfigError, ContractError, NumericError
from .masking import sample_mask_plan
from .mel import SpectrogramConfig, log_mel_spectrogram
from .model import MATCHING, MULTILABEL, HeadKind, Model, TaskHead
from .modelcfg import JOINT, ModelConfig
from .objectives import LossReport, make_vam_batch, mae_loss, vam_loss
from .optim import AdamHyper, AdamW, cosine_lr
from .patches import patchify_frames, patchify_spectrogram
from .spans import SpanConfig, detect_speech_spans
from .synthetic import uniform_stride_indices
from .tensor import Tensor

OBJECTIVES = ("vam", "mae", "both")


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 8
    base_lr: float = 5e-3
    warmup_steps: int = 0
    weight_decay: float = 0.001
    lambda_vam: float = 1.0
    lambda_mae: float = 0.3
    mask_ratio: float = 0.75
    span_prob: float = 0.15
    objective: str = "both"
    literal_vam: bool = False
    per_element_mae: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.steps < 1 or self.batch_size < 2:
            raise ConfigError("need steps >= 1 and batch_size >= 2")

    @property
    def weights(self) -> tuple[float, float]:
        if self.objective == "vam":
            return self.lambda_vam, 0.0
        if self.objective == "mae":
            return 0.0, self.lambda_mae
        return self.lambda_vam, self.lambda_mae


class TokenCache:
    """Per-sample patch vectors, shared grid coordinates, and speech spans.

    Token geometry is identical across samples of one dataset, so the
    coordinates are computed once. Vision patches use the dataset's
    per-channel standardization; audio patches are standardized by scalar
    mean/std over the dataset's log-mel values, which keeps reconstruction
    targets near unit scale.
    """

    def __init__(self, dataset, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        spec_cfg = SpectrogramConfig(
            sample_rate=cfg.sample_rate, n_fft=cfg.n_fft, hop=cfg.hop, n_mels=cfg.n_mels
        )
        self.vision = []
        self.audio = []
        self.spans = []
        self.labels = []
        self.vision_coords = None
        self.audio_coords = None
        for sample in dataset:
            total = sample.frames.shape[0]
            picked = sample.frames[uniform_stride_indices(total, cfg.frames)]
            v_vec, v_coords = patchify_frames(
                dataset.standardize(picked), cfg.vision_patch
            )
            spec = log_mel_spectrogram(sample.waveform, spec_cfg)
            a_vec, a_coords = patchify_spectrogram(spec, cfg.audio_patch)
            if self.vision_coords is None:
                self.vision_coords, self.audio_coords = v_coords, a_coords
            elif (len(v_coords) != len(self.vision_coords)
                  or len(a_coords) != len(self.audio_coords)):
                raise ContractError("samples disagree on token geometry")
            self.vision.append(v_vec.astype(dtype))
            self.audio.append(a_vec)
            self.spans.append(detect_speech_spans(sample.waveform, SpanConfig()))
            self.labels.append(sample.label)
        if self.audio:
            stacked = np.concatenate([a.reshape(-1) for a in self.audio])
            self.audio_mean = float(stacked.mean())
            self.audio_std = float(max(stacked.std(), 1e-6))
        else:
            self.audio_mean, self.audio_std = 0.0, 1.0
        self.audio = [
            ((a - self.audio_mean) / self.audio_std).astype(dtype) for a in self.audio
        ]

    def __len__(self):
        return len(self.vision)


def _embed_pair(model: Model, cache: TokenCache, vis: np.ndarray, aud: np.ndarray):
    emb_v = embed_tokens(Tensor(vis, dtype=model.dtype), cache.vision_coords, model.tables)
    emb_a = embed_tokens(Tensor(aud, dtype=model.dtype), cache.audio_coords, model.tables)
    return emb_v, emb_a


def matching_probs(model: Model, cache: TokenCache, pair_batch, head=None) -> np.ndarray:
    """Forward a pair batch through the encoder and a matching head."""
    vis = np.stack([cache.vision[it.vision] for it in pair_batch.items])
    aud = np.stack([cache.audio[it.audio] for it in pair_batch.items])
    emb_v, emb_a = _embed_pair(model, cache, vis, aud)
    hidden = model.encode(emb_v, emb_a)
    cls = hidden[:, 0, :]
    p = model.vam_head(cls) if head is None else head(cls)
    return p.data.reshape(-1)


def _batch_indices(rng, n: int, batch_size: int) -> np.ndarray:
    """Sample without replacement; batches beyond the dataset size cycle
    through whole permutations so every sample appears evenly."""
    if batch_size < n:
        return rng.choice(n, size=batch_size, replace=False)
    parts = [rng.permutation(n) for _ in range(-(-batch_size // n))]
    return np.concatenate(parts)[:batch_size]


def pretrain(model: Model, dataset, tcfg: TrainConfig, log_stream=None):
    """Run the two-objective schedule; returns (reports, optimizer)."""
    if len(dataset) == 0:
        raise ContractError("cannot pretrain on an empty dataset")
    cache = dataset if isinstance(dataset, TokenCache) else TokenCache(dataset, model.cfg)
    lam_vam, lam_mae = tcfg.weights
    hyper = AdamHyper(lr=tcfg.base_lr, weight_decay=tcfg.weight_decay)
    opt = AdamW(model.params(), hyper)
    reports = []
    for step in range(tcfg.steps):
        rng = np.random.default_rng([tcfg.seed, 1, step])
        indices = _batch_indices(rng, len(cache), tcfg.batch_size)
        lr = cosine_lr(step, tcfg.steps, tcfg.base_lr, tcfg.warmup_steps)

        vam_val, vam_len = 0.0, 0
        if lam_vam > 0.0:
            pair = make_vam_batch([(int(i), int(i)) for i in indices], rng)
            vis = np.stack([cache.vision[it.vision] for it in pair.items])
            aud = np.stack([cache.audio[it.audio] for it in pair.items])
            emb_v, emb_a = _embed_pair(model, cache, vis, aud)
            hidden = model.encode(emb_v, emb_a)
            vam_len = hidden.shape[1]
            p = model.vam_head(hidden[:, 0, :]).reshape(-1)
            loss_v = vam_loss(p, pair.labels, literal=tcfg.literal_vam)
            (loss_v * lam_vam).backward()
            vam_val = float(loss_v.data)

        mae_val, mae_len = 0.0, 0
        parts = {"mae_vision": 0.0, "mae_audio": 0.0, "n_masked_vision": 0, "n_masked_audio": 0}
        if lam_mae > 0.0:
            plans_v = [
                sample_mask_plan(
                    cache.vision_coords, tcfg.mask_ratio, seed=[tcfg.seed, 2, step, pos]
                )
                for pos in range(len(indices))
            ]
            plans_a = [
                sample_mask_plan(
                    cache.audio_coords,
                    tcfg.mask_ratio,
                    seed=[tcfg.seed, 3, step, pos],
                    spans=cache.spans[int(i)],
                    span_prob=tcfg.span_prob,
                )
                for pos, i in enumerate(indices)
            ]
            vis = np.stack([cache.vision[int(i)] for i in indices])
            aud = np.stack([cache.audio[int(i)] for i in indices])
            emb_v, emb_a = _embed_pair(model, cache, vis, aud)
            vis_idx = np.stack([p.visible for p in plans_v])
            aud_idx = np.stack([p.visible for p in plans_a])
            hidden = model.encode(
                emb_v.gather_tokens(vis_idx), emb_a.gather_tokens(aud_idx)
            )
            mae_len = hidden.shape[1]
            k = vis_idx.shape[1]
            slice_v = hidden[:, 1 : 1 + k, :]
            slice_a = hidden[:, 1 + k :, :]
            if model.cfg.decoder_arch == JOINT:
                rec_v, rec_a = model.decode_joint(
                    slice_v, plans_v, cache.vision_coords,
                    slice_a, plans_a, cache.audio_coords,
                )
            else:
                rec_v = model.decode_modality(slice_v, plans_v, cache.vision_coords)
                rec_a = model.decode_modality(slice_a, plans_a, cache.audio_coords)
            loss_m, parts = mae_loss(
                rec_v, vis, plans_v, rec_a, aud, plans_a,
                per_element=tcfg.per_element_mae,
            )
            (loss_m * lam_mae).backward()
            mae_val = float(loss_m.data)

        try:
            opt.step(lr)
        except NumericError as exc:
            raise NumericError(f"aborted at step {step} (last lr {lr:.3e}): {exc}") from exc
        opt.zero_grad()
        try:
            report = LossReport(
                step=step,
                vam=vam_val,
                mae=mae_val,
                mae_vision=parts["mae_vision"],
                mae_audio=parts["mae_audio"],
                combined=lam_vam * vam_val + lam_mae * mae_val,
                n_masked_vision=parts["n_masked_vision"],
                n_masked_audio=parts["n_masked_audio"],
                lr=lr,
                vam_seq_len=vam_len,
                mae_seq_len=mae_len,
            )
        except NumericError as exc:
            raise NumericError(f"aborted at step {step} (last lr {lr:.3e}): {exc}") from exc
        reports.append(report)
        if log_stream is not None:
            log_stream.write(report.to_json() + "\n")
    return reports, opt


@dataclass
class FinetuneConfig:
    steps: int = 200
    batch_size: int = 8
    base_lr: float = 2e-3
    warmup_steps: int = 0
    weight_decay: float = 0.001
    seed: int = 0


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    if labels.max() >= n_classes:
        raise ConfigError(
            f"label {int(labels.max())} does not fit a {n_classes}-way head"
        )
    out = np.zeros((labels.size, n_classes), dtype=np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out


def finetune(model: Model, head_kind: HeadKind, dataset, fcfg: FinetuneConfig):
    """Joint encoder + task-head training; returns (head, reports)."""
    cache = dataset if isinstance(dataset, TokenCache) else TokenCache(dataset, model.cfg)
    head = TaskHead(model.cfg.d_enc, head_kind, np.random.default_rng([fcfg.seed, 11]), model.dtype)
    params = dict(model.params())
    params.update(head.named())
    opt = AdamW(params, AdamHyper(lr=fcfg.base_lr, weight_decay=fcfg.weight_decay))
    bands = np.array([lab["band"] for lab in cache.labels])
    sentiments = np.array([lab["sentiment"] for lab in cache.labels])
    if head_kind.kind == MULTILABEL:
        _one_hot(bands, head_kind.n_out)  # validate label/head fit up front

    reports = []
    for step in range(fcfg.steps):
        rng = np.random.default_rng([fcfg.seed, 21, step])
        indices = _batch_indices(rng, len(cache), fcfg.batch_size)
        lr = cosine_lr(step, fcfg.steps, fcfg.base_lr, fcfg.warmup_steps)

        if head_kind.kind == MATCHING:
            pair = make_vam_batch([(int(i), int(i)) for i in indices], rng)
            vis = np.stack([cache.vision[it.vision] for it in pair.items])
            aud = np.stack([cache.audio[it.audio] for it in pair.items])
            targets = pair.labels
        else:
            vis = np.stack([cache.vision[int(i)] for i in indices])
            aud = np.stack([cache.audio[int(i)] for i in indices])
        emb_v, emb_a = _embed_pair(model, cache, vis, aud)
        cls = model.encode(emb_v, emb_a)[:, 0, :]
        out = head(cls)
        if head_kind.kind == MATCHING:
            loss = vam_loss(out.reshape(-1), targets)
        elif head_kind.kind == MULTILABEL:
            onehot = _one_hot(bands[indices], head_kind.n_out)
            loss = vam_loss(out.reshape(-1), onehot.reshape(-1))
        else:
            diff = out.reshape(-1) - Tensor(
                sentiments[indices].astype(model.dtype)
            )
            loss = (diff * diff).mean()
        loss.backward()
        try:
            opt.step(lr)
        except NumericError as exc:
            raise NumericError(f"aborted at step {step} (last lr {lr:.3e}): {exc}") from exc
        opt.zero_grad()
        reports.append({"step": step, "loss": float(loss.data), "lr": lr})
    return head, reports

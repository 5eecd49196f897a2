"""Matching and masked-reconstruction losses, and negative-pair construction.

The matching loss is full binary cross-entropy: the printed one-sided form
(-y log p) has zero gradient on mismatched pairs, so it is kept only behind
a flag for fidelity experiments. Reconstruction error is measured on masked
patches only, normalized by the per-modality masked count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError
from .masking import MaskPlan
from .tensor import Tensor

LAMBDA_VAM = 1.0
LAMBDA_MAE = 0.3


@dataclass
class PairItem:
    vision: object
    audio: object
    label: int
    source_index: int
    replacement_index: int | None = None


@dataclass
class PairBatch:
    items: list

    def __len__(self):
        return len(self.items)

    @property
    def labels(self) -> np.ndarray:
        return np.array([it.label for it in self.items], dtype=np.float64)


def make_vam_batch(batch, rng) -> PairBatch:
    """Turn (vision, audio) pairs into a half-negative matching batch.

    A uniformly chosen floor(B/2) subset swaps its vision side for another
    batch item's vision; audio is never altered.
    """
    if len(batch) < 2:
        raise ContractError(f"matching batch needs >= 2 items, got {len(batch)}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    n = len(batch)
    negatives = set(rng.choice(n, size=n // 2, replace=False).tolist())
    items = []
    for i, (vision, audio) in enumerate(batch):
        if i in negatives:
            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1
            items.append(PairItem(batch[j][0], audio, 0, i, j))
        else:
            items.append(PairItem(vision, audio, 1, i))
    return PairBatch(items)


def vam_loss(p: Tensor, labels, literal: bool = False) -> Tensor:
    """Mean binary cross-entropy of matching probabilities against labels."""
    probs = p.data.reshape(-1)
    if np.any(probs <= 0.0) or np.any(probs >= 1.0):
        raise NumericError("matching probabilities must lie strictly in (0,1)")
    y = np.asarray(labels, dtype=p.dtype).reshape(-1)
    if y.shape != probs.shape:
        raise ContractError(f"{y.shape[0]} labels for {probs.shape[0]} probabilities")
    flat = p.reshape(-1)
    y_t = Tensor(y)
    if literal:
        return -(y_t * flat.log()).mean()
    return -(y_t * flat.log() + (1.0 - y_t) * (1.0 - flat).log()).mean()


def _masked_term(recon: Tensor, target: np.ndarray, plans, per_element: bool):
    if isinstance(plans, MaskPlan):
        plans = [plans]
    counts = {p.masked.size for p in plans}
    if len(counts) != 1:
        raise ContractError("masked counts must agree across the batch")
    n_masked = counts.pop()
    if n_masked == 0:
        raise ContractError("mask plan has no masked patches")
    target = np.asarray(target, dtype=recon.dtype)
    if recon.shape != target.shape:
        raise ContractError(f"recon {recon.shape} vs target {target.shape}")
    if recon.data.ndim == 2:
        idx = plans[0].masked
        tgt = target[idx]
    else:
        if len(plans) != recon.shape[0]:
            raise ContractError(f"{len(plans)} plans for batch of {recon.shape[0]}")
        idx = np.stack([p.masked for p in plans])
        tgt = np.take_along_axis(target, idx[:, :, None], axis=1)
    batch = 1 if recon.data.ndim == 2 else recon.shape[0]
    diff = recon.gather_tokens(idx) - Tensor(tgt)
    scale = 1.0 / (n_masked * batch)
    if per_element:
        scale /= recon.shape[-1]
    return (diff * diff).sum() * scale, n_masked


def mae_loss(
    recon_v: Tensor,
    target_v,
    plan_v,
    recon_a: Tensor,
    target_a,
    plan_a,
    per_element: bool = False,
):
    """Masked-patch reconstruction loss, vision term + audio term.

    Each term is the batch mean of (1/N_masked) * sum of squared errors over
    masked patch vectors. `per_element` switches the patch norm from a sum to
    a mean over patch entries.
    """
    v_term, n_v = _masked_term(recon_v, target_v, plan_v, per_element)
    a_term, n_a = _masked_term(recon_a, target_a, plan_a, per_element)
    total = v_term + a_term
    parts = {
        "mae_vision": float(v_term.data),
        "mae_audio": float(a_term.data),
        "n_masked_vision": n_v,
        "n_masked_audio": n_a,
    }
    return total, parts


def combined_loss(vam, mae, lambda_vam: float = LAMBDA_VAM, lambda_mae: float = LAMBDA_MAE):
    """Weighted sum of the two objectives (works on floats or graph tensors)."""
    return lambda_vam * vam + lambda_mae * mae


@dataclass
class LossReport:
    step: int
    vam: float
    mae: float
    mae_vision: float
    mae_audio: float
    combined: float
    n_masked_vision: int
    n_masked_audio: int
    lr: float
    vam_seq_len: int = 0
    mae_seq_len: int = 0

    def __post_init__(self):
        for name in ("vam", "mae", "mae_vision", "mae_audio", "combined"):
            if not np.isfinite(getattr(self, name)):
                raise NumericError(f"non-finite loss component '{name}'")

    def to_json(self) -> str:
        return json.dumps(vars(self), sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "LossReport":
        return LossReport(**json.loads(line))

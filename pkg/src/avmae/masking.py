"""Visible/masked token partitions for masked autoencoding.

Vision masking is drawn independently per frame; audio masking is uniform,
except that with a small per-sample probability the draw is concentrated on
tokens overlapping detected speech spans (topped up from the rest when the
span pool is smaller than the quota, so the masked count never changes).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .patches import AUDIO, VISION, PatchCoords

UNIFORM = "uniform"
SPEECH_SPAN = "speech-span"


@dataclass
class MaskPlan:
    """Disjoint, exhaustive split of one modality's token indices."""

    modality: str
    visible: np.ndarray
    masked: np.ndarray
    seed: object
    strategy: str = UNIFORM

    def __post_init__(self):
        self.visible = np.sort(np.asarray(self.visible, dtype=np.int64))
        self.masked = np.sort(np.asarray(self.masked, dtype=np.int64))
        n = self.visible.size + self.masked.size
        union = np.union1d(self.visible, self.masked)
        if union.size != n or (n and (union[0] != 0 or union[-1] != n - 1)):
            raise ContractError("visible/masked must partition 0..n-1")
        if self.visible.size == 0 or self.masked.size == 0:
            raise ContractError("both visible and masked must be non-empty")

    @property
    def n_tokens(self) -> int:
        return int(self.visible.size + self.masked.size)

    def to_json(self) -> str:
        return json.dumps(
            {
                "modality": self.modality,
                "visible": self.visible.tolist(),
                "masked": self.masked.tolist(),
                "seed": self.seed,
                "strategy": self.strategy,
            }
        )

    @staticmethod
    def from_json(text: str) -> "MaskPlan":
        obj = json.loads(text)
        return MaskPlan(
            modality=obj["modality"],
            visible=np.asarray(obj["visible"]),
            masked=np.asarray(obj["masked"]),
            seed=obj["seed"],
            strategy=obj["strategy"],
        )


def mask_quota(n: int, ratio: float) -> int:
    """Round-to-nearest masked count, clamped to keep both sides non-empty."""
    if n < 2:
        return n
    q = int(np.floor(n * ratio + 0.5))
    return min(max(q, 1), n - 1)


def sample_mask_plan(
    coords: PatchCoords,
    ratio: float = 0.75,
    seed=0,
    spans=None,
    span_prob: float = 0.15,
) -> MaskPlan:
    """Draw a MaskPlan for one modality's token grid.

    Vision: an independent uniform choice of mask_quota(P, ratio) indices per
    frame. Audio: uniform over all tokens, or (with probability `span_prob`,
    when spans were detected) drawn from the pool of tokens whose time range
    intersects a span.
    """
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"mask ratio must lie in (0,1), got {ratio}")
    n = len(coords)
    if n == 0:
        raise ContractError("cannot mask an empty token list")
    rng = np.random.default_rng(seed)

    if coords.modality == VISION:
        n_frames, rows, cols = coords.grid
        per_frame = rows * cols
        masked = []
        for frame in range(n_frames):
            q = mask_quota(per_frame, ratio)
            pick = rng.choice(per_frame, size=q, replace=False)
            masked.append(pick + frame * per_frame)
        masked = np.concatenate(masked)
        if masked.size == n:  # degenerate single-token frames
            masked = masked[1:]
        visible = np.setdiff1d(np.arange(n), masked)
        return MaskPlan(VISION, visible, masked, seed, UNIFORM)

    if coords.modality != AUDIO:
        raise ContractError(f"unknown modality {coords.modality!r}")
    q = mask_quota(n, ratio)
    if n < 2:
        raise ContractError("audio masking needs at least 2 tokens")
    strategy = UNIFORM
    pool = None
    if spans and rng.random() < span_prob:
        hits = []
        for i in range(n):
            lo, hi = coords.time_range(i)
            if any(lo < s.end_s and hi > s.start_s for s in spans):
                hits.append(i)
        if hits:
            strategy = SPEECH_SPAN
            pool = np.asarray(hits)
    if pool is None:
        masked = rng.choice(n, size=q, replace=False)
    elif pool.size >= q:
        masked = pool[rng.choice(pool.size, size=q, replace=False)]
    else:
        rest = np.setdiff1d(np.arange(n), pool)
        top_up = rest[rng.choice(rest.size, size=q - pool.size, replace=False)]
        masked = np.concatenate([pool, top_up])
    visible = np.setdiff1d(np.arange(n), masked)
    return MaskPlan(AUDIO, visible, masked, seed, strategy)

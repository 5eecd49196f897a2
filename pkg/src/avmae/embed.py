"""Token embeddings: patch projection + modality + positional components.

Encoder and decoder positional tables are separately parameterized; the
decoder side additionally owns the trainable MASK vector that fills masked
slots. Temporal embeddings are skipped for single-frame (image) vision input.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import CapacityError, ContractError
from .masking import MaskPlan
from .patches import AUDIO, VISION, PatchCoords
from .tensor import Tensor

ENCODER = "encoder"
DECODER = "decoder"


def trunc_normal(rng: np.random.Generator, shape, std=0.02, dtype=np.float32):
    """Normal(0, std) resampled until every draw lies within 2 std."""
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


@dataclass
class EmbeddingTables:
    vision_proj_weight: Tensor
    vision_proj_bias: Tensor
    audio_proj_weight: Tensor
    audio_proj_bias: Tensor
    modality: Tensor
    cls: Tensor
    vision_temporal: Tensor
    vision_row: Tensor
    vision_col: Tensor
    audio_temporal: Tensor
    audio_freq: Tensor
    dec_vision_temporal: Tensor
    dec_vision_row: Tensor
    dec_vision_col: Tensor
    dec_audio_temporal: Tensor
    dec_audio_freq: Tensor
    mask_token: Tensor

    @classmethod
    def create(
        cls,
        d_enc: int,
        d_dec: int,
        vision_patch_dim: int,
        audio_patch_dim: int,
        frames_max: int,
        vision_rows: int,
        vision_cols: int,
        audio_t_max: int,
        audio_freqs: int,
        rng: np.random.Generator,
        dtype=np.float32,
    ) -> "EmbeddingTables":
        def p(*shape):
            return Tensor(trunc_normal(rng, shape, dtype=dtype), requires_grad=True)

        return cls(
            vision_proj_weight=p(vision_patch_dim, d_enc),
            vision_proj_bias=Tensor(np.zeros(d_enc, dtype=dtype), requires_grad=True),
            audio_proj_weight=p(audio_patch_dim, d_enc),
            audio_proj_bias=Tensor(np.zeros(d_enc, dtype=dtype), requires_grad=True),
            modality=p(2, d_enc),
            cls=p(d_enc),
            vision_temporal=p(frames_max, d_enc),
            vision_row=p(vision_rows, d_enc),
            vision_col=p(vision_cols, d_enc),
            audio_temporal=p(audio_t_max, d_enc),
            audio_freq=p(audio_freqs, d_enc),
            dec_vision_temporal=p(frames_max, d_dec),
            dec_vision_row=p(vision_rows, d_dec),
            dec_vision_col=p(vision_cols, d_dec),
            dec_audio_temporal=p(audio_t_max, d_dec),
            dec_audio_freq=p(audio_freqs, d_dec),
            mask_token=p(d_dec),
        )

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _lookup(table: Tensor, idx: np.ndarray, what: str) -> Tensor:
    if idx.size and int(idx.max()) >= table.shape[0]:
        raise CapacityError(
            f"{what} index {int(idx.max())} exceeds table of {table.shape[0]} rows"
        )
    return table.gather_tokens(np.asarray(idx, dtype=np.int64))


def positional_embedding(
    coords: PatchCoords, tables: EmbeddingTables, role: str = ENCODER
) -> Tensor:
    """(L, d) sum of the positional components for one modality."""
    enc = role == ENCODER
    if coords.modality == VISION:
        row = _lookup(
            tables.vision_row if enc else tables.dec_vision_row, coords.h, "vision row"
        )
        col = _lookup(
            tables.vision_col if enc else tables.dec_vision_col, coords.w, "vision col"
        )
        pos = row + col
        if not coords.is_image:
            pos = pos + _lookup(
                tables.vision_temporal if enc else tables.dec_vision_temporal,
                coords.t,
                "vision temporal",
            )
        return pos
    if coords.modality == AUDIO:
        t = _lookup(
            tables.audio_temporal if enc else tables.dec_audio_temporal,
            coords.t,
            "audio temporal",
        )
        f = _lookup(
            tables.audio_freq if enc else tables.dec_audio_freq, coords.f, "audio freq"
        )
        return t + f
    raise ContractError(f"unknown modality {coords.modality!r}")


def embed_tokens(
    patches,
    coords: PatchCoords,
    tables: EmbeddingTables,
    role: str = ENCODER,
    plan: MaskPlan | None = None,
) -> Tensor:
    """Embed one modality's tokens for the encoder or the decoder.

    Encoder: linear patch projection + modality vector + positional sum;
    `patches` is (..., L, patch_dim). Decoder: `patches` is a full-length
    (..., L, d_dec) sequence whose masked slots (per `plan`) are replaced by
    the MASK vector before decoder positional tables are added.
    """
    if not isinstance(patches, Tensor):
        patches = Tensor(np.asarray(patches), dtype=tables.cls.dtype)
    if patches.shape[-2] != len(coords):
        raise ContractError(
            f"{patches.shape[-2]} patch rows vs {len(coords)} coordinates"
        )
    if role == ENCODER:
        if coords.modality == VISION:
            proj = patches @ tables.vision_proj_weight + tables.vision_proj_bias
            mod = tables.modality[0]
        else:
            proj = patches @ tables.audio_proj_weight + tables.audio_proj_bias
            mod = tables.modality[1]
        return proj + mod + positional_embedding(coords, tables, ENCODER)
    if role != DECODER:
        raise ContractError(f"unknown role {role!r}")
    if plan is not None:
        if plan.n_tokens != len(coords):
            raise ContractError("mask plan does not cover the token grid")
        keep = np.ones((len(coords), 1), dtype=patches.dtype)
        keep[plan.masked] = 0.0
        patches = patches * Tensor(keep) + tables.mask_token * Tensor(1.0 - keep)
    return patches + positional_embedding(coords, tables, DECODER)

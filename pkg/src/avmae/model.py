"""The joint encoder, shallow shared decoder, and task heads.

Blocks are pre-norm (LN -> MHSA -> residual, LN -> MLP -> residual) with a
final LN after the stack. One set of encoder weights serves both modalities;
the decoder is likewise shared, applied once per modality in separate
decoding, with per-modality linear output heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import DECODER, EmbeddingTables, positional_embedding, trunc_normal
from .errors import ConfigError, ContractError, ShapeError
from .masking import MaskPlan
from .modelcfg import JOINT, ModelConfig
from .patches import VISION, PatchCoords
from .tensor import Tensor, concat

MATCHING = "matching"
MULTILABEL = "multilabel"
REGRESSION = "regression"


class Linear:
    def __init__(self, d_in, d_out, rng, dtype=np.float32):
        self.weight = Tensor(trunc_normal(rng, (d_in, d_out), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def named(self):
        return {"weight": self.weight, "bias": self.bias}


class LayerNorm:
    def __init__(self, d, dtype=np.float32):
        self.gamma = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x.layer_norm(self.gamma, self.beta)

    def named(self):
        return {"gamma": self.gamma, "beta": self.beta}


class Block:
    """Pre-norm transformer block with multi-head self-attention."""

    def __init__(self, d, n_heads, mlp_ratio, rng, dtype=np.float32):
        self.d = d
        self.n_heads = n_heads
        self.ln1 = LayerNorm(d, dtype)
        self.qkv = Linear(d, 3 * d, rng, dtype)
        self.proj = Linear(d, d, rng, dtype)
        self.ln2 = LayerNorm(d, dtype)
        self.fc1 = Linear(d, mlp_ratio * d, rng, dtype)
        self.fc2 = Linear(mlp_ratio * d, d, rng, dtype)

    def attention(self, x: Tensor) -> Tensor:
        b, length, d = x.shape
        heads, dh = self.n_heads, d // self.n_heads
        h = self.qkv(x)
        q = h[:, :, :d].reshape(b, length, heads, dh).transpose((0, 2, 1, 3))
        k = h[:, :, d : 2 * d].reshape(b, length, heads, dh).transpose((0, 2, 3, 1))
        v = h[:, :, 2 * d :].reshape(b, length, heads, dh).transpose((0, 2, 1, 3))
        scores = (q @ k) * (1.0 / np.sqrt(dh))
        out = scores.softmax(axis=-1) @ v
        out = out.transpose((0, 2, 1, 3)).reshape(b, length, d)
        return self.proj(out)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attention(self.ln1(x))
        return x + self.fc2(self.fc1(self.ln2(x)).gelu())

    def named(self):
        out = {}
        for part in ("ln1", "qkv", "proj", "ln2", "fc1", "fc2"):
            for leaf, p in getattr(self, part).named().items():
                out[f"{part}.{leaf}"] = p
        return out


def _named_stack(blocks, prefix):
    out = {}
    for i, blk in enumerate(blocks):
        for name, p in blk.named().items():
            out[f"{prefix}.blocks.{i}.{name}"] = p
    return out


@dataclass
class HeadKind:
    """Matching (sigmoid scalar), MultiLabel (per-class sigmoid), or
    Regression (unbounded scalar); always a two-layer MLP over CLS."""

    kind: str
    n_out: int = 1

    def __post_init__(self):
        if self.kind not in (MATCHING, MULTILABEL, REGRESSION):
            raise ConfigError(f"unknown head kind {self.kind!r}")
        if self.kind != MULTILABEL:
            self.n_out = 1


class TaskHead:
    def __init__(self, d_enc, head: HeadKind, rng, dtype=np.float32):
        self.head = head
        self.fc1 = Linear(d_enc, d_enc, rng, dtype)
        self.fc2 = Linear(d_enc, head.n_out, rng, dtype)

    def __call__(self, cls_hidden: Tensor) -> Tensor:
        if cls_hidden.shape[-1] != self.fc1.weight.shape[0]:
            raise ShapeError(
                f"head expects width {self.fc1.weight.shape[0]}, got {cls_hidden.shape[-1]}"
            )
        z = self.fc2(self.fc1(cls_hidden).gelu())
        if self.head.kind in (MATCHING, MULTILABEL):
            return z.sigmoid()
        return z

    def named(self, prefix="task_head"):
        out = {}
        for part in ("fc1", "fc2"):
            for leaf, p in getattr(self, part).named().items():
                out[f"{prefix}.{part}.{leaf}"] = p
        return out


class Model:
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        grid = cfg.vision_grid
        self.tables = EmbeddingTables.create(
            cfg.d_enc,
            cfg.d_dec,
            cfg.vision_patch_dim,
            cfg.audio_patch_dim,
            cfg.frames,
            grid,
            grid,
            cfg.audio_t_max,
            cfg.audio_freq_patches,
            rng,
            dtype,
        )
        def blocks(n, d, heads):
            return [Block(d, heads, cfg.mlp_ratio, rng, dtype) for _ in range(n)]

        if cfg.encoder_arch == JOINT:
            self.enc_blocks = blocks(cfg.n_enc_layers, cfg.d_enc, cfg.n_heads_enc)
        else:
            self.enc_vision_blocks = blocks(cfg.n_enc_layers, cfg.d_enc, cfg.n_heads_enc)
            self.enc_audio_blocks = blocks(cfg.n_enc_layers, cfg.d_enc, cfg.n_heads_enc)
            self.fusion_blocks = blocks(cfg.fusion_layers, cfg.d_enc, cfg.n_heads_enc)
        self.enc_norm = LayerNorm(cfg.d_enc, dtype)
        self.bridge = Linear(cfg.d_enc, cfg.d_dec, rng, dtype)
        self.dec_blocks = blocks(cfg.n_dec_layers, cfg.d_dec, cfg.n_heads_dec)
        self.dec_norm = LayerNorm(cfg.d_dec, dtype)
        self.out_vision = Linear(cfg.d_dec, cfg.vision_patch_dim, rng, dtype)
        self.out_audio = Linear(cfg.d_dec, cfg.audio_patch_dim, rng, dtype)
        self.vam = Linear(cfg.d_enc, 1, rng, dtype)
        self.stats = {"encoder_attn_pairs": 0, "decoder_attn_pairs": 0, "decoder_calls": 0}

    # -- parameters -----------------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        out = {f"embed.{k}": v for k, v in self.tables.named().items()}
        if self.cfg.encoder_arch == JOINT:
            out.update(_named_stack(self.enc_blocks, "encoder"))
        else:
            out.update(_named_stack(self.enc_vision_blocks, "encoder_vision"))
            out.update(_named_stack(self.enc_audio_blocks, "encoder_audio"))
            out.update(_named_stack(self.fusion_blocks, "fusion"))
        for leaf, p in self.enc_norm.named().items():
            out[f"encoder.norm.{leaf}"] = p
        for leaf, p in self.bridge.named().items():
            out[f"bridge.{leaf}"] = p
        out.update(_named_stack(self.dec_blocks, "decoder"))
        for leaf, p in self.dec_norm.named().items():
            out[f"decoder.norm.{leaf}"] = p
        for leaf, p in self.out_vision.named().items():
            out[f"out_vision.{leaf}"] = p
        for leaf, p in self.out_audio.named().items():
            out[f"out_audio.{leaf}"] = p
        for leaf, p in self.vam.named().items():
            out[f"vam.{leaf}"] = p
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params().values())

    def zero_grad(self) -> None:
        for p in self.params().values():
            p.zero_grad()

    def reset_stats(self) -> None:
        for k in self.stats:
            self.stats[k] = 0

    # -- forward --------------------------------------------------------------

    @staticmethod
    def _batched(x: Tensor | None):
        if x is None:
            return None, False
        if x.data.ndim == 2:
            return x.reshape(1, *x.shape), True
        return x, False

    def _empty(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, 0, self.cfg.d_enc), dtype=self.dtype))

    def _run(self, x: Tensor, blocks, stats_key: str) -> Tensor:
        b, length, _ = x.shape
        self.stats[stats_key] += b * length * length * len(blocks)
        for blk in blocks:
            x = blk(x)
        return x

    def encode(self, vision_tokens: Tensor | None, audio_tokens: Tensor | None) -> Tensor:
        """[CLS] || vision || audio through the encoder stack; either modality
        may be absent or a visible subset."""
        ev, squeeze_v = self._batched(vision_tokens)
        ea, squeeze_a = self._batched(audio_tokens)
        if ev is None and ea is None:
            raise ContractError("encode needs at least one modality")
        batch = ev.shape[0] if ev is not None else ea.shape[0]
        ev = ev if ev is not None else self._empty(batch)
        ea = ea if ea is not None else self._empty(batch)
        for name, t in (("vision", ev), ("audio", ea)):
            if t.shape[-1] != self.cfg.d_enc:
                raise ShapeError(
                    f"{name} tokens have width {t.shape[-1]}, expected {self.cfg.d_enc}"
                )
        if ev.shape[0] != ea.shape[0]:
            raise ShapeError(f"batch mismatch: {ev.shape[0]} vs {ea.shape[0]}")
        cls_row = self.tables.cls.reshape(1, 1, -1) + Tensor(
            np.zeros((batch, 1, self.cfg.d_enc), dtype=self.dtype)
        )
        if self.cfg.encoder_arch == JOINT:
            seq = concat([cls_row, ev, ea], axis=1)
            seq = self._run(seq, self.enc_blocks, "encoder_attn_pairs")
        else:
            if ev.shape[1]:
                ev = self._run(ev, self.enc_vision_blocks, "encoder_attn_pairs")
            if ea.shape[1]:
                ea = self._run(ea, self.enc_audio_blocks, "encoder_attn_pairs")
            seq = concat([cls_row, ev, ea], axis=1)
            seq = self._run(seq, self.fusion_blocks, "encoder_attn_pairs")
        out = self.enc_norm(seq)
        return out.reshape(*out.shape[1:]) if (squeeze_v or squeeze_a) else out

    # -- decoding ---------------------------------------------------------------

    def _scatter_full(self, hidden_slice: Tensor, plans, coords: PatchCoords) -> Tensor:
        """Visible tokens to their grid slots, MASK elsewhere, plus decoder
        positional embeddings. Accepts one plan or one per batch row;
        output is (B, L_full, d_dec)."""
        if isinstance(plans, MaskPlan):
            plans = [plans]
        batch = hidden_slice.shape[0]
        if len(plans) == 1 and batch > 1:
            plans = list(plans) * batch
        if len(plans) != batch:
            raise ContractError(f"{len(plans)} mask plans for batch of {batch}")
        n_vis = plans[0].visible.size
        length = plans[0].n_tokens
        for plan in plans:
            if plan.visible.size != n_vis or plan.n_tokens != length:
                raise ContractError("mask plans must agree on token counts")
        if hidden_slice.shape[-2] != n_vis:
            raise ContractError(
                f"slice has {hidden_slice.shape[-2]} tokens, plan expects {n_vis} visible"
            )
        if length != len(coords):
            raise ContractError("mask plan does not cover the token grid")
        bridged = self.bridge(hidden_slice)
        n_masked = length - n_vis
        stacked = concat(
            [bridged, Tensor(np.zeros((batch, n_masked, self.cfg.d_dec), dtype=self.dtype))],
            axis=1,
        )
        inverse = np.empty((batch, length), dtype=np.int64)
        keep_out = np.ones((batch, length, 1), dtype=self.dtype)
        for b, plan in enumerate(plans):
            order = np.concatenate([plan.visible, plan.masked])
            inverse[b, order] = np.arange(length)
            keep_out[b, plan.masked] = 0.0
        full = stacked.gather_tokens(inverse)
        full = full + self.tables.mask_token * Tensor(1.0 - keep_out)
        return full + positional_embedding(coords, self.tables, DECODER)

    def decode_modality(self, hidden_slice: Tensor, plans, coords: PatchCoords) -> Tensor:
        """Reconstruct one modality's full patch grid from its visible
        encoder outputs (CLS excluded)."""
        x, squeeze = self._batched(hidden_slice)
        x = self._scatter_full(x, plans, coords)
        self.stats["decoder_calls"] += 1
        x = self._run(x, self.dec_blocks, "decoder_attn_pairs")
        x = self.dec_norm(x)
        head = self.out_vision if coords.modality == VISION else self.out_audio
        out = head(x)
        return out.reshape(*out.shape[1:]) if squeeze else out

    def decode_joint(
        self,
        vision_slice: Tensor,
        plans_v,
        coords_v: PatchCoords,
        audio_slice: Tensor,
        plans_a,
        coords_a: PatchCoords,
    ):
        """Ablation path: one decoder pass over both modalities concatenated."""
        xv, squeeze = self._batched(vision_slice)
        xa, _ = self._batched(audio_slice)
        full_v = self._scatter_full(xv, plans_v, coords_v)
        full_a = self._scatter_full(xa, plans_a, coords_a)
        seq = concat([full_v, full_a], axis=1)
        self.stats["decoder_calls"] += 1
        seq = self._run(seq, self.dec_blocks, "decoder_attn_pairs")
        seq = self.dec_norm(seq)
        lv = len(coords_v)
        rv = self.out_vision(seq[:, :lv, :])
        ra = self.out_audio(seq[:, lv:, :])
        if squeeze:
            return rv.reshape(*rv.shape[1:]), ra.reshape(*ra.shape[1:])
        return rv, ra

    # -- heads ------------------------------------------------------------------

    def vam_head(self, cls_hidden: Tensor) -> Tensor:
        """Matching probability in (0,1) from the CLS representation."""
        return self.vam(cls_hidden).sigmoid()


def count_params(cfg: ModelConfig) -> dict[str, int]:
    """Exact trainable parameter count by part, from the config alone."""
    d, dd = cfg.d_enc, cfg.d_dec
    grid = cfg.vision_grid

    def block(width):
        attn = width * 3 * width + 3 * width + width * width + width
        mlp = 2 * cfg.mlp_ratio * width * width + cfg.mlp_ratio * width + width
        return attn + mlp + 4 * width  # + two layer norms

    embeddings = (
        cfg.vision_patch_dim * d + d
        + cfg.audio_patch_dim * d + d
        + 2 * d  # modality
        + d  # cls
        + (cfg.frames + 2 * grid + cfg.audio_t_max + cfg.audio_freq_patches) * d
    )
    if cfg.encoder_arch == JOINT:
        encoder = cfg.n_enc_layers * block(d) + 2 * d
    else:
        encoder = (2 * cfg.n_enc_layers + cfg.fusion_layers) * block(d) + 2 * d
    decoder_embeddings = (
        (cfg.frames + 2 * grid + cfg.audio_t_max + cfg.audio_freq_patches) * dd + dd
    )
    bridge = d * dd + dd
    decoder = cfg.n_dec_layers * block(dd) + 2 * dd
    output_heads = dd * cfg.vision_patch_dim + cfg.vision_patch_dim + dd * cfg.audio_patch_dim + cfg.audio_patch_dim
    vam_head = d + 1
    counts = {
        "embeddings": embeddings,
        "encoder": encoder,
        "decoder_embeddings": decoder_embeddings,
        "bridge": bridge,
        "decoder": decoder,
        "output_heads": output_heads,
        "vam_head": vam_head,
    }
    counts["encoder_with_embeddings"] = embeddings + encoder
    counts["total"] = (
        embeddings + encoder + decoder_embeddings + bridge + decoder + output_heads + vam_head
    )
    return counts

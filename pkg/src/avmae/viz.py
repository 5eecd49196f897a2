"""Masked-input / reconstruction / target renders for both modalities.

Video frames are tiled horizontally into one RGB image per kind;
spectrograms render as grayscale (frequency rows, time columns). The
"masked" render is the quantized target with masked patch regions set to
zero, so its geometry matches the MaskPlan exactly, pixel for pixel.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .masking import MaskPlan, sample_mask_plan
from .model import Model
from .modelcfg import JOINT
from .patches import PatchCoords, unpatchify_frames, unpatchify_spectrogram
from .train import TokenCache


def to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(x * 255.0), 0, 255).astype(np.uint8)


def tile_frames(frames01: np.ndarray) -> np.ndarray:
    """(N, H, W, 3) in [0,1] -> (H, N*W, 3) uint8."""
    n, h, w, c = frames01.shape
    return to_u8(frames01.transpose(1, 0, 2, 3).reshape(h, n * w, c))


def vision_mask_rect(coords: PatchCoords, token: int, patch: int, frame_width: int):
    """Pixel rectangle (r0, r1, c0, c1) of a vision token in the tiled image."""
    t, h, w = coords.token_coord(token)
    return (h * patch, (h + 1) * patch, t * frame_width + w * patch, t * frame_width + (w + 1) * patch)


def audio_mask_rect(coords: PatchCoords, token: int, patch: tuple[int, int]):
    t, f = coords.token_coord(token)
    pt, pf = patch
    return (f * pf, (f + 1) * pf, t * pt, (t + 1) * pt)


def zero_masked(image: np.ndarray, rects) -> np.ndarray:
    out = image.copy()
    for r0, r1, c0, c1 in rects:
        out[r0:r1, c0:c1] = 0
    return out


def spectrogram_image(values: np.ndarray, floor: float, vmax: float) -> np.ndarray:
    span = max(vmax - floor, 1e-9)
    return to_u8(((values - floor) / span).T)


def reconstruct_sample(model: Model, dataset, index: int, seed: int = 0, mask_ratio: float = 0.75):
    """Run one MAE pass on a dataset sample and render all six images."""
    cfg = model.cfg
    cache = TokenCache(dataset, cfg)
    vis = cache.vision[index]
    aud = cache.audio[index]
    coords_v, coords_a = cache.vision_coords, cache.audio_coords
    plan_v = sample_mask_plan(coords_v, mask_ratio, seed=[seed, 2, 0, index])
    plan_a = sample_mask_plan(
        coords_a, mask_ratio, seed=[seed, 3, 0, index], spans=cache.spans[index]
    )

    from .embed import embed_tokens
    from .tensor import Tensor

    emb_v = embed_tokens(Tensor(vis), coords_v, model.tables)
    emb_a = embed_tokens(Tensor(aud), coords_a, model.tables)
    hidden = model.encode(
        emb_v.gather_tokens(plan_v.visible), emb_a.gather_tokens(plan_a.visible)
    )
    k = plan_v.visible.size
    slice_v = hidden[1 : 1 + k, :]
    slice_a = hidden[1 + k :, :]
    if cfg.decoder_arch == JOINT:
        rec_v, rec_a = model.decode_joint(
            slice_v, plan_v, coords_v, slice_a, plan_a, coords_a
        )
    else:
        rec_v = model.decode_modality(slice_v, plan_v, coords_v)
        rec_a = model.decode_modality(slice_a, plan_a, coords_a)

    # vision renders, in raw pixel space
    frames_t = unpatchify_frames(vis, coords_v, cfg.vision_patch)
    frames_r = unpatchify_frames(rec_v.data, coords_v, cfg.vision_patch)
    target_v = tile_frames(np.clip(dataset.unstandardize(frames_t), 0.0, 1.0))
    recon_v = tile_frames(np.clip(dataset.unstandardize(frames_r), 0.0, 1.0))
    rects_v = [
        vision_mask_rect(coords_v, int(tok), cfg.vision_patch, frames_t.shape[2])
        for tok in plan_v.masked
    ]
    masked_v = zero_masked(target_v, rects_v)

    # audio renders, grayscale on the target's value range
    spec_t = unpatchify_spectrogram(aud, coords_a, cfg.audio_patch)
    spec_r = unpatchify_spectrogram(rec_a.data, coords_a, cfg.audio_patch)
    floor = float(spec_t.min())
    vmax = float(spec_t.max())
    target_a = spectrogram_image(spec_t, floor, vmax)
    recon_a = spectrogram_image(np.clip(spec_r, floor, vmax), floor, vmax)
    rects_a = [
        audio_mask_rect(coords_a, int(tok), cfg.audio_patch) for tok in plan_a.masked
    ]
    masked_a = zero_masked(target_a, rects_a)

    return {
        "vision": {"masked": masked_v, "recon": recon_v, "target": target_v},
        "audio": {"masked": masked_a, "recon": recon_a, "target": target_a},
        "plans": {"vision": plan_v, "audio": plan_a},
        "coords": {"vision": coords_v, "audio": coords_a},
    }


def write_reconstruction(out_dir, result) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for modality in ("vision", "audio"):
        for kind in ("masked", "recon", "target"):
            path = out / f"{modality}_{kind}.png"
            Image.fromarray(result[modality][kind]).save(path)
            written.append(path)
    plans = {m: json.loads(result["plans"][m].to_json()) for m in ("vision", "audio")}
    plan_path = out / "mask_plans.json"
    plan_path.write_text(json.dumps(plans, sort_keys=True))
    written.append(plan_path)
    return written

"""Patch tokenization of video frames and spectrograms.

Token order is row-major over the grid: (frame, row, col) for vision and
(time, freq) for audio, so token index <-> grid coordinate is a bijection.
Each patch vector is the row-major flattening of its block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .mel import Spectrogram

VISION = "vision"
AUDIO = "audio"


@dataclass
class VideoClip:
    """N x H x W x C standardized frames; N = 1 denotes an image."""

    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4:
            raise ShapeError(f"expected N x H x W x C frames, got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ContractError("clip needs at least one frame")
        if self.frames.shape[3] != 3:
            raise ShapeError(f"expected 3 channels, got {self.frames.shape[3]}")


@dataclass
class PatchCoords:
    """Grid coordinates for every token of one modality, in token order."""

    modality: str
    t: np.ndarray
    h: np.ndarray | None = None
    w: np.ndarray | None = None
    f: np.ndarray | None = None
    grid: tuple = field(default=())
    n_frames: int = 1
    patch_seconds: float | None = None

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def is_image(self) -> bool:
        return self.modality == VISION and self.n_frames == 1

    def token_index(self, *coord) -> int:
        if self.modality == VISION:
            t, h, w = coord
            _, rows, cols = self.grid
            return (t * rows + h) * cols + w
        t, f = coord
        return t * self.grid[1] + f

    def token_coord(self, index: int) -> tuple:
        if self.modality == VISION:
            _, rows, cols = self.grid
            t, rem = divmod(index, rows * cols)
            h, w = divmod(rem, cols)
            return (t, h, w)
        return divmod(index, self.grid[1])

    def time_range(self, index: int) -> tuple[float, float]:
        """Seconds covered by an audio token."""
        if self.modality != AUDIO or self.patch_seconds is None:
            raise ContractError("time_range is defined for audio coords only")
        t = int(self.t[index])
        return (t * self.patch_seconds, (t + 1) * self.patch_seconds)


def patchify_frames(frames: np.ndarray, patch: int = 16):
    """Cut N x H x W x C frames into p x p x C patches.

    Returns (vectors (N*R*C', p*p*C), coords) with token order (frame, row, col).
    """
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ShapeError(f"expected N x H x W x C frames, got {frames.shape}")
    n, height, width, chans = frames.shape
    if height % patch or width % patch:
        raise ShapeError(
            f"frame extents {height}x{width} not divisible by patch {patch}"
        )
    rows, cols = height // patch, width // patch
    blocks = frames.reshape(n, rows, patch, cols, patch, chans)
    vectors = blocks.transpose(0, 1, 3, 2, 4, 5).reshape(
        n * rows * cols, patch * patch * chans
    )
    tt, hh, ww = np.meshgrid(
        np.arange(n), np.arange(rows), np.arange(cols), indexing="ij"
    )
    coords = PatchCoords(
        modality=VISION,
        t=tt.reshape(-1),
        h=hh.reshape(-1),
        w=ww.reshape(-1),
        grid=(n, rows, cols),
        n_frames=n,
    )
    return vectors, coords


def unpatchify_frames(vectors: np.ndarray, coords: PatchCoords, patch: int, chans: int = 3):
    n, rows, cols = coords.grid
    blocks = vectors.reshape(n, rows, cols, patch, patch, chans)
    return blocks.transpose(0, 1, 3, 2, 4, 5).reshape(
        n, rows * patch, cols * patch, chans
    )


def pad_spectrogram(spec: Spectrogram, patch_t: int) -> np.ndarray:
    """Pad the time axis with the silence floor value up to a patch multiple."""
    values = spec.values
    t = values.shape[0]
    target = -(-t // patch_t) * patch_t
    if target == t:
        return values
    pad = np.full((target - t, values.shape[1]), spec.floor_value, dtype=values.dtype)
    return np.concatenate([values, pad], axis=0)


def patchify_spectrogram(spec: Spectrogram, patch: tuple[int, int] = (16, 16)):
    """Cut a T x n_mels spectrogram into (p_t x p_f) patches, grid order (time, freq)."""
    patch_t, patch_f = patch
    values = pad_spectrogram(spec, patch_t)
    t, mels = values.shape
    if mels % patch_f:
        raise ShapeError(f"{mels} mel bins not divisible by patch {patch_f}")
    tp, fp = t // patch_t, mels // patch_f
    blocks = values.reshape(tp, patch_t, fp, patch_f)
    vectors = blocks.transpose(0, 2, 1, 3).reshape(tp * fp, patch_t * patch_f)
    tt, ff = np.meshgrid(np.arange(tp), np.arange(fp), indexing="ij")
    coords = PatchCoords(
        modality=AUDIO,
        t=tt.reshape(-1),
        f=ff.reshape(-1),
        grid=(tp, fp),
        patch_seconds=patch_t / spec.frame_rate if spec.frame_rate else None,
    )
    return vectors, coords


def unpatchify_spectrogram(vectors: np.ndarray, coords: PatchCoords, patch: tuple[int, int]):
    patch_t, patch_f = patch
    tp, fp = coords.grid
    blocks = vectors.reshape(tp, fp, patch_t, patch_f)
    return blocks.transpose(0, 2, 1, 3).reshape(tp * patch_t, fp * patch_f)

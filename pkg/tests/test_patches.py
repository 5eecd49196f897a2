import numpy as np
import pytest

from avmae.errors import ShapeError
from avmae.mel import Spectrogram
from avmae.patches import (
    AUDIO,
    VISION,
    VideoClip,
    patchify_frames,
    patchify_spectrogram,
    unpatchify_frames,
    unpatchify_spectrogram,
)


def spec_of(values, frame_rate=32.0):
    return Spectrogram(values=np.asarray(values, dtype=np.float64), frame_rate=frame_rate)


class TestPatchifyFrames:
    def test_paper_scale_token_count(self, rng):
        frames = rng.standard_normal((8, 224, 224, 3)).astype(np.float32)
        vectors, coords = patchify_frames(frames, 16)
        assert vectors.shape == (8 * 14 * 14, 768)
        assert len(coords) == 1568
        assert coords.grid == (8, 14, 14)

    def test_single_image_four_tokens(self, rng):
        vectors, coords = patchify_frames(rng.standard_normal((1, 32, 32, 3)), 16)
        assert vectors.shape == (4, 768)
        assert coords.is_image

    def test_roundtrip_identity(self, rng):
        frames = rng.standard_normal((3, 48, 32, 3))
        vectors, coords = patchify_frames(frames, 16)
        assert np.array_equal(unpatchify_frames(vectors, coords, 16), frames)

    def test_vectors_match_pixel_indexing_oracle(self, rng):
        # row-major flattening over (row, col, channel) inside each block
        p = 4
        frames = rng.standard_normal((2, 8, 8, 3))
        vectors, coords = patchify_frames(frames, p)
        for tok in range(len(coords)):
            t, h, w = coords.token_coord(tok)
            entry = 0
            for i in range(p):
                for j in range(p):
                    for c in range(3):
                        assert vectors[tok, entry] == frames[t, h * p + i, w * p + j, c]
                        entry += 1

    def test_token_order_is_frame_row_col(self, rng):
        _, coords = patchify_frames(rng.standard_normal((2, 8, 8, 3)), 4)
        assert coords.t[:4].tolist() == [0, 0, 0, 0]
        assert coords.h[:4].tolist() == [0, 0, 1, 1]
        assert coords.w[:4].tolist() == [0, 1, 0, 1]

    def test_indivisible_extent_rejected(self, rng):
        with pytest.raises(ShapeError, match="divisible"):
            patchify_frames(rng.standard_normal((1, 30, 32, 3)), 16)

    def test_coordinate_bijection(self, rng):
        _, coords = patchify_frames(rng.standard_normal((3, 32, 48, 3)), 16)
        for tok in range(len(coords)):
            assert coords.token_index(*coords.token_coord(tok)) == tok
            assert (coords.t[tok], coords.h[tok], coords.w[tok]) == coords.token_coord(tok)


class TestPatchifySpectrogram:
    def test_paper_footprint_square_patches(self, rng):
        spec = spec_of(rng.standard_normal((640, 128)))
        vectors, coords = patchify_spectrogram(spec, (16, 16))
        assert vectors.shape == (320, 256)
        assert coords.grid == (40, 8)

    def test_full_frequency_patches(self, rng):
        spec = spec_of(rng.standard_normal((640, 128)))
        vectors, coords = patchify_spectrogram(spec, (2, 128))
        assert vectors.shape == (320, 256)
        assert coords.grid == (320, 1)

    def test_single_frame_pads_to_patch(self):
        values = np.full((1, 128), 2.5)
        spec = spec_of(values)
        vectors, coords = patchify_spectrogram(spec, (16, 16))
        assert vectors.shape == (8, 256)
        # padded rows take the silence floor value
        grid = unpatchify_spectrogram(vectors, coords, (16, 16))
        assert np.all(grid[0, :] == 2.5)
        assert np.all(grid[1:, :] == spec.floor_value)

    def test_roundtrip_on_padded_grid(self, rng):
        spec = spec_of(rng.standard_normal((48, 32)))
        vectors, coords = patchify_spectrogram(spec, (16, 16))
        assert np.array_equal(
            unpatchify_spectrogram(vectors, coords, (16, 16)), spec.values
        )

    def test_grid_order_time_then_freq(self, rng):
        spec = spec_of(rng.standard_normal((32, 32)))
        _, coords = patchify_spectrogram(spec, (16, 16))
        assert coords.t.tolist() == [0, 0, 1, 1]
        assert coords.f.tolist() == [0, 1, 0, 1]

    def test_token_time_ranges(self, rng):
        spec = spec_of(rng.standard_normal((32, 32)), frame_rate=32.0)
        _, coords = patchify_spectrogram(spec, (16, 16))
        assert coords.time_range(0) == (0.0, 0.5)
        assert coords.time_range(2) == (0.5, 1.0)

    def test_indivisible_mel_axis_rejected(self, rng):
        spec = spec_of(rng.standard_normal((32, 30)))
        with pytest.raises(ShapeError):
            patchify_spectrogram(spec, (16, 16))


class TestVideoClip:
    def test_accepts_single_frame(self, rng):
        VideoClip(frames=rng.standard_normal((1, 16, 16, 3)))

    def test_rejects_wrong_rank(self, rng):
        with pytest.raises(ShapeError):
            VideoClip(frames=rng.standard_normal((16, 16, 3)))

    def test_rejects_wrong_channels(self, rng):
        with pytest.raises(ShapeError):
            VideoClip(frames=rng.standard_normal((1, 16, 16, 4)))

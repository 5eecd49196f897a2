import numpy as np
import pytest

from avmae.embed import DECODER, ENCODER, EmbeddingTables, embed_tokens, positional_embedding
from avmae.errors import CapacityError
from avmae.masking import sample_mask_plan
from avmae.mel import Spectrogram
from avmae.patches import patchify_frames, patchify_spectrogram
from avmae.tensor import Tensor


def make_tables(d_enc=8, d_dec=6, seed=0, dtype=np.float64):
    return EmbeddingTables.create(
        d_enc=d_enc,
        d_dec=d_dec,
        vision_patch_dim=48,
        audio_patch_dim=16,
        frames_max=3,
        vision_rows=2,
        vision_cols=2,
        audio_t_max=3,
        audio_freqs=2,
        rng=np.random.default_rng(seed),
        dtype=dtype,
    )


@pytest.fixture()
def vision_coords(rng):
    _, coords = patchify_frames(rng.standard_normal((2, 8, 8, 3)), 4)
    return coords


@pytest.fixture()
def audio_coords(rng):
    spec = Spectrogram(values=rng.standard_normal((8, 8)), frame_rate=32.0)
    _, coords = patchify_spectrogram(spec, (4, 4))
    return coords


def test_zero_patches_zero_tables_give_zero(vision_coords):
    tables = make_tables()
    for p in tables.named().values():
        p.data[:] = 0.0
    out = embed_tokens(np.zeros((8, 48)), vision_coords, tables)
    assert np.all(out.data == 0.0)


def test_embedding_is_sum_of_components(vision_coords, rng):
    tables = make_tables()
    patches = rng.standard_normal((8, 48))
    out = embed_tokens(patches, vision_coords, tables).data
    wanted = (
        patches @ tables.vision_proj_weight.data
        + tables.vision_proj_bias.data
        + tables.modality.data[0]
        + tables.vision_row.data[vision_coords.h]
        + tables.vision_col.data[vision_coords.w]
        + tables.vision_temporal.data[vision_coords.t]
    )
    assert np.max(np.abs(out - wanted)) < 1e-12


def test_audio_embedding_components(audio_coords, rng):
    tables = make_tables()
    patches = rng.standard_normal((4, 16))
    out = embed_tokens(patches, audio_coords, tables).data
    wanted = (
        patches @ tables.audio_proj_weight.data
        + tables.audio_proj_bias.data
        + tables.modality.data[1]
        + tables.audio_temporal.data[audio_coords.t]
        + tables.audio_freq.data[audio_coords.f]
    )
    assert np.max(np.abs(out - wanted)) < 1e-12


def test_image_omits_temporal(rng):
    tables = make_tables()
    patches = rng.standard_normal((4, 48))
    _, image_coords = patchify_frames(rng.standard_normal((1, 8, 8, 3)), 4)
    out = embed_tokens(patches, image_coords, tables).data
    wanted = (
        patches @ tables.vision_proj_weight.data
        + tables.vision_proj_bias.data
        + tables.modality.data[0]
        + tables.vision_row.data[image_coords.h]
        + tables.vision_col.data[image_coords.w]
    )
    assert np.max(np.abs(out - wanted)) < 1e-12


def test_same_grid_slot_twice_differs_only_by_temporal(vision_coords, rng):
    tables = make_tables()
    patches = np.tile(rng.standard_normal(48), (8, 1))
    out = embed_tokens(patches, vision_coords, tables).data
    delta = out[4] - out[0]  # same (h, w), frames 1 vs 0
    wanted = tables.vision_temporal.data[1] - tables.vision_temporal.data[0]
    assert np.max(np.abs(delta - wanted)) < 1e-12


def test_capacity_error_names_table(rng):
    tables = make_tables()
    _, coords = patchify_frames(rng.standard_normal((4, 8, 8, 3)), 4)  # 4 frames > 3
    with pytest.raises(CapacityError, match="temporal"):
        embed_tokens(rng.standard_normal((16, 48)), coords, tables)


def test_decoder_role_substitutes_mask_vector(vision_coords, rng):
    tables = make_tables()
    plan = sample_mask_plan(vision_coords, 0.75, seed=3)
    base = rng.standard_normal((8, 6))
    out = embed_tokens(Tensor(base, dtype=np.float64), vision_coords, tables, role=DECODER, plan=plan).data
    pos = positional_embedding(vision_coords, tables, DECODER).data
    for tok in range(8):
        source = tables.mask_token.data if tok in plan.masked else base[tok]
        assert np.max(np.abs(out[tok] - (source + pos[tok]))) < 1e-12


def test_decoder_positional_tables_are_separate(vision_coords):
    tables = make_tables()
    enc = positional_embedding(vision_coords, tables, ENCODER).data
    dec = positional_embedding(vision_coords, tables, DECODER).data
    assert enc.shape[1] == 8 and dec.shape[1] == 6


def test_gradients_reach_tables(vision_coords, rng):
    tables = make_tables()
    patches = rng.standard_normal((8, 48))
    out = embed_tokens(patches, vision_coords, tables)
    out.sum().backward()
    assert tables.vision_proj_weight.grad is not None
    assert tables.modality.grad is not None
    assert np.all(tables.modality.grad[1] == 0.0)  # audio row untouched
    assert tables.vision_temporal.grad is not None

import time

import numpy as np
import pytest

from avmae.checkpoint import load_checkpoint, save_checkpoint
from avmae.errors import ConfigError, ContractError, IntegrityError, ShapeError, VersionError
from avmae.masking import sample_mask_plan
from avmae.mel import Spectrogram
from avmae.model import Block, HeadKind, LayerNorm, Model, TaskHead, count_params
from avmae.modelcfg import ModelConfig, desk_config, paper_config, preset
from avmae.patches import patchify_frames, patchify_spectrogram
from avmae.tensor import Tensor


def tiny_config(**kw):
    base = dict(
        d_enc=8,
        n_enc_layers=1,
        d_dec=8,
        n_dec_layers=1,
        n_heads_enc=2,
        n_heads_dec=2,
        mlp_ratio=2,
        vision_patch=4,
        audio_patch=(4, 4),
        frames=2,
        image_size=8,
        n_mels=8,
        audio_t_max=4,
        sample_rate=16384,
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture()
def tiny():
    return Model(tiny_config(), seed=0, dtype=np.float64)


def tiny_inputs(rng, batch=None, frames=2):
    frames_arr = rng.standard_normal((frames, 8, 8, 3))
    v_vec, v_coords = patchify_frames(frames_arr, 4)
    spec = Spectrogram(values=rng.standard_normal((8, 8)), frame_rate=32.0)
    a_vec, a_coords = patchify_spectrogram(spec, (4, 4))
    if batch:
        v_vec = np.stack([v_vec] * batch)
        a_vec = np.stack([a_vec] * batch)
    return v_vec, v_coords, a_vec, a_coords


class TestEncode:
    def test_sequence_length_structure(self, tiny, rng):
        v_vec, v_coords, a_vec, a_coords = tiny_inputs(rng)
        from avmae.embed import embed_tokens

        ev = embed_tokens(Tensor(v_vec, dtype=np.float64), v_coords, tiny.tables)
        ea = embed_tokens(Tensor(a_vec, dtype=np.float64), a_coords, tiny.tables)
        out = tiny.encode(ev, ea)
        assert out.shape == (1 + len(v_coords) + len(a_coords), 8)

    def test_unimodal_inputs_allowed(self, tiny, rng):
        ea = Tensor(rng.standard_normal((1, 4, 8)).astype(np.float32))
        ev = Tensor(np.zeros((1, 0, 8), dtype=np.float32))
        model = Model(tiny_config(), seed=0)
        assert model.encode(ev, ea.detach()).shape == (1, 5, model.cfg.d_enc)
        assert model.encode(ea.detach(), ev).shape == (1, 5, model.cfg.d_enc)
        with pytest.raises(ContractError):
            model.encode(None, None)

    def test_zero_weights_make_output_position_independent(self, rng):
        model = Model(tiny_config(), seed=0, dtype=np.float64)
        for name, p in model.params().items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf != "gamma":  # keep LN affine as identity-on-zeros
                p.data[:] = 0.0
        ev = Tensor(np.zeros((1, 8, 8)))
        ea = Tensor(np.zeros((1, 4, 8)))
        out = model.encode(ev, ea).data[0]
        assert np.allclose(out, out[0], atol=1e-12)

    def test_single_layer_matches_straight_line_oracle(self, rng):
        model = Model(tiny_config(), seed=3, dtype=np.float64)
        x = rng.standard_normal((1, 5, 8))
        ev = Tensor(x[:, :3], dtype=np.float64)
        ea = Tensor(x[:, 3:], dtype=np.float64)
        got = model.encode(ev, ea).data[0]

        # no-module re-implementation of [CLS] concat + 1 pre-norm block + final LN
        def ln(v, gamma, beta, eps=1e-5):
            mu = v.mean(-1, keepdims=True)
            var = ((v - mu) ** 2).mean(-1, keepdims=True)
            return (v - mu) / np.sqrt(var + eps) * gamma + beta

        p = {k: t.data for k, t in model.params().items()}
        seq = np.concatenate([p["embed.cls"][None, :], x[0]], axis=0)
        h = ln(seq, p["encoder.blocks.0.ln1.gamma"], p["encoder.blocks.0.ln1.beta"])
        qkv = h @ p["encoder.blocks.0.qkv.weight"] + p["encoder.blocks.0.qkv.bias"]
        q, k, v = qkv[:, :8], qkv[:, 8:16], qkv[:, 16:]
        heads = []
        for hd in range(2):
            sl = slice(hd * 4, (hd + 1) * 4)
            scores = q[:, sl] @ k[:, sl].T / np.sqrt(4.0)
            e = np.exp(scores - scores.max(-1, keepdims=True))
            attn = e / e.sum(-1, keepdims=True)
            heads.append(attn @ v[:, sl])
        att = np.concatenate(heads, axis=-1) @ p["encoder.blocks.0.proj.weight"] + p[
            "encoder.blocks.0.proj.bias"
        ]
        seq = seq + att
        h2 = ln(seq, p["encoder.blocks.0.ln2.gamma"], p["encoder.blocks.0.ln2.beta"])
        z = h2 @ p["encoder.blocks.0.fc1.weight"] + p["encoder.blocks.0.fc1.bias"]
        from scipy.special import erf

        z = 0.5 * z * (1.0 + erf(z / np.sqrt(2.0)))
        seq = seq + z @ p["encoder.blocks.0.fc2.weight"] + p["encoder.blocks.0.fc2.bias"]
        want = ln(seq, p["encoder.norm.gamma"], p["encoder.norm.beta"])
        assert np.max(np.abs(got - want)) < 1e-10

    def test_width_mismatch_rejected(self, tiny):
        with pytest.raises(ShapeError, match="width"):
            tiny.encode(Tensor(np.zeros((1, 2, 16), dtype=np.float64)), None)


class TestDecode:
    def test_decoder_input_is_full_grid_length(self, tiny, rng):
        v_vec, v_coords, _, _ = tiny_inputs(rng)
        plan = sample_mask_plan(v_coords, 0.75, seed=0)
        hidden_slice = Tensor(rng.standard_normal((1, plan.visible.size, 8)))
        out = tiny.decode_modality(hidden_slice, plan, v_coords)
        assert out.shape == (1, len(v_coords), 48)

    def test_masked_order_permutation_irrelevant(self, tiny, rng):
        from avmae.masking import MaskPlan

        _, v_coords, _, _ = tiny_inputs(rng)
        plan = sample_mask_plan(v_coords, 0.75, seed=1)
        hidden_slice = Tensor(rng.standard_normal((1, plan.visible.size, 8)))
        out1 = tiny.decode_modality(hidden_slice.detach(), plan, v_coords)
        shuffled = MaskPlan(
            plan.modality,
            plan.visible,
            np.random.default_rng(5).permutation(plan.masked),
            seed=plan.seed,
            strategy=plan.strategy,
        )
        out2 = tiny.decode_modality(hidden_slice.detach(), shuffled, v_coords)
        assert np.array_equal(out1.data, out2.data)

    def test_slice_length_mismatch_rejected(self, tiny, rng):
        _, v_coords, _, _ = tiny_inputs(rng)
        plan = sample_mask_plan(v_coords, 0.75, seed=0)
        bad = Tensor(rng.standard_normal((1, plan.visible.size + 1, 8)))
        with pytest.raises(ContractError):
            tiny.decode_modality(bad, plan, v_coords)

    def test_attention_pair_arithmetic(self):
        # separate decoding does Lv^2 + La^2 token pairs, joint (Lv+La)^2
        lv, la = 1568, 320
        separate = lv * lv + la * la
        joint = (lv + la) ** 2
        assert separate == 2_561_024
        assert joint == 3_564_544
        assert separate < joint

    def test_stats_track_decoder_calls_and_pairs(self, tiny, rng):
        v_vec, v_coords, a_vec, a_coords = tiny_inputs(rng)
        plan_v = sample_mask_plan(v_coords, 0.75, seed=0)
        plan_a = sample_mask_plan(a_coords, 0.75, seed=0)
        sv = Tensor(rng.standard_normal((1, plan_v.visible.size, 8)))
        sa = Tensor(rng.standard_normal((1, plan_a.visible.size, 8)))
        tiny.reset_stats()
        tiny.decode_modality(sv.detach(), plan_v, v_coords)
        tiny.decode_modality(sa.detach(), plan_a, a_coords)
        separate_pairs = tiny.stats["decoder_attn_pairs"]
        assert tiny.stats["decoder_calls"] == 2
        assert separate_pairs == len(v_coords) ** 2 + len(a_coords) ** 2
        tiny.reset_stats()
        tiny.decode_joint(sv.detach(), plan_v, v_coords, sa.detach(), plan_a, a_coords)
        joint_pairs = tiny.stats["decoder_attn_pairs"]
        assert tiny.stats["decoder_calls"] == 1
        assert joint_pairs == (len(v_coords) + len(a_coords)) ** 2
        assert separate_pairs < joint_pairs


class TestHeads:
    def test_vam_zero_weights_give_half(self, tiny):
        tiny.vam.weight.data[:] = 0.0
        tiny.vam.bias.data[:] = 0.0
        p = tiny.vam_head(Tensor(np.ones((3, 8), dtype=np.float64)))
        assert np.allclose(p.data, 0.5)

    def test_vam_logit_two(self, tiny):
        tiny.vam.weight.data[:] = 0.0
        tiny.vam.bias.data[:] = 2.0
        p = tiny.vam_head(Tensor(np.zeros((1, 8), dtype=np.float64)))
        assert abs(float(p.data[0, 0]) - 0.8808) < 1e-4

    def test_vam_monotone_in_logit(self, tiny, rng):
        tiny.vam.weight.data[:] = 0.0
        tiny.vam.weight.data[0, 0] = 1.0
        tiny.vam.bias.data[:] = 0.0
        xs = np.zeros((5, 8))
        xs[:, 0] = np.linspace(-3, 3, 5)
        p = tiny.vam_head(Tensor(xs, dtype=np.float64)).data.reshape(-1)
        assert np.all(np.diff(p) > 0)

    def test_multilabel_zero_init_gives_half(self):
        head = TaskHead(8, HeadKind("multilabel", 5), np.random.default_rng(0), np.float64)
        for p in head.named().values():
            p.data[:] = 0.0
        out = head(Tensor(np.ones((2, 8), dtype=np.float64)))
        assert out.shape == (2, 5)
        assert np.allclose(out.data, 0.5)

    def test_regression_head_hand_oracle(self, rng):
        head = TaskHead(4, HeadKind("regression"), np.random.default_rng(1), np.float64)
        x = rng.standard_normal((3, 4))
        got = head(Tensor(x, dtype=np.float64)).data
        from scipy.special import erf

        h = x @ head.fc1.weight.data + head.fc1.bias.data
        h = 0.5 * h * (1.0 + erf(h / np.sqrt(2.0)))
        want = h @ head.fc2.weight.data + head.fc2.bias.data
        assert np.max(np.abs(got - want)) < 1e-12

    def test_matching_outputs_in_open_unit_interval(self, rng):
        head = TaskHead(8, HeadKind("matching"), np.random.default_rng(2), np.float64)
        out = head(Tensor(rng.standard_normal((1000, 8)), dtype=np.float64)).data
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_unknown_head_kind_rejected(self):
        with pytest.raises(ConfigError):
            HeadKind("classification")

    def test_width_mismatch_rejected(self, rng):
        head = TaskHead(8, HeadKind("matching"), np.random.default_rng(0), np.float64)
        with pytest.raises(ShapeError):
            head(Tensor(rng.standard_normal((2, 16)), dtype=np.float64))


class TestParamCount:
    def test_paper_encoder_in_published_band(self):
        t0 = time.time()
        counts = count_params(paper_config())
        assert time.time() - t0 < 5.0
        assert 84_000_000 <= counts["encoder_with_embeddings"] <= 92_000_000

    def test_desk_under_one_million(self):
        assert count_params(desk_config())["total"] < 1_000_000

    def test_formula_matches_instantiated_model(self):
        cfg = tiny_config()
        assert count_params(cfg)["total"] == Model(cfg, seed=0).param_count()
        desk = desk_config()
        assert count_params(desk)["total"] == Model(desk, seed=0).param_count()

    def test_mlp_ratio_delta_formula(self):
        cfg = tiny_config()
        doubled = tiny_config(mlp_ratio=4)
        d, layers, ratio = cfg.d_enc, cfg.n_enc_layers + cfg.n_dec_layers, cfg.mlp_ratio
        got = count_params(doubled)["total"] - count_params(cfg)["total"]
        assert got == layers * (2 * d * d * ratio + d * ratio)

    def test_separate_encoder_counts_more(self):
        joint = count_params(tiny_config())["total"]
        separate = count_params(tiny_config(encoder_arch="separate"))["total"]
        assert separate > joint


class TestWeightSharing:
    def test_joint_encoder_has_no_modality_suffixed_weights(self):
        model = Model(tiny_config(), seed=0)
        encoder_keys = [k for k in model.params() if k.startswith("encoder.")]
        assert encoder_keys
        for key in encoder_keys:
            assert "vision" not in key and "audio" not in key

    def test_decoder_weights_shared_across_modalities(self, tiny, rng):
        # same decoder stack processes both modalities; only output heads differ
        keys = set(Model(tiny_config(), seed=0).params())
        assert any(k.startswith("decoder.blocks.0") for k in keys)
        assert not any(k.startswith("decoder_vision") or k.startswith("decoder_audio") for k in keys)
        assert any(k.startswith("out_vision.") for k in keys)
        assert any(k.startswith("out_audio.") for k in keys)


class TestCheckpoint:
    def probe_forward(self, model, rng_seed=11):
        rng = np.random.default_rng(rng_seed)
        ev = Tensor(rng.standard_normal((1, 3, model.cfg.d_enc)).astype(model.dtype))
        ea = Tensor(rng.standard_normal((1, 2, model.cfg.d_enc)).astype(model.dtype))
        return model.encode(ev, ea).data

    def test_roundtrip_bitwise(self, tmp_path):
        model = Model(tiny_config(), seed=5)
        before = self.probe_forward(model)
        save_checkpoint(model, tmp_path / "m.avck", global_step=12)
        bundle = load_checkpoint(tmp_path / "m.avck")
        assert bundle.global_step == 12
        after = self.probe_forward(bundle.model)
        assert np.array_equal(before.view(np.uint8), after.view(np.uint8))
        for (na, pa), (nb, pb) in zip(model.params().items(), bundle.model.params().items()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_corrupted_byte_detected(self, tmp_path):
        model = Model(tiny_config(), seed=5)
        path = tmp_path / "m.avck"
        save_checkpoint(model, path)
        raw = bytearray(path.read_bytes())
        raw[-10] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(IntegrityError, match="checksum"):
            load_checkpoint(path)

    def test_config_mismatch_names_field(self, tmp_path):
        model = Model(tiny_config(), seed=5)
        path = tmp_path / "m.avck"
        save_checkpoint(model, path)
        with pytest.raises(VersionError, match="d_enc"):
            load_checkpoint(path, expect_config=tiny_config(d_enc=16, n_heads_enc=2))

    def test_missing_tensor_detected(self, tmp_path):
        import json, struct

        model = Model(tiny_config(), seed=5)
        path = tmp_path / "m.avck"
        save_checkpoint(model, path)
        raw = path.read_bytes()
        magic_len = 6
        (head_len,) = struct.unpack_from("<I", raw, magic_len)
        header = json.loads(raw[magic_len + 4 : magic_len + 4 + head_len])
        header["manifest"] = header["manifest"][:-1]
        new_head = json.dumps(header, sort_keys=True).encode()
        path.write_bytes(raw[:magic_len] + struct.pack("<I", len(new_head)) + new_head + raw[magic_len + 4 + head_len :])
        with pytest.raises(IntegrityError, match="missing"):
            load_checkpoint(path)

    def test_optimizer_state_roundtrip(self, tmp_path):
        from avmae.optim import AdamHyper, AdamW

        model = Model(tiny_config(), seed=5)
        opt = AdamW(model.params(), AdamHyper(lr=1e-3))
        for p in model.params().values():
            p.grad = np.ones_like(p.data)
        opt.step()
        save_checkpoint(model, tmp_path / "m.avck", optimizer=opt, global_step=1)
        bundle = load_checkpoint(tmp_path / "m.avck")
        assert bundle.optimizer is not None
        assert bundle.optimizer.state.step == 1
        for name in opt.params:
            assert np.array_equal(bundle.optimizer.state.m[name], opt.state.m[name])


def test_preset_lookup():
    assert preset("desk").d_enc == 64
    assert preset("paper").d_enc == 768
    assert preset("paper-patch-count").sample_rate == 16384
    with pytest.raises(ConfigError):
        preset("nope")


def test_head_divisibility_checked():
    with pytest.raises(ConfigError):
        ModelConfig(d_enc=10, n_heads_enc=3)

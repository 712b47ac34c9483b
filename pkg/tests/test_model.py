"""Encoder/decoder model tests: shapes, passthrough, purity, determinism,
checkpointing, attention extraction, and the full-model gradient check."""

import numpy as np
import pytest

from ppg2ecg import autodiff as ad
from ppg2ecg.autodiff import Tensor
from ppg2ecg.checkpoint import load_checkpoint, save_checkpoint
from ppg2ecg.errors import ConfigError, InputError, StateError
from ppg2ecg.model import (
    AttentionRecorder,
    ReconstructorModel,
    TrainSchedule,
    attention_rows,
    decode,
    encode,
    expected_param_count,
    extract_attention,
    forward_waveform,
    pa_spa_pair,
    reconstruct,
    train_reconstructor,
    _cross_block,
)
from ppg2ecg.patches import StageConfig, TokenSequence


TINY = StageConfig(d_model=8, heads=2, depths=(2, 2, 2, 2, 2), stem_channels=2)


@pytest.fixture(scope="module")
def tiny_model():
    return ReconstructorModel.build(TINY, seed=11)


def rand_window(seed=0, batch=1):
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1, 1, size=(batch, 512)).astype(np.float32)
    return w


def zero_all(model):
    for _, t in model.params.items():
        t.data[...] = 0.0


def zero_output_projections(model):
    for name, t in model.params.items():
        if name.endswith((".attn.wo", ".attn.bo", ".mlp.w2", ".mlp.b2")) or name.endswith(
            (".wo", ".bo")
        ):
            t.data[...] = 0.0


class TestEncode:
    def test_memory_shapes_follow_schedule(self, tiny_model):
        memories = encode(rand_window(1), tiny_model)
        shapes = [m.tokens.shape for m in memories]
        assert shapes == [(1, 16, 8), (1, 8, 8), (1, 4, 8), (1, 2, 8), (1, 1, 8)]
        assert [m.patch_size for m in memories] == [32, 64, 128, 256, 512]
        for m in memories:
            assert m.token_count * m.patch_size == 512

    def test_zero_window_zero_params_gives_zero_memories(self):
        model = ReconstructorModel.build(TINY, seed=0)
        zero_all(model)
        memories = encode(np.zeros(512, dtype=np.float32), model)
        for m in memories:
            np.testing.assert_array_equal(m.tokens.data, 0.0)

    def test_encode_is_deterministic(self, tiny_model):
        w = rand_window(3)
        a = encode(w, tiny_model)
        b = encode(w, tiny_model)
        for ma, mb in zip(a, b):
            np.testing.assert_array_equal(ma.tokens.data, mb.tokens.data)


class TestDecode:
    def test_output_shape(self, tiny_model):
        memories = encode(rand_window(5), tiny_model)
        out = decode(memories, tiny_model)
        assert out.tokens.shape == (1, 16, 8)
        assert out.stage_index == 0

    def test_zero_memories_zero_params_give_zero_tokens(self):
        model = ReconstructorModel.build(TINY, seed=0)
        zero_all(model)
        memories = encode(np.zeros(512, dtype=np.float32), model)
        out = decode(memories, model)
        np.testing.assert_array_equal(out.tokens.data, 0.0)

    def test_malformed_memories_rejected(self, tiny_model):
        memories = encode(rand_window(7), tiny_model)
        with pytest.raises(Exception):
            decode(memories[:3], tiny_model)
        swapped = [memories[1]] + memories[1:]
        with pytest.raises(Exception):
            decode(swapped, tiny_model)

    def test_stage4_cross_attention_weight_is_exactly_one(self, tiny_model):
        recorder = AttentionRecorder()
        memories = encode(rand_window(9), tiny_model, recorder)
        decode(memories, tiny_model, recorder)
        one_by_one = [m for m in recorder.maps if m.weights.shape == (1, 1)]
        assert one_by_one, "no single-token maps recorded"
        for m in one_by_one:
            assert m.weights[0, 0] == 1.0


class TestBlocks:
    def seq(self, n=8, d=8, seed=1):
        rng = np.random.default_rng(seed)
        return TokenSequence(
            tokens=Tensor(rng.normal(size=(2, n, d)).astype(np.float32)),
            stage_index=int(np.log2(16 // n)),
            patch_size=512 // n,
        )

    def test_zero_output_projections_make_blocks_identity(self, tiny_model):
        model = ReconstructorModel.build(TINY, seed=2)
        zero_output_projections(model)
        for stage, n in [(0, 16), (2, 4), (4, 1)]:
            seq = self.seq(n=n, seed=stage)
            out = pa_spa_pair(seq, model.params, f"enc.s{stage}", 0, model.config)
            np.testing.assert_array_equal(out.tokens.data, seq.tokens.data)
            dec_out = pa_spa_pair(seq, model.params, f"dec.s{stage}", 0, model.config)
            np.testing.assert_array_equal(dec_out.tokens.data, seq.tokens.data)
            mem = self.seq(n=n, seed=stage + 50)
            crossed = _cross_block(
                seq.tokens, mem.tokens, model.params, f"dec.s{stage}.x0", model.config.heads
            )
            np.testing.assert_array_equal(crossed.data, seq.tokens.data)

    def test_shape_preserved_at_every_stage(self, tiny_model):
        for stage, n in [(0, 16), (1, 8), (2, 4), (3, 2), (4, 1)]:
            seq = self.seq(n=n, seed=stage)
            out = pa_spa_pair(seq, tiny_model.params, f"enc.s{stage}", 0, tiny_model.config)
            assert out.tokens.shape == seq.tokens.shape
            assert not out.shifted

    def test_single_token_attention_weight_exactly_one(self, tiny_model):
        recorder = AttentionRecorder()
        seq = TokenSequence(
            tokens=Tensor(np.random.default_rng(3).normal(size=(1, 1, 8)).astype(np.float32)),
            stage_index=4,
            patch_size=512,
        )
        pa_spa_pair(seq, tiny_model.params, "enc.s4", 0, tiny_model.config, recorder)
        for m in recorder.maps:
            assert m.weights.shape == (1, 1)
            assert m.weights[0, 0] == 1.0

    def test_shifted_input_rejected(self, tiny_model):
        from ppg2ecg.patches import cyclic_shift

        seq = cyclic_shift(self.seq(n=8))
        with pytest.raises(StateError):
            pa_spa_pair(seq, tiny_model.params, "enc.s1", 0, tiny_model.config)


class TestReconstruct:
    def test_output_length_512(self, tiny_model):
        out = reconstruct(rand_window(1)[0], tiny_model)
        assert out.shape == (512,)
        batch = reconstruct(rand_window(2, batch=3), tiny_model)
        assert batch.shape == (3, 512)

    def test_zero_params_constant_output_equals_head_bias(self):
        model = ReconstructorModel.build(TINY, seed=4)
        zero_all(model)
        model.params["head.b"].data[...] = 0.25
        out = reconstruct(rand_window(6)[0], model)
        np.testing.assert_array_equal(out, np.full(512, 0.25, dtype=np.float32))

    def test_inference_is_target_free_and_pure(self, tiny_model):
        x = rand_window(8)
        target = rand_window(9)
        first = reconstruct(x, tiny_model)
        target[...] = 0.0  # destroying the "targets" cannot matter
        second = reconstruct(x, tiny_model)
        np.testing.assert_array_equal(first, second)


class TestTraining:
    def data(self, n=4):
        rng = np.random.default_rng(13)
        return (
            rng.uniform(-1, 1, (n, 512)).astype(np.float32),
            rng.uniform(-1, 1, (n, 512)).astype(np.float32),
        )

    def test_zero_lr_keeps_loss_constant(self):
        model = ReconstructorModel.build(TINY, seed=5)
        x, y = self.data(1)
        trace = train_reconstructor(x, y, model, TrainSchedule(lr=0.0, epochs=4, batch_size=1))
        assert len(set(trace)) == 1

    def test_empty_dataset_rejected(self, tiny_model):
        with pytest.raises(InputError):
            train_reconstructor(
                np.zeros((0, 512), np.float32),
                np.zeros((0, 512), np.float32),
                tiny_model,
                TrainSchedule(epochs=1),
            )

    def test_loss_trace_deterministic_across_runs(self):
        x, y = self.data(6)
        sched = TrainSchedule(lr=1e-3, epochs=3, batch_size=2, seed=21)
        t1 = train_reconstructor(x, y, ReconstructorModel.build(TINY, seed=6), sched)
        t2 = train_reconstructor(x, y, ReconstructorModel.build(TINY, seed=6), sched)
        assert t1 == t2

    def test_training_reduces_loss(self):
        model = ReconstructorModel.build(TINY, seed=7)
        x, y = self.data(4)
        trace = train_reconstructor(x, y, model, TrainSchedule(lr=1e-3, epochs=30, batch_size=4))
        assert trace[-1] < trace[0]


class TestCheckpoint:
    def test_save_load_roundtrip_bitwise(self, tmp_path, tiny_model):
        model = ReconstructorModel.build(TINY, seed=8)
        x, y = np.split(rand_window(31, batch=4), 2, axis=0)[0], rand_window(32, batch=2)
        train_reconstructor(x, y, model, TrainSchedule(lr=1e-3, epochs=2, batch_size=2))
        w = rand_window(33)
        before = reconstruct(w, model)
        save_checkpoint(tmp_path / "ckpt", model.params, config_hash="abc123", seed=8)
        fresh = ReconstructorModel.build(TINY, seed=99)
        meta = load_checkpoint(tmp_path / "ckpt", fresh.params, expected_config_hash="abc123")
        assert meta["seed"] == "8"
        after = reconstruct(w, fresh)
        np.testing.assert_array_equal(before, after)

    def test_hash_mismatch_rejected(self, tmp_path):
        model = ReconstructorModel.build(TINY, seed=9)
        save_checkpoint(tmp_path / "ckpt", model.params, config_hash="aaa", seed=9)
        fresh = ReconstructorModel.build(TINY, seed=9)
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path / "ckpt", fresh.params, expected_config_hash="bbb")

    def test_wrong_architecture_rejected(self, tmp_path):
        model = ReconstructorModel.build(TINY, seed=10)
        save_checkpoint(tmp_path / "ckpt", model.params, config_hash="aaa", seed=10)
        other = ReconstructorModel.build(
            StageConfig(d_model=8, heads=2, depths=(2, 2), patch_sizes=(32, 64), stem_channels=2),
            seed=10,
        )
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path / "ckpt", other.params, expected_config_hash="aaa")


class TestAttentionMaps:
    def test_zero_weights_give_uniform_rows(self):
        model = ReconstructorModel.build(TINY, seed=12)
        zero_all(model)
        maps = extract_attention(model, rand_window(41)[0], scope="all")
        for m in maps:
            n_k = m.weights.shape[1]
            np.testing.assert_array_equal(m.weights, np.full(m.weights.shape, 1.0 / n_k))

    def test_stage0_encoder_maps_are_16_by_16(self, tiny_model):
        maps = extract_attention(tiny_model, rand_window(42)[0], scope="all")
        stage0 = [m for m in maps if m.stage_index == 0 and m.weights.shape == (16, 16)]
        assert len(stage0) >= TINY.depths[0] * TINY.heads

    def test_rows_sum_to_one(self, tiny_model):
        maps = extract_attention(tiny_model, rand_window(43)[0], scope="all")
        assert maps
        for m in maps:
            np.testing.assert_allclose(m.weights.sum(axis=1), 1.0, atol=1e-5)
            assert (m.weights >= 0).all() and (m.weights <= 1.0 + 1e-6).all()

    def test_last_scope_returns_final_block_heads(self, tiny_model):
        maps = extract_attention(tiny_model, rand_window(44)[0], scope="last")
        assert len(maps) == TINY.heads
        assert len({m.block_index for m in maps}) == 1

    def test_csv_rows_per_map(self, tiny_model):
        maps = extract_attention(tiny_model, rand_window(45)[0], scope="last")
        rows = attention_rows(maps)
        expected = sum(m.weights.size for m in maps)
        assert len(rows) == expected


class TestFullModelGradient:
    def test_loss_gradient_matches_finite_differences(self):
        model = ReconstructorModel.build(TINY, seed=14).copy(dtype=np.float64)
        rng = np.random.default_rng(15)
        x = rng.uniform(-1, 1, (1, 512))
        y = rng.uniform(-1, 1, (1, 512))
        names = model.params.names()
        picks = rng.choice(len(names), size=10, replace=False)
        tensors = [model.params[names[i]] for i in picks]
        coords = [(j, int(rng.integers(t.size))) for j, t in enumerate(tensors)]

        def loss_fn(*_):
            pred = forward_waveform(model, Tensor(x))
            return ad.l1_loss(pred, Tensor(y))

        err = ad.gradient_check(loss_fn, tensors, h=1e-3, coords=coords)
        assert err < 1e-3

    def test_param_count_derivable_from_config(self):
        for cfg in [TINY, StageConfig(d_model=16, heads=4), TINY.fixed_patch_variant(32)]:
            model = ReconstructorModel.build(cfg, seed=0)
            assert model.params.n_values() == expected_param_count(cfg)


class TestFixedPatchBaseline:
    def test_single_stage_forward(self):
        cfg = StageConfig(d_model=8, heads=2, depths=(2, 2), patch_sizes=(32, 64), stem_channels=2)
        base_cfg = cfg.fixed_patch_variant(128)
        model = ReconstructorModel.build(base_cfg, seed=16)
        memories = encode(rand_window(17), model)
        assert len(memories) == 1
        assert memories[0].tokens.shape == (1, 4, 8)
        out = reconstruct(rand_window(18)[0], model)
        assert out.shape == (512,)

    def test_no_seam_params_when_unshifted(self):
        cfg = TINY.fixed_patch_variant(32)
        model = ReconstructorModel.build(cfg, seed=17)
        assert not any("seam" in n for n in model.params.names())

"""Video encoder: position encoding, window locality, leap mask structure."""

import numpy as np
import pytest

from raformer.encoder import (
    EncoderConfig,
    VideoEncoder,
    VideoFeatures,
    intra_frame_mask,
    leap_mask,
    temporal_encoding,
    window_mask,
)
from raformer.tensor import Tape, Tensor, mul, reshape


def make_encoder(seed=70, **kwargs):
    cfg_kwargs = {k: v for k, v in kwargs.items() if k in ("d_model", "window_sizes", "leap_step", "depth")}
    enc_kwargs = {k: v for k, v in kwargs.items() if k in ("use_window_attention", "use_leap")}
    cfg = EncoderConfig(d_model=cfg_kwargs.pop("d_model", 8), **cfg_kwargs)
    s_objects = kwargs.get("s_objects", 2)
    return VideoEncoder(cfg, s_objects, np.random.default_rng(seed), **enc_kwargs)


class TestTemporalEncoding:
    def test_row_zero_alternates_zero_one(self):
        table = temporal_encoding(4, 6)
        np.testing.assert_allclose(table[0], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0], atol=1e-12)

    def test_matches_closed_form(self):
        d = 8
        table = temporal_encoding(5, d)
        for t in range(5):
            for i in range(d):
                angle = t / 10000 ** (2 * (i // 2) / d)
                expected = np.sin(angle) if i % 2 == 0 else np.cos(angle)
                assert abs(table[t, i] - expected) < 1e-12


class TestPositionEncoding:
    def test_zero_input_zero_table_gives_pure_sinusoid(self):
        enc = make_encoder(s_objects=3)
        enc.spatial_embedding.data[:] = 0.0
        out = enc.position_encode(Tensor(np.zeros((4, 3, 8))))
        expected = np.broadcast_to(temporal_encoding(4, 8)[:, None, :], (4, 3, 8))
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_additive_in_content(self):
        enc = make_encoder(s_objects=2)
        rng = np.random.default_rng(71)
        a = rng.standard_normal((3, 2, 8))
        b = rng.standard_normal((3, 2, 8))
        diff = enc.position_encode(Tensor(a)).data - enc.position_encode(Tensor(b)).data
        np.testing.assert_allclose(diff, a - b, atol=1e-12)

    def test_same_slot_differs_only_by_content(self):
        enc = make_encoder(s_objects=2)
        rng = np.random.default_rng(72)
        base = rng.standard_normal((3, 2, 8))
        other = base.copy()
        other[1, 0] += 1.5
        diff = enc.position_encode(Tensor(other)).data - enc.position_encode(Tensor(base)).data
        np.testing.assert_allclose(diff[1, 0], 1.5, atol=1e-12)
        assert np.abs(np.delete(diff.reshape(-1, 8), 2, axis=0)).max() == 0.0


class TestIntraFrameAttention:
    def test_single_object_gets_weight_one(self):
        enc = make_encoder(s_objects=1)
        rng = np.random.default_rng(73)
        x = rng.standard_normal((1, 8))
        out = enc.intra_frame_self_attention(Tensor(x), t_len=1)
        attn = enc.intra.attn
        h = enc.intra.norm(Tensor(x)).data
        v = h @ attn.wv.data + attn.bv.data
        expected = x + v @ attn.wo.data + attn.bo.data
        np.testing.assert_allclose(out.data, expected, atol=1e-10)

    def test_object_permutation_equivariance_within_frame(self):
        enc = make_encoder(s_objects=3)
        rng = np.random.default_rng(74)
        x = rng.standard_normal((3, 8))  # one frame, three objects
        perm = np.array([2, 0, 1])
        base = enc.intra_frame_self_attention(Tensor(x), t_len=1).data
        permuted = enc.intra_frame_self_attention(Tensor(x[perm]), t_len=1).data
        np.testing.assert_allclose(permuted, base[perm], atol=1e-9)

    def test_no_cross_frame_leakage(self):
        enc = make_encoder(s_objects=2)
        rng = np.random.default_rng(75)
        x = rng.standard_normal((6, 8))  # three frames x two objects
        bumped = x.copy()
        bumped[4:] += 10.0  # frame 2
        base = enc.intra_frame_self_attention(Tensor(x), t_len=3).data
        after = enc.intra_frame_self_attention(Tensor(bumped), t_len=3).data
        np.testing.assert_allclose(after[:4], base[:4], atol=1e-12)
        assert np.abs(after[4:] - base[4:]).max() > 0

    def test_matches_kernel_level_oracle(self):
        # one frame, S=3: block mask is all-True, so the residual block on
        # the raw kernel output must agree exactly
        enc = make_encoder(s_objects=3)
        rng = np.random.default_rng(76)
        x = rng.standard_normal((3, 8))
        got = enc.intra_frame_self_attention(Tensor(x), t_len=1).data
        expected = enc.intra(Tensor(x), np.ones((3, 3), dtype=bool)).output.data
        np.testing.assert_allclose(got, expected, atol=1e-12)


class TestWindowMask:
    def test_window_one_sees_own_frame_only(self):
        mask = window_mask(4, 3, 1)
        for t in range(4):
            allowed = np.flatnonzero(mask[t])
            np.testing.assert_array_equal(allowed, np.arange(t * 3, (t + 1) * 3))

    def test_window_three_center_frame_keys(self):
        mask = window_mask(5, 2, 3)
        allowed_frames = sorted(set(int(j // 2) for j in np.flatnonzero(mask[2])))
        assert allowed_frames == [1, 2, 3]

    def test_boundary_truncation(self):
        mask = window_mask(5, 1, 5)
        np.testing.assert_array_equal(np.flatnonzero(mask[0]), [0, 1, 2])
        np.testing.assert_array_equal(np.flatnonzero(mask[4]), [2, 3, 4])

    def test_even_window_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            window_mask(4, 2, 2)
        with pytest.raises(ValueError, match="odd"):
            EncoderConfig(d_model=8, window_sizes=(1, 4))


class TestWindowCrossAttention:
    def test_window_one_ignores_other_frames_objects(self):
        enc = make_encoder(s_objects=2, window_sizes=(1, 1), d_model=8)
        rng = np.random.default_rng(77)
        frames = rng.standard_normal((4, 8))
        objects = rng.standard_normal((8, 8))
        bumped = objects.copy()
        bumped[2:4] += 5.0  # frame 1 objects
        base = enc.window_cross_attention(Tensor(frames), Tensor(objects), t_len=4).data
        after = enc.window_cross_attention(Tensor(frames), Tensor(bumped), t_len=4).data
        np.testing.assert_allclose(np.delete(after, 1, axis=0), np.delete(base, 1, axis=0), atol=1e-12)
        assert np.abs(after[1] - base[1]).max() > 0

    def test_out_of_window_objects_do_not_affect_frame_zero(self):
        enc = make_encoder(s_objects=2, window_sizes=(1, 3, 5, 7), d_model=8)
        rng = np.random.default_rng(78)
        frames = rng.standard_normal((12, 8))
        objects = rng.standard_normal((24, 8))
        bumped = objects.copy()
        bumped[10:12] += 7.0  # frame 5, beyond radius 3 from frame 0
        base = enc.window_cross_attention(Tensor(frames), Tensor(objects), t_len=12).data
        after = enc.window_cross_attention(Tensor(frames), Tensor(bumped), t_len=12).data
        np.testing.assert_allclose(after[0], base[0], atol=1e-12)

    def test_gradient_locality_beyond_max_radius(self):
        enc = make_encoder(s_objects=2, window_sizes=(1, 3, 5, 7), d_model=8)
        rng = np.random.default_rng(79)
        frames = Tensor(rng.standard_normal((10, 8)))
        objects = Tensor(rng.standard_normal((20, 8)), requires_grad=True)
        with Tape() as tape:
            out = enc.window_cross_attention(frames, objects, t_len=10)
            loss = mul(out, np.eye(10)[0][:, None]).sum()  # frame 0 row only
        tape.backward(loss)
        grads = objects.grad.reshape(10, 2, 8)
        assert (grads[4:] == 0.0).all()  # radius 3
        assert np.abs(grads[:4]).max() > 0


class TestLeapMask:
    def test_paper_example_pairs(self):
        mask = leap_mask(4, 2)
        assert mask.sum() == 8  # (0,2), (1,3) both directions plus self links
        assert mask[0, 2] and mask[2, 0]
        assert mask[1, 3] and mask[3, 1]
        assert not mask[0, 1] and not mask[2, 3]
        assert mask.diagonal().all()

    def test_step_one_is_dense(self):
        assert leap_mask(5, 1).all()

    def test_group_count_formula(self):
        # allowed entries = sum over residue groups of |group|^2
        for t_len in range(1, 17):
            for step in range(1, t_len + 1):
                mask = leap_mask(t_len, step)
                expected = sum(
                    len(range(r, t_len, step)) ** 2 for r in range(step)
                )
                assert mask.sum() == expected
        assert leap_mask(16, 4).sum() == 64

    def test_rotation_by_step_preserves_mask(self):
        mask = leap_mask(16, 4)
        rolled = np.roll(np.roll(mask, 4, axis=0), 4, axis=1)
        np.testing.assert_array_equal(rolled, mask)

    def test_step_bounds(self):
        with pytest.raises(ValueError, match="exceeds"):
            leap_mask(3, 4)
        with pytest.raises(ValueError, match=">= 1"):
            leap_mask(3, 0)


class TestLeapAttention:
    def test_step_equal_to_length_isolates_frames(self):
        enc = make_encoder(s_objects=2, leap_step=4, d_model=8)
        rng = np.random.default_rng(80)
        frames = rng.standard_normal((4, 8))
        bumped = frames.copy()
        bumped[2] += 3.0
        base = enc.leap_attention(Tensor(frames), t_len=4).data
        after = enc.leap_attention(Tensor(bumped), t_len=4).data
        np.testing.assert_allclose(np.delete(after, 2, axis=0), np.delete(base, 2, axis=0), atol=1e-12)

    def test_vanilla_variant_mixes_neighbours(self):
        enc = make_encoder(s_objects=2, leap_step=4, use_leap=False, d_model=8)
        rng = np.random.default_rng(81)
        frames = rng.standard_normal((4, 8))
        bumped = frames.copy()
        bumped[1] += 3.0
        base = enc.leap_attention(Tensor(frames), t_len=4).data
        after = enc.leap_attention(Tensor(bumped), t_len=4).data
        assert np.abs(after[0] - base[0]).max() > 0


class TestEncodeVideo:
    def test_smallest_instance_runs(self):
        enc = make_encoder(s_objects=1, window_sizes=(1,), leap_step=1, d_model=8)
        out = enc(Tensor(np.ones((1, 8))), Tensor(np.ones((1, 1, 8))))
        assert out.shape == (1, 8)
        assert np.isfinite(out.data).all()

    def test_deterministic_across_runs(self):
        rng = np.random.default_rng(82)
        frames = rng.standard_normal((6, 8))
        objects = rng.standard_normal((6, 2, 8))
        first = make_encoder(seed=83, s_objects=2, leap_step=2)(Tensor(frames), Tensor(objects)).data
        second = make_encoder(seed=83, s_objects=2, leap_step=2)(Tensor(frames), Tensor(objects)).data
        assert first.tobytes() == second.tobytes()

    def test_leap_step_larger_than_sequence_rejected(self):
        enc = make_encoder(s_objects=2, leap_step=8)
        with pytest.raises(ValueError, match="exceeds"):
            enc(Tensor(np.zeros((4, 8))), Tensor(np.zeros((4, 2, 8))))

    def test_mean_pool_variant_keeps_shape(self):
        rng = np.random.default_rng(84)
        frames = rng.standard_normal((5, 8))
        objects = rng.standard_normal((5, 2, 8))
        full = make_encoder(seed=85, s_objects=2, leap_step=1)
        ablated = make_encoder(seed=85, s_objects=2, leap_step=1, use_window_attention=False)
        a = full(Tensor(frames), Tensor(objects))
        b = ablated(Tensor(frames), Tensor(objects))
        assert a.shape == b.shape == (5, 8)
        assert np.abs(a.data - b.data).max() > 0

    def test_video_features_validation(self):
        with pytest.raises(ValueError, match="frame count"):
            VideoFeatures(np.zeros((3, 4)), np.zeros((2, 2, 4)))
        v = VideoFeatures(np.zeros((3, 4)), np.zeros((3, 2, 4)))
        assert v.frames.shape == (3, 4)

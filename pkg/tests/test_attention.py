"""Attention kernel oracles, mask semantics, and equivariance properties."""

import numpy as np
import pytest

from raformer.attention import (
    MASK_SENTINEL,
    AttentionConfig,
    DegenerateMaskError,
    FeedForward,
    MultiHeadAttention,
    ResidualCrossAttention,
    ResidualSelfAttention,
    scaled_dot_product,
)
from raformer.tensor import Tape, Tensor, mul


def loop_attention(q, k, v, mask=None):
    """Explicit-weights oracle for single-head attention."""
    m, h = q.shape
    n = k.shape[0]
    scores = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            scores[i, j] = float(q[i] @ k[j]) / np.sqrt(h)
            if mask is not None and not mask[i, j]:
                scores[i, j] = MASK_SENTINEL
    out = np.zeros((m, v.shape[1]))
    for i in range(m):
        w = np.exp(scores[i] - scores[i].max())
        w = w / w.sum()
        out[i] = w @ v
    return out, scores


class TestScaledDotProduct:
    def test_single_matching_key_returns_value(self):
        q = Tensor([[1.0, 2.0, 3.0]])
        v = Tensor([[7.0, -1.0, 0.5]])
        out, _ = scaled_dot_product(q, q, v)
        np.testing.assert_allclose(out.data, v.data, atol=1e-12)

    def test_orthogonal_query_averages_values(self):
        q = Tensor([[1.0, 0.0]])
        k = Tensor([[0.0, 1.0], [0.0, -1.0], [0.0, 2.0]])
        v = Tensor(np.tile([[3.0, 4.0]], (3, 1)))
        out, _ = scaled_dot_product(q, k, v)
        np.testing.assert_allclose(out.data, [[3.0, 4.0]], atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(40)
        for _ in range(5):
            q = rng.standard_normal((4, 4))
            k = rng.standard_normal((4, 4))
            v = rng.standard_normal((4, 4))
            out, scores = scaled_dot_product(Tensor(q), Tensor(k), Tensor(v))
            expected_out, expected_scores = loop_attention(q, k, v)
            assert np.abs(out.data - expected_out).max() < 1e-10
            assert np.abs(scores.data - expected_scores).max() < 1e-10

    def test_masked_loop_oracle_and_sentinel(self):
        rng = np.random.default_rng(41)
        q = rng.standard_normal((3, 4))
        k = rng.standard_normal((5, 4))
        v = rng.standard_normal((5, 4))
        mask = rng.random((3, 5)) > 0.4
        mask[:, 0] = True  # keep every row non-degenerate
        out, scores = scaled_dot_product(Tensor(q), Tensor(k), Tensor(v), mask)
        expected_out, expected_scores = loop_attention(q, k, v, mask)
        assert np.abs(out.data - expected_out).max() < 1e-10
        assert (scores.data[~mask] <= MASK_SENTINEL / 2).all()

    def test_unmasked_weights_sum_to_one(self):
        rng = np.random.default_rng(42)
        q = rng.standard_normal((4, 4))
        k = rng.standard_normal((6, 4))
        mask = rng.random((4, 6)) > 0.5
        mask[:, 2] = True
        _, scores = scaled_dot_product(Tensor(q), Tensor(k), Tensor(rng.standard_normal((6, 4))), mask)
        w = np.exp(scores.data - scores.data.max(axis=1, keepdims=True))
        w = w / w.sum(axis=1, keepdims=True)
        row_sums = np.array([w[i, mask[i]].sum() for i in range(4)])
        np.testing.assert_allclose(row_sums, 1.0, atol=1e-9)
        assert (w[~mask] == 0.0).all()

    def test_fully_masked_row_raises(self):
        mask = np.array([[True, True], [False, False]])
        with pytest.raises(DegenerateMaskError, match="row 1"):
            scaled_dot_product(
                Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))), mask
            )

    def test_masked_keys_get_zero_value_gradient(self):
        rng = np.random.default_rng(43)
        q = Tensor(rng.standard_normal((2, 4)))
        k = Tensor(rng.standard_normal((4, 4)))
        v = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        mask = np.ones((2, 4), dtype=bool)
        mask[:, 3] = False
        with Tape() as tape:
            out, _ = scaled_dot_product(q, k, v, mask)
            loss = out.sum()
        tape.backward(loss)
        np.testing.assert_array_equal(v.grad[3], np.zeros(4))
        assert np.abs(v.grad[:3]).sum() > 0


class TestMultiHeadAttention:
    def _mha(self, n_heads, d=8, seed=50):
        cfg = AttentionConfig(d_model=d, n_heads=n_heads)
        return MultiHeadAttention(cfg, np.random.default_rng(seed))

    def test_one_head_reduces_to_kernel(self):
        rng = np.random.default_rng(51)
        mha = self._mha(1)
        x = rng.standard_normal((5, 8))
        kv = rng.standard_normal((3, 8))
        got = mha(Tensor(x), Tensor(kv), Tensor(kv))
        q = x @ mha.wq.data + mha.bq.data
        k = kv @ mha.wk.data + mha.bk.data
        v = kv @ mha.wv.data + mha.bv.data
        inner, scores = loop_attention(q, k, v)
        expected = inner @ mha.wo.data + mha.bo.data
        assert np.abs(got.output.data - expected).max() < 1e-10
        assert np.abs(got.scores.data - scores).max() < 1e-10

    def test_two_heads_match_independent_head_oracle(self):
        rng = np.random.default_rng(52)
        mha = self._mha(2)
        x = rng.standard_normal((4, 8))
        kv = rng.standard_normal((6, 8))
        got = mha(Tensor(x), Tensor(kv), Tensor(kv))
        q = x @ mha.wq.data + mha.bq.data
        k = kv @ mha.wk.data + mha.bk.data
        v = kv @ mha.wv.data + mha.bv.data
        head_outs, head_scores = [], []
        for i in range(2):
            cols = slice(4 * i, 4 * (i + 1))
            o, s = loop_attention(q[:, cols], k[:, cols], v[:, cols])
            head_outs.append(o)
            head_scores.append(s)
        expected = np.concatenate(head_outs, axis=1) @ mha.wo.data + mha.bo.data
        assert np.abs(got.output.data - expected).max() < 1e-10
        assert np.abs(got.scores.data - np.mean(head_scores, axis=0)).max() < 1e-10

    def test_key_value_permutation_equivariance(self):
        rng = np.random.default_rng(53)
        mha = self._mha(4)
        x = rng.standard_normal((3, 8))
        kv = rng.standard_normal((5, 8))
        mask = rng.random((3, 5)) > 0.3
        mask[:, 0] = True
        perm = rng.permutation(5)
        base = mha(Tensor(x), Tensor(kv), Tensor(kv), mask)
        permuted = mha(Tensor(x), Tensor(kv[perm]), Tensor(kv[perm]), mask[:, perm])
        np.testing.assert_allclose(permuted.output.data, base.output.data, atol=1e-9)
        np.testing.assert_allclose(permuted.scores.data, base.scores.data[:, perm], atol=1e-9)

    def test_per_head_masks(self):
        rng = np.random.default_rng(54)
        mha = self._mha(2)
        x = rng.standard_normal((3, 8))
        kv = rng.standard_normal((4, 8))
        masks = [np.ones((3, 4), dtype=bool), np.eye(3, 4, dtype=bool)]
        masks[1][:, 0] = True
        out = mha(Tensor(x), Tensor(kv), Tensor(kv), masks)
        assert out.output.shape == (3, 8)

    def test_width_mismatch_rejected(self):
        mha = self._mha(2)
        with pytest.raises(ValueError, match="d_model"):
            mha(Tensor(np.zeros((3, 6))), Tensor(np.zeros((3, 6))), Tensor(np.zeros((3, 6))))

    def test_head_count_must_divide_width(self):
        with pytest.raises(ValueError, match="divisible"):
            AttentionConfig(d_model=10, n_heads=3)


class TestBlocks:
    def test_self_attention_block_keeps_shape_and_differs_from_input(self):
        rng = np.random.default_rng(55)
        block = ResidualSelfAttention(AttentionConfig(8, 2), rng)
        x = rng.standard_normal((4, 8))
        out = block(Tensor(x))
        assert out.output.shape == (4, 8)
        assert np.abs(out.output.data - x).max() > 0

    def test_cross_block_gradients_flow_to_both_streams(self):
        rng = np.random.default_rng(56)
        block = ResidualCrossAttention(AttentionConfig(8, 2), rng)
        q = Tensor(rng.standard_normal((3, 8)), requires_grad=True)
        kv = Tensor(rng.standard_normal((5, 8)), requires_grad=True)
        with Tape() as tape:
            out = block(q, kv)
            loss = mul(out.output, rng.standard_normal((3, 8))).sum()
        tape.backward(loss)
        assert np.abs(q.grad).sum() > 0
        assert np.abs(kv.grad).sum() > 0

    def test_feed_forward_shape(self):
        rng = np.random.default_rng(57)
        ff = FeedForward(8, rng)
        out = ff(Tensor(rng.standard_normal((6, 8))))
        assert out.shape == (6, 8)


class TestKernelGradients:
    def test_attention_gradcheck(self):
        from raformer.gradcheck import check_op

        rng = np.random.default_rng(58)
        err = check_op(
            lambda ts: scaled_dot_product(ts[0], ts[1], ts[2])[0],
            [(3, 4), (5, 4), (5, 4)],
            rng,
            points=20,
        )
        assert err < 1e-4

    def test_mha_input_gradcheck(self):
        from raformer.gradcheck import check_op

        rng = np.random.default_rng(59)
        mha = MultiHeadAttention(AttentionConfig(8, 2), np.random.default_rng(60))
        err = check_op(
            lambda ts: mha(ts[0], ts[1], ts[1]).output,
            [(3, 8), (4, 8)],
            rng,
            points=5,
        )
        assert err < 1e-4

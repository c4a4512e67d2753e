"""Answer decoder equivariance, composition oracle, and prediction rule."""

import numpy as np
import pytest

from raformer.attention import AttentionConfig
from raformer.decoder import AnswerDecoder, predict
from raformer.tensor import Tensor, gelu, linear, reshape


def make_decoder(seed=120, d=8, heads=2, n_open=0):
    return AnswerDecoder(AttentionConfig(d, heads), np.random.default_rng(seed), n_open_answers=n_open)


class TestDecodeMultiChoice:
    def test_identical_candidates_get_identical_logits(self):
        decoder = make_decoder()
        rng = np.random.default_rng(121)
        row = rng.standard_normal(8)
        queries = Tensor(np.tile(row, (3, 1)))
        memory = Tensor(rng.standard_normal((5, 8)))
        logits = decoder.decode_mc(queries, memory).data
        assert logits.max() - logits.min() < 1e-9

    def test_candidate_permutation_permutes_logits(self):
        decoder = make_decoder()
        rng = np.random.default_rng(122)
        queries = rng.standard_normal((5, 8))
        memory = rng.standard_normal((6, 8))
        base = decoder.decode_mc(Tensor(queries), Tensor(memory)).data
        for _ in range(20):
            perm = rng.permutation(5)
            permuted = decoder.decode_mc(Tensor(queries[perm]), Tensor(memory)).data
            np.testing.assert_allclose(permuted, base[perm], atol=1e-9)

    def test_memory_row_permutation_leaves_logits_unchanged(self):
        decoder = make_decoder()
        rng = np.random.default_rng(123)
        queries = rng.standard_normal((4, 8))
        memory = rng.standard_normal((7, 8))
        base = decoder.decode_mc(Tensor(queries), Tensor(memory)).data
        for _ in range(20):
            perm = rng.permutation(7)
            permuted = decoder.decode_mc(Tensor(queries), Tensor(memory[perm])).data
            np.testing.assert_allclose(permuted, base, atol=1e-9)

    def test_matches_per_layer_composition_oracle(self):
        decoder = make_decoder()
        rng = np.random.default_rng(124)
        queries = Tensor(rng.standard_normal((5, 8)))
        memory = Tensor(rng.standard_normal((4, 8)))
        got = decoder.decode_mc(queries, memory).data
        h = decoder.self_block(queries).output
        h = decoder.cross_block(h, memory).output
        h = decoder.ff(h)
        hidden = gelu(linear(h, decoder.mc_w1, decoder.mc_b1))
        expected = reshape(linear(hidden, decoder.mc_w2, decoder.mc_b2), (5,)).data
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_needs_at_least_two_candidates(self):
        decoder = make_decoder()
        with pytest.raises(ValueError, match="candidates"):
            decoder.decode_mc(Tensor(np.zeros((1, 8))), Tensor(np.zeros((3, 8))))

    def test_empty_memory_rejected(self):
        decoder = make_decoder()
        with pytest.raises(ValueError, match="memory"):
            decoder.decode_mc(Tensor(np.zeros((2, 8))), Tensor(np.zeros((0, 8))))


class TestDecodeOpenEnded:
    def test_identical_memory_rows_reduce_to_uniform_average(self):
        decoder = make_decoder(n_open=6)
        rng = np.random.default_rng(125)
        row = rng.standard_normal(8)
        query = Tensor(rng.standard_normal((1, 8)))
        for rows in (1, 3, 9):
            memory = Tensor(np.tile(row, (rows, 1)))
            got = decoder.cross_block(query, memory).output.data
            single = decoder.cross_block(query, Tensor(row[None, :])).output.data
            np.testing.assert_allclose(got, single, atol=1e-9)

    def test_logit_count_independent_of_memory_length(self):
        decoder = make_decoder(n_open=6)
        rng = np.random.default_rng(126)
        query = Tensor(rng.standard_normal(8))
        for rows in (1, 4, 11):
            logits = decoder.decode_oe(query, Tensor(rng.standard_normal((rows, 8))))
            assert logits.shape == (6,)

    def test_requires_open_ended_head(self):
        decoder = make_decoder(n_open=0)
        with pytest.raises(ValueError, match="open-ended"):
            decoder.decode_oe(Tensor(np.zeros(8)), Tensor(np.zeros((2, 8))))

    def test_empty_memory_rejected(self):
        decoder = make_decoder(n_open=3)
        with pytest.raises(ValueError, match="memory"):
            decoder.decode_oe(Tensor(np.zeros(8)), Tensor(np.zeros((0, 8))))


class TestPredict:
    def test_picks_largest(self):
        assert predict(Tensor([0.1, 0.9])) == 1

    def test_tie_breaks_toward_smaller_index(self):
        assert predict(Tensor([0.5, 0.5, 0.5])) == 0

    def test_matches_argmax_oracle(self):
        rng = np.random.default_rng(127)
        for _ in range(50):
            logits = rng.standard_normal(int(rng.integers(1, 9)))
            assert predict(Tensor(logits)) == int(np.argmax(logits))

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="logits"):
            predict(Tensor(np.zeros(0)))

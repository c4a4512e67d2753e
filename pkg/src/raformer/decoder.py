"""Transformer answer decoder for multi-choice and open-ended prediction.

Answer queries self-attend (no positional encoding, so candidate order
cannot leak into the logits), cross-attend to the concatenated
critical-frame and question memory, pass a feed-forward block, and are
projected to logits by a small GELU MLP.
"""

from __future__ import annotations

import numpy as np

from .attention import (
    AttentionConfig,
    FeedForward,
    ResidualCrossAttention,
    ResidualSelfAttention,
)
from .tensor import (
    Module,
    Tensor,
    as_tensor,
    gelu,
    linear,
    reshape,
    xavier_uniform,
    zeros_param,
)


class AnswerDecoder(Module):
    """Single decoder block plus a per-mode output head.

    ``n_open_answers`` sizes the open-ended head; pass 0 for multi-choice
    only. The multi-choice head maps each decoded candidate row to one
    logit.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, n_open_answers: int = 0):
        d = cfg.d_model
        self.self_block = ResidualSelfAttention(cfg, rng)
        self.cross_block = ResidualCrossAttention(cfg, rng)
        self.ff = FeedForward(d, rng)
        self.mc_w1 = xavier_uniform((d, d), rng)
        self.mc_b1 = zeros_param(d)
        self.mc_w2 = xavier_uniform((d, 1), rng)
        self.mc_b2 = zeros_param(1)
        self.n_open_answers = n_open_answers
        if n_open_answers:
            self.oe_w1 = xavier_uniform((d, d), rng)
            self.oe_b1 = zeros_param(d)
            self.oe_w2 = xavier_uniform((d, n_open_answers), rng)
            self.oe_b2 = zeros_param(n_open_answers)

    def _decode(self, queries, memory) -> Tensor:
        memory = as_tensor(memory)
        if memory.shape[0] < 1:
            raise ValueError("decoder memory is empty")
        h = self.self_block(queries).output
        h = self.cross_block(h, memory).output
        return self.ff(h)

    def decode_mc(self, queries, memory) -> Tensor:
        """Score each pooled candidate row; returns (n_candidates,) logits."""
        queries = as_tensor(queries)
        if queries.shape[0] < 2:
            raise ValueError(f"multi-choice needs >= 2 candidates, got {queries.shape[0]}")
        h = self._decode(queries, memory)
        hidden = gelu(linear(h, self.mc_w1, self.mc_b1))
        logits = linear(hidden, self.mc_w2, self.mc_b2)
        return reshape(logits, (queries.shape[0],))

    def decode_oe(self, query, memory) -> Tensor:
        """Decode the shared learnable query; returns (n_open_answers,) logits."""
        if not self.n_open_answers:
            raise ValueError("decoder was built without an open-ended head")
        query = as_tensor(query)
        h = self._decode(reshape(query, (1, query.size)), memory)
        hidden = gelu(linear(h, self.oe_w1, self.oe_b1))
        logits = linear(hidden, self.oe_w2, self.oe_b2)
        return reshape(logits, (self.n_open_answers,))


def predict(logits) -> int:
    """Argmax answer index; ties resolve toward the smaller index."""
    values = as_tensor(logits).data.reshape(-1)
    if values.size < 1:
        raise ValueError("no logits to predict from")
    return int(values.argmax())

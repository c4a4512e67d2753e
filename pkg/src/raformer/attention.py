"""Scaled dot-product and multi-head attention with masks and score export.

Masks are boolean arrays (query x key), True = allowed. Masked logits are
pushed to a large negative sentinel instead of literal -inf so downstream
arithmetic stays finite; after the stabilized softmax the masked weights
underflow to exactly zero, so masked keys get exactly zero gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    Module,
    Tensor,
    add,
    as_tensor,
    concat,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    ones_param,
    slice_cols,
    softmax,
    transpose,
    xavier_uniform,
    zeros_param,
)

MASK_SENTINEL = -1e30


class DegenerateMaskError(ValueError):
    """A mask row allows no keys, so attention weights are undefined."""


@dataclass
class AttentionConfig:
    d_model: int
    n_heads: int

    def __post_init__(self):
        if self.n_heads < 1:
            raise ValueError(f"n_heads must be positive, got {self.n_heads}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class AttentionOutput:
    output: Tensor  # (query_len, d_model)
    scores: Tensor  # (query_len, key_len) pre-softmax logits, mean over heads


# Sentinel addends are cached per mask object, but only for masks frozen
# read-only (the cached builders in encoder.py): a frozen mask signals a
# long-lived object, while ad-hoc masks would grow the cache unboundedly.
# Values keep the key object alive so ids cannot be recycled.
_ADDEND_CACHE: dict[int, tuple[object, np.ndarray]] = {}


def _mask_addend(mask, m: int, n: int) -> np.ndarray:
    cacheable = isinstance(mask, np.ndarray) and not mask.flags.writeable
    if cacheable:
        cached = _ADDEND_CACHE.get(id(mask))
        if cached is not None and cached[0] is mask and cached[1].shape == (m, n):
            return cached[1]
    key = mask
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (m, n):
        raise ValueError(f"mask shape {mask.shape} does not match scores ({m}, {n})")
    if not mask.any(axis=1).all():
        row = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise DegenerateMaskError(f"mask row {row} allows no keys")
    addend = np.where(mask, 0.0, MASK_SENTINEL)
    if cacheable:
        _ADDEND_CACHE[id(key)] = (key, addend)
    return addend


def scaled_dot_product(q, k, v, mask=None) -> tuple[Tensor, Tensor]:
    """Single-head attention; returns (output, pre-softmax scores)."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query width {q.shape} does not match key width {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key count {k.shape} does not match value count {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[1])
    scores = mul(matmul(q, transpose(k)), scale)
    if mask is not None:
        scores = add(scores, _mask_addend(mask, q.shape[0], k.shape[0]))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), scores


class MultiHeadAttention(Module):
    """Projected multi-head attention; scores are averaged over heads.

    ``mask`` may be a single boolean array shared by all heads or a list
    with one mask per head (used by the multi-scale window attention).
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_model
        self.wq = xavier_uniform((d, d), rng)
        self.wk = xavier_uniform((d, d), rng)
        self.wv = xavier_uniform((d, d), rng)
        self.wo = xavier_uniform((d, d), rng)
        self.bq = zeros_param(d)
        self.bk = zeros_param(d)
        self.bv = zeros_param(d)
        self.bo = zeros_param(d)

    def __call__(self, q_in, k_in, v_in, mask=None) -> AttentionOutput:
        cfg = self.cfg
        for name, t in (("query", q_in), ("key", k_in), ("value", v_in)):
            if as_tensor(t).shape[1] != cfg.d_model:
                raise ValueError(
                    f"{name} width {as_tensor(t).shape[1]} does not match d_model {cfg.d_model}"
                )
        if isinstance(mask, (list, tuple)):
            if len(mask) != cfg.n_heads:
                raise ValueError(f"got {len(mask)} masks for {cfg.n_heads} heads")
            head_masks = list(mask)
        else:
            head_masks = [mask] * cfg.n_heads

        q = linear(q_in, self.wq, self.bq)
        k = linear(k_in, self.wk, self.bk)
        v = linear(v_in, self.wv, self.bv)

        hd = cfg.head_dim
        heads = []
        score_sum = None
        for i in range(cfg.n_heads):
            qs = slice_cols(q, i * hd, (i + 1) * hd)
            ks = slice_cols(k, i * hd, (i + 1) * hd)
            vs = slice_cols(v, i * hd, (i + 1) * hd)
            out_h, scores_h = scaled_dot_product(qs, ks, vs, head_masks[i])
            heads.append(out_h)
            score_sum = scores_h if score_sum is None else add(score_sum, scores_h)
        merged = concat(heads, axis=1) if len(heads) > 1 else heads[0]
        output = linear(merged, self.wo, self.bo)
        scores = mul(score_sum, 1.0 / cfg.n_heads)
        return AttentionOutput(output=output, scores=scores)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = ones_param(d)
        self.bias = zeros_param(d)

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class ResidualSelfAttention(Module):
    """Pre-norm residual block: x + MHA(LN(x)) under an optional mask."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.norm = LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg, rng)

    def __call__(self, x, mask=None) -> AttentionOutput:
        h = self.norm(x)
        att = self.attn(h, h, h, mask)
        return AttentionOutput(output=add(x, att.output), scores=att.scores)


class ResidualCrossAttention(Module):
    """Pre-norm residual block: q + MHA(LN(q), LN(kv)) under an optional mask."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.norm_q = LayerNorm(cfg.d_model)
        self.norm_kv = LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg, rng)

    def __call__(self, q_rows, kv_rows, mask=None) -> AttentionOutput:
        hq = self.norm_q(q_rows)
        hkv = self.norm_kv(kv_rows)
        att = self.attn(hq, hkv, hkv, mask)
        return AttentionOutput(output=add(q_rows, att.output), scores=att.scores)


class FeedForward(Module):
    """Pre-norm residual MLP with 4x expansion and GELU."""

    def __init__(self, d: int, rng: np.random.Generator, expansion: int = 4):
        self.norm = LayerNorm(d)
        self.w1 = xavier_uniform((d, expansion * d), rng)
        self.b1 = zeros_param(expansion * d)
        self.w2 = xavier_uniform((expansion * d, d), rng)
        self.b2 = zeros_param(d)

    def __call__(self, x) -> Tensor:
        h = gelu(linear(self.norm(x), self.w1, self.b1))
        return add(x, linear(h, self.w2, self.b2))

"""Cross-modal fusion and adaptive selection of critical frames.

The fuser cross-attends encoded frames to question tokens and exposes the
pre-softmax score map. Flattening and softmaxing that map gives a
probability over all frame-word interactions; a fixed midpoint grid pushed
through the inverse empirical CDF picks interactions, whose frames are
deduplicated into the critical-frame list. Selection itself is index
arithmetic and carries no gradient; gradients reach the encoder through
the gathered frame rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .attention import AttentionConfig, MultiHeadAttention, ResidualCrossAttention
from .tensor import Module, Tensor, as_tensor, gather, reshape, softmax


class SamplerMode(str, Enum):
    ADAPTIVE = "adaptive"
    HARD_TOPN = "hard_topn"
    CLS = "cls"
    NONE = "none"


@dataclass
class InteractionMap:
    """Pre-softmax frame-question attention logits, shape (T, L)."""

    z: Tensor
    t_len: int
    q_len: int

    def __post_init__(self):
        if self.z.shape != (self.t_len, self.q_len):
            raise ValueError(
                f"score map shape {self.z.shape} does not match ({self.t_len}, {self.q_len})"
            )


@dataclass
class SampleSelection:
    """Sampled flat interaction ids and their deduplicated frames.

    Flat index k maps to (frame, word) = (k // L, k % L), 0-based.
    ``frame_indices`` preserves first-occurrence order.
    """

    flat_indices: list[int]
    frame_indices: list[int]
    word_indices: list[int]


class CrossModalFuser(Module):
    """Residual cross-attention, frames as queries and question tokens as keys."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.block = ResidualCrossAttention(cfg, rng)

    def __call__(self, frames, question) -> tuple[Tensor, InteractionMap]:
        frames, question = as_tensor(frames), as_tensor(question)
        if frames.shape[1] != question.shape[1]:
            raise ValueError(
                f"frame width {frames.shape[1]} does not match question width {question.shape[1]}"
            )
        att = self.block(frames, question)
        imap = InteractionMap(z=att.scores, t_len=frames.shape[0], q_len=question.shape[0])
        return att.output, imap


def interaction_probabilities(imap: InteractionMap) -> Tensor:
    """Softmax over the flattened score map, shape (1, T*L)."""
    return softmax(reshape(imap.z, (1, imap.t_len * imap.q_len)), axis=-1)


def cumulative_distribution(p) -> Tensor:
    """Running prefix sums of a probability row; final entry is 1."""
    p = as_tensor(p)
    return Tensor(np.cumsum(p.data.reshape(1, -1), axis=-1))


def inverse_transform_sample(cdf, n_samples: int) -> list[int]:
    """Invert the empirical CDF on the fixed midpoint grid.

    Grid points are (2i - 1) / (2N) for i = 1..N; each maps to the index
    whose CDF value is nearest, ties resolved toward the smaller index.
    The result follows grid order and may contain repeats.
    """
    if n_samples < 1:
        raise ValueError(f"sample count must be >= 1, got {n_samples}")
    values = as_tensor(cdf).data.reshape(-1)
    grid = (2.0 * np.arange(1, n_samples + 1) - 1.0) / (2.0 * n_samples)
    distances = np.abs(values[None, :] - grid[:, None])  # (N, T*L)
    return [int(k) for k in distances.argmin(axis=1)]


def hard_topn_sample(z, n_samples: int) -> list[int]:
    """The N largest score entries by flat index, ties toward smaller index."""
    flat = as_tensor(z).data.reshape(-1)
    if n_samples < 1 or n_samples > flat.size:
        raise ValueError(f"sample count must be in [1, {flat.size}], got {n_samples}")
    order = np.argsort(-flat, kind="stable")
    return [int(k) for k in order[:n_samples]]


def dedup_frames(flat_indices, q_len: int, t_len: int) -> SampleSelection:
    """Map flat interaction ids to frames, keeping first occurrences only."""
    words = []
    seen: set[int] = set()
    kept: list[int] = []
    for k in flat_indices:
        k = int(k)
        if k < 0 or k >= t_len * q_len:
            raise IndexError(f"flat index {k} out of range [0, {t_len * q_len})")
        t, word = divmod(k, q_len)
        words.append(word)
        if t not in seen:
            seen.add(t)
            kept.append(t)
    return SampleSelection(
        flat_indices=[int(k) for k in flat_indices],
        frame_indices=kept,
        word_indices=words,
    )


def collect_critical_frames(flat_indices, q_len: int, fused_frames) -> tuple[SampleSelection, Tensor]:
    """Dedup sampled interactions and gather the selected frame rows."""
    fused_frames = as_tensor(fused_frames)
    selection = dedup_frames(flat_indices, q_len, fused_frames.shape[0])
    rows = np.asarray(selection.frame_indices, dtype=np.int64)
    return selection, gather(fused_frames, rows, axis=0)


def adaptive_selection(imap: InteractionMap, n_samples: int, fused_frames) -> tuple[SampleSelection, Tensor]:
    """Probability map -> CDF -> inverse transform -> deduplicated frames."""
    p = interaction_probabilities(imap)
    cdf = cumulative_distribution(p)
    flat = inverse_transform_sample(cdf, n_samples)
    return collect_critical_frames(flat, imap.q_len, fused_frames)


def cls_frame_scores(frames, question_with_cls, attn: MultiHeadAttention) -> Tensor:
    """Importance of each frame as seen by a question-level summary token.

    The first row of ``question_with_cls`` must be the summary token; its
    attention logits over the frames (mean over heads) form the (1, T)
    score vector. Purely question-side, so deliberately uni-modal.
    """
    question_with_cls = as_tensor(question_with_cls)
    if question_with_cls.shape[0] < 2:
        raise ValueError("question sequence carries no summary token row")
    cls_row = gather(question_with_cls, np.array([0]), axis=0)
    return attn(cls_row, frames, frames).scores


def cls_topn_frames(scores, n_samples: int, t_len: int) -> list[int]:
    """Top frames by summary-token score, capped at T, ties toward smaller index."""
    flat = as_tensor(scores).data.reshape(-1)
    if flat.size != t_len:
        raise ValueError(f"expected {t_len} frame scores, got {flat.size}")
    order = np.argsort(-flat, kind="stable")
    return sorted(int(k) for k in order[: min(n_samples, t_len)])

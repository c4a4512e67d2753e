"""Full model: projections, text encoder, video encoder, fuser, decoder.

One forward pass handles a single instance; batching happens in the
training loop by accumulating per-sample losses on a shared tape, which
keeps variable-length critical-frame memories trivial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig, FeedForward, ResidualSelfAttention, scaled_dot_product
from .decoder import AnswerDecoder
from .encoder import EncoderConfig, VideoEncoder, intra_frame_mask, temporal_encoding
from .fuser import (
    CrossModalFuser,
    InteractionMap,
    SampleSelection,
    SamplerMode,
    adaptive_selection,
    cls_frame_scores,
    cls_topn_frames,
    collect_critical_frames,
    hard_topn_sample,
)
from .synthetic import SyntheticSample
from .tensor import (
    Module,
    Tensor,
    concat,
    gather,
    linear,
    reshape,
    xavier_uniform,
    zeros_param,
)


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    window_sizes: tuple[int, ...] = (1, 3, 5, 7)
    leap_step: int = 4
    depth: int = 1
    sampler: SamplerMode = SamplerMode.ADAPTIVE
    n_interactions: int = 10
    task: str = "mc"
    use_window_attention: bool = True
    use_leap: bool = True
    # widths taken from the data config
    d_in: int = 32
    s_objects: int = 4
    n_patterns: int = 16
    n_open_answers: int = 8

    def __post_init__(self):
        self.sampler = SamplerMode(self.sampler)
        self.window_sizes = tuple(int(w) for w in self.window_sizes)
        if self.task not in ("mc", "oe"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.n_interactions < 1:
            raise ValueError(f"n_interactions must be >= 1, got {self.n_interactions}")

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(d_model=self.d_model, n_heads=self.n_heads)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            d_model=self.d_model,
            window_sizes=self.window_sizes,
            leap_step=self.leap_step,
            depth=self.depth,
        )


@dataclass
class ForwardResult:
    logits: Tensor  # (n_classes,)
    selection: SampleSelection
    interactions: InteractionMap


class TextEncoder(Module):
    """Token-id embedding, sinusoidal positions, one attention + FF block.

    Encodes the question as a token sequence and pools each candidate
    sequence into one vector with a learned attention query. The table
    carries one extra row used as the question-summary token.
    """

    def __init__(self, n_patterns: int, cfg: AttentionConfig, rng: np.random.Generator):
        self.n_patterns = n_patterns
        d = cfg.d_model
        self.table = xavier_uniform((n_patterns + 1, d), rng)
        self.block = ResidualSelfAttention(cfg, rng)
        self.ff = FeedForward(d, rng)
        self.pool_query = xavier_uniform((1, d), rng)

    @property
    def summary_id(self) -> int:
        return self.n_patterns

    def encode(self, ids) -> Tensor:
        """Encode one id sequence into (len, d) token vectors."""
        ids = np.asarray(ids, dtype=np.int64)
        emb = gather(self.table, ids, axis=0)
        emb = emb + temporal_encoding(len(ids), emb.shape[1])
        return self.ff(self.block(emb).output)

    def encode_pooled(self, id_rows) -> Tensor:
        """Encode a batch of same-length sequences and pool each to one row."""
        rows = np.asarray(id_rows, dtype=np.int64)
        n_seq, seq_len = rows.shape
        emb = gather(self.table, rows.reshape(-1), axis=0)
        emb = emb + np.tile(temporal_encoding(seq_len, emb.shape[1]), (n_seq, 1))
        mask = intra_frame_mask(n_seq, seq_len)  # per-sequence blocks
        tokens = self.ff(self.block(emb, mask).output)
        queries = gather(self.pool_query, np.zeros(n_seq, dtype=np.int64), axis=0)
        pool_mask = np.repeat(np.eye(n_seq, dtype=bool), seq_len, axis=1)
        pooled, _ = scaled_dot_product(queries, tokens, tokens, pool_mask)
        return pooled


class RaFormer(Module):
    """Redundancy-aware transformer over synthetic VideoQA instances."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        att = cfg.attention_config()
        d = cfg.d_model
        self.frame_proj_w = xavier_uniform((cfg.d_in, d), rng)
        self.frame_proj_b = zeros_param(d)
        self.object_proj_w = xavier_uniform((cfg.d_in, d), rng)
        self.object_proj_b = zeros_param(d)
        self.text = TextEncoder(cfg.n_patterns, att, rng)
        self.video = VideoEncoder(
            cfg.encoder_config(),
            cfg.s_objects,
            rng,
            use_window_attention=cfg.use_window_attention,
            use_leap=cfg.use_leap,
        )
        self.fuser = CrossModalFuser(att, rng)
        self.decoder = AnswerDecoder(
            att, rng, n_open_answers=cfg.n_open_answers if cfg.task == "oe" else 0
        )
        if cfg.task == "oe":
            self.oe_query = xavier_uniform((1, d), rng)

    def encode_video(self, sample: SyntheticSample) -> Tensor:
        t_len, s, d_in = sample.objects.shape
        frames = linear(Tensor(sample.frames), self.frame_proj_w, self.frame_proj_b)
        flat = reshape(Tensor(sample.objects), (t_len * s, d_in))
        objects = linear(flat, self.object_proj_w, self.object_proj_b)
        objects = reshape(objects, (t_len, s, self.cfg.d_model))
        return self.video(frames, objects)

    def select_frames(
        self, f_enc: Tensor, f_bar: Tensor, imap: InteractionMap, q_all: Tensor
    ) -> tuple[SampleSelection, Tensor]:
        cfg = self.cfg
        t_len = imap.t_len
        if cfg.sampler is SamplerMode.ADAPTIVE:
            return adaptive_selection(imap, cfg.n_interactions, f_bar)
        if cfg.sampler is SamplerMode.HARD_TOPN:
            flat = hard_topn_sample(imap.z, cfg.n_interactions)
            return collect_critical_frames(flat, imap.q_len, f_bar)
        if cfg.sampler is SamplerMode.CLS:
            scores = cls_frame_scores(f_enc, q_all, self.fuser.block.attn)
            frames = cls_topn_frames(scores, cfg.n_interactions, t_len)
            selection = SampleSelection(flat_indices=[], frame_indices=frames, word_indices=[])
            return selection, gather(f_bar, np.asarray(frames, dtype=np.int64), axis=0)
        selection = SampleSelection(
            flat_indices=[], frame_indices=list(range(t_len)), word_indices=[]
        )
        return selection, f_bar

    def forward(self, sample: SyntheticSample) -> ForwardResult:
        cfg = self.cfg
        f_enc = self.encode_video(sample)

        ids = list(int(t) for t in sample.question)
        if cfg.sampler is SamplerMode.CLS:
            q_all = self.text.encode([self.text.summary_id] + ids)
            q_mem = gather(q_all, np.arange(1, len(ids) + 1), axis=0)
        else:
            q_all = self.text.encode(ids)
            q_mem = q_all

        f_bar, imap = self.fuser(f_enc, q_mem)
        selection, critical = self.select_frames(f_enc, f_bar, imap, q_all)
        memory = concat([critical, q_mem], axis=0)

        if cfg.task == "mc":
            queries = self.text.encode_pooled(sample.candidates)
            logits = self.decoder.decode_mc(queries, memory)
        else:
            logits = self.decoder.decode_oe(self.oe_query, memory)
        return ForwardResult(logits=logits, selection=selection, interactions=imap)

"""Video encoder: object-aware frame enhancement plus distant-frame mixing.

Frames are enhanced by attending to object tokens inside a per-head
temporal window (multi-scale window cross-attention), then contextualized
by self-attention restricted to frames sharing the same index residue
mod the leap step, so message passing skips immediate neighbours.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .attention import (
    AttentionConfig,
    ResidualCrossAttention,
    ResidualSelfAttention,
)
from .tensor import Module, Tensor, add, as_tensor, gather, reduce_mean, reshape, xavier_uniform


@dataclass
class VideoFeatures:
    """Raw per-instance features: frames (T, d) and objects (T, S, d)."""

    frames: np.ndarray
    objects: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.objects = np.asarray(self.objects, dtype=np.float64)
        if self.frames.ndim != 2 or self.objects.ndim != 3:
            raise ValueError(
                f"expected frames (T, d) and objects (T, S, d), got "
                f"{self.frames.shape} and {self.objects.shape}"
            )
        if self.frames.shape[0] != self.objects.shape[0]:
            raise ValueError(
                f"frame count {self.frames.shape[0]} does not match "
                f"object frame count {self.objects.shape[0]}"
            )
        if self.frames.shape[0] < 1 or self.objects.shape[1] < 1:
            raise ValueError("need at least one frame and one object slot")


@dataclass
class EncoderConfig:
    """One window size per head; all windows odd; leap step within [1, T]."""

    d_model: int = 64
    window_sizes: tuple[int, ...] = (1, 3, 5, 7)
    leap_step: int = 4
    depth: int = 1

    def __post_init__(self):
        self.window_sizes = tuple(int(w) for w in self.window_sizes)
        for w in self.window_sizes:
            if w < 1 or w % 2 == 0:
                raise ValueError(f"window sizes must be odd and positive, got {w}")
        if self.leap_step < 1:
            raise ValueError(f"leap step must be >= 1, got {self.leap_step}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")

    @property
    def n_heads(self) -> int:
        return len(self.window_sizes)

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(d_model=self.d_model, n_heads=self.n_heads)


# The mask builders are cached and return read-only arrays: the attention
# layer caches sentinel addends per mask object, so a stable object per
# argument tuple makes every reuse free.


def _frozen(mask: np.ndarray) -> np.ndarray:
    mask.flags.writeable = False
    return mask


@lru_cache(maxsize=None)
def temporal_encoding(length: int, d: int) -> np.ndarray:
    """Standard sinusoidal position table of shape (length, d)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / d)
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return _frozen(table)


@lru_cache(maxsize=None)
def intra_frame_mask(t_len: int, s_objects: int) -> np.ndarray:
    """Block-diagonal mask over flattened objects: attend within one frame only."""
    frame_of = np.repeat(np.arange(t_len), s_objects)
    return _frozen(frame_of[:, None] == frame_of[None, :])


@lru_cache(maxsize=None)
def window_mask(t_len: int, s_objects: int, window: int) -> np.ndarray:
    """Frame-to-object mask: frame t sees objects of frames within the window.

    The window is centered with radius (window - 1) / 2 and truncated at the
    sequence boundaries (no padding tokens are fabricated).
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window size must be odd and positive, got {window}")
    radius = (window - 1) // 2
    frames = np.arange(t_len)
    key_frame = np.repeat(frames, s_objects)
    return _frozen(np.abs(frames[:, None] - key_frame[None, :]) <= radius)


@lru_cache(maxsize=None)
def leap_mask(t_len: int, step: int) -> np.ndarray:
    """Frame pairs (i, j) are connected iff i = j (mod step); self links stay."""
    if step < 1:
        raise ValueError(f"leap step must be >= 1, got {step}")
    if step > t_len:
        raise ValueError(f"leap step {step} exceeds sequence length {t_len}")
    residue = np.arange(t_len) % step
    return _frozen(residue[:, None] == residue[None, :])


class VideoEncoder(Module):
    """Position encoding, intra-frame attention, window cross-attention, leap attention.

    ``use_window_attention=False`` swaps the window stage for per-frame
    mean-pooled objects added to the frame vector; ``use_leap=False`` swaps
    the leap mask for dense self-attention. Both keep the (T, d) output.
    """

    def __init__(
        self,
        cfg: EncoderConfig,
        s_objects: int,
        rng: np.random.Generator,
        use_window_attention: bool = True,
        use_leap: bool = True,
    ):
        if s_objects < 1:
            raise ValueError(f"need at least one object slot, got {s_objects}")
        self.cfg = cfg
        self.s_objects = s_objects
        self.use_window_attention = use_window_attention
        self.use_leap = use_leap
        att = cfg.attention_config()
        self.spatial_embedding = xavier_uniform((s_objects, cfg.d_model), rng)
        self.intra = ResidualSelfAttention(att, rng)
        self.window_blocks = [ResidualCrossAttention(att, rng) for _ in range(cfg.depth)]
        self.leap_blocks = [ResidualSelfAttention(att, rng) for _ in range(cfg.depth)]

    def position_encode(self, objects) -> Tensor:
        """Add sinusoidal temporal and learned spatial encodings to (T, S, d) objects."""
        objects = as_tensor(objects)
        t_len, s, d = objects.shape
        if s != self.s_objects:
            raise ValueError(f"expected {self.s_objects} object slots, got {s}")
        temporal = temporal_encoding(t_len, d)[:, None, :]  # (T, 1, d)
        spatial = gather(self.spatial_embedding, np.arange(s), axis=0)
        return add(add(objects, temporal), reshape(spatial, (1, s, d)))

    def intra_frame_self_attention(self, objects_flat, t_len: int) -> Tensor:
        """Residual self-attention among the objects of each frame, no cross-frame mixing."""
        mask = intra_frame_mask(t_len, self.s_objects)
        return self.intra(objects_flat, mask).output

    def window_cross_attention(self, frames, objects_flat, t_len: int, block: int = 0) -> Tensor:
        """Enhance each frame from the windowed flattened objects, one window per head."""
        masks = [window_mask(t_len, self.s_objects, w) for w in self.cfg.window_sizes]
        return self.window_blocks[block](frames, objects_flat, masks).output

    def mean_pool_objects(self, frames, objects_flat, t_len: int) -> Tensor:
        """Window-attention replacement: add each frame's mean object vector."""
        grouped = reshape(objects_flat, (t_len, self.s_objects, self.cfg.d_model))
        return add(frames, reduce_mean(grouped, axis=1))

    def leap_attention(self, frames, t_len: int, block: int = 0) -> Tensor:
        """Residual self-attention restricted to same-residue frame groups."""
        if self.use_leap:
            mask = leap_mask(t_len, self.cfg.leap_step)
        else:
            mask = np.ones((t_len, t_len), dtype=bool)
        return self.leap_blocks[block](frames, mask).output

    def __call__(self, frames, objects) -> Tensor:
        """Encode projected frames (T, d) and objects (T, S, d) into (T, d)."""
        frames = as_tensor(frames)
        t_len = frames.shape[0]
        if self.cfg.leap_step > t_len:
            raise ValueError(
                f"leap step {self.cfg.leap_step} exceeds sequence length {t_len}"
            )
        encoded = self.position_encode(objects)
        flat = reshape(encoded, (t_len * self.s_objects, self.cfg.d_model))
        flat = self.intra_frame_self_attention(flat, t_len)
        out = frames
        for i in range(self.cfg.depth):
            if self.use_window_attention:
                out = self.window_cross_attention(out, flat, t_len, block=i)
            else:
                out = self.mean_pool_objects(out, flat, t_len)
            out = self.leap_attention(out, t_len, block=i)
        return out

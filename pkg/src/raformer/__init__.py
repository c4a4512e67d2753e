"""Redundancy-aware transformer for VideoQA on a synthetic planted-frame task."""

from .attention import (
    AttentionConfig,
    AttentionOutput,
    DegenerateMaskError,
    MultiHeadAttention,
    scaled_dot_product,
)
from .decoder import AnswerDecoder, predict
from .encoder import EncoderConfig, VideoEncoder, VideoFeatures, leap_mask, window_mask
from .fuser import (
    CrossModalFuser,
    InteractionMap,
    SampleSelection,
    SamplerMode,
    collect_critical_frames,
    cumulative_distribution,
    hard_topn_sample,
    interaction_probabilities,
    inverse_transform_sample,
)
from .model import ForwardResult, ModelConfig, RaFormer, TextEncoder
from .synthetic import (
    SyntheticConfig,
    SyntheticDataset,
    SyntheticSample,
    generate_dataset,
    oracle_answer,
    rationale_recall,
)
from .tensor import Tape, Tensor

__all__ = [
    "AnswerDecoder",
    "AttentionConfig",
    "AttentionOutput",
    "CrossModalFuser",
    "DegenerateMaskError",
    "EncoderConfig",
    "ForwardResult",
    "InteractionMap",
    "ModelConfig",
    "MultiHeadAttention",
    "RaFormer",
    "SampleSelection",
    "SamplerMode",
    "SyntheticConfig",
    "SyntheticDataset",
    "SyntheticSample",
    "Tape",
    "Tensor",
    "TextEncoder",
    "VideoEncoder",
    "VideoFeatures",
    "collect_critical_frames",
    "cumulative_distribution",
    "generate_dataset",
    "hard_topn_sample",
    "interaction_probabilities",
    "inverse_transform_sample",
    "leap_mask",
    "oracle_answer",
    "predict",
    "rationale_recall",
    "scaled_dot_product",
    "window_mask",
]

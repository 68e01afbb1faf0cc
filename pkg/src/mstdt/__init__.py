"""Trainable multi-scale temporal difference transformer for video-text
retrieval over pre-extracted embeddings, with loss, metric, and
gradient-verification tooling."""

from .autodiff import Tensor, backward
from .data import EmbeddingDataset, SynthSpec, generate_synthetic, load_embeddings, make_batches
from .encoder import EncoderConfig, TokenSequence, encoder_forward
from .errors import (
    AllMaskedError,
    ConfigError,
    ContractError,
    FormatError,
    MstdtError,
    NumericError,
)
from .losses import (
    LossParams,
    SimilarityMatrix,
    binary_similarity_loss,
    cosine_similarity_matrix,
    symmetric_cross_entropy,
    total_loss,
)
from .metrics import RetrievalReport, rank_of_truth, retrieval_metrics
from .model import ModelConfig, VideoTextModel
from .params import ParamStore, load_checkpoint, save_checkpoint
from .temporal import (
    FrameFeatureSequence,
    FusionParams,
    ScaleSpec,
    SubsetBatch,
    compute_differences,
    fuse_scales,
    fuse_video,
    long_term_encode,
    partition_subsets,
    short_term_encode,
)
from .training import evaluate_model, grad_check, train

__all__ = [
    "AllMaskedError",
    "ConfigError",
    "ContractError",
    "EmbeddingDataset",
    "EncoderConfig",
    "FormatError",
    "FrameFeatureSequence",
    "FusionParams",
    "LossParams",
    "ModelConfig",
    "MstdtError",
    "NumericError",
    "ParamStore",
    "RetrievalReport",
    "ScaleSpec",
    "SimilarityMatrix",
    "SubsetBatch",
    "Tensor",
    "TokenSequence",
    "VideoTextModel",
    "backward",
    "binary_similarity_loss",
    "compute_differences",
    "cosine_similarity_matrix",
    "encoder_forward",
    "evaluate_model",
    "fuse_scales",
    "fuse_video",
    "generate_synthetic",
    "grad_check",
    "load_checkpoint",
    "load_embeddings",
    "long_term_encode",
    "make_batches",
    "partition_subsets",
    "rank_of_truth",
    "retrieval_metrics",
    "save_checkpoint",
    "short_term_encode",
    "symmetric_cross_entropy",
    "total_loss",
    "train",
]

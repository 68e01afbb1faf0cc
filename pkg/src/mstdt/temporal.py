"""Short-term multi-scale temporal encoding over frame subsets, inter-frame
difference features with a guiding frame, long-term whole-sequence encoding,
and the convex fusion of the two branches into the final video embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderConfig, TokenSequence, encoder_forward
from .errors import AllMaskedError, ConfigError, ContractError
from .params import ParamStore

FUSION_STRATEGIES = ("mean", "concat", "attention")


@dataclass
class FrameFeatureSequence:
    """Fixed-length per-frame embedding matrix with trailing zero padding."""

    frames: Tensor  # (n_max, dim)
    valid_count: int

    def __post_init__(self):
        if not isinstance(self.frames, Tensor):
            self.frames = Tensor(np.asarray(self.frames, dtype=np.float64))
        if self.frames.ndim != 2:
            raise ContractError(f"frames must be 2-D, got shape {self.frames.shape}")
        if not 1 <= self.valid_count <= self.n_max:
            raise ContractError(
                f"valid_count {self.valid_count} out of range for n_max {self.n_max}"
            )

    @property
    def n_max(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.n_max) < self.valid_count


@dataclass(frozen=True)
class ScaleSpec:
    """Scale list and per-scale encoder configuration for the short branch."""

    scales: tuple[int, ...]
    encoder: EncoderConfig
    fusion_strategy: str = "mean"
    use_difference: bool = True
    literal_normalization: bool = False
    strict_diff_mask: bool = False

    def __post_init__(self):
        if not self.scales:
            raise ConfigError("scale list must be non-empty")
        if len(set(self.scales)) != len(self.scales):
            raise ConfigError(f"duplicate scales in {self.scales}")
        if any(k < 1 for k in self.scales):
            raise ConfigError("scales must be >= 1")
        if self.fusion_strategy not in FUSION_STRATEGIES:
            raise ConfigError(f"fusion_strategy must be one of {FUSION_STRATEGIES}")

    def validate_against(self, n_max: int) -> None:
        for k in self.scales:
            if n_max % k:
                raise ConfigError(f"scale {k} does not divide n_max {n_max}")


@dataclass
class SubsetBatch:
    """Contiguous temporal subsets of one video at one scale."""

    subsets: list[TokenSequence]
    k: int
    difference: bool = False


@dataclass(frozen=True)
class FusionParams:
    alpha: float = 0.4

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")


def partition_subsets(seq: FrameFeatureSequence, k: int) -> SubsetBatch:
    """Split the n_max frames into m = n_max / k contiguous subsets."""
    if seq.n_max % k:
        raise ConfigError(f"scale {k} does not divide n_max {seq.n_max}")
    mask = seq.mask
    subsets = []
    for i in range(seq.n_max // k):
        rows = Tensor(seq.frames.data[i * k : (i + 1) * k])
        subsets.append(TokenSequence(rows, mask[i * k : (i + 1) * k]))
    return SubsetBatch(subsets, k)


def compute_differences(subset: TokenSequence, strict_mask: bool = False) -> TokenSequence:
    """Map a k-frame subset to k+1 tokens: guiding frame then differences.

    Token 0 is the subset's first frame. Token i (1 <= i < t, with t the
    number of valid frames) is v_{i+1} - v_i; token t wraps back to the
    first frame, v_1 - v_t; tokens past t are zero and masked out. Under
    ``strict_mask`` the wrap token keeps its value but is masked whenever
    the frame after it is padding (or absent).
    """
    k = subset.length
    frames = subset.tokens.data
    t = subset.valid_count
    tokens = np.zeros((k + 1, frames.shape[1]))
    mask = np.zeros(k + 1, dtype=bool)
    if t == 0:
        return TokenSequence(Tensor(tokens), mask)

    tokens[0] = frames[0]
    mask[0] = True
    for i in range(1, t):
        tokens[i] = frames[i] - frames[i - 1]
        mask[i] = True
    tokens[t] = frames[0] - frames[t - 1]
    mask[t] = not strict_mask or t == k
    return TokenSequence(Tensor(tokens), mask)


def _masked_token_sum(out: TokenSequence) -> Tensor:
    return ad.masked_sum_rows(out.tokens, out.mask)


def short_term_encode(
    batch: SubsetBatch,
    cfg: EncoderConfig,
    params: ParamStore,
    prefix: str,
    position_embeddings: Tensor | None = None,
    literal_normalization: bool = False,
) -> Tensor:
    """Encode every subset and average the valid token outputs into one vector.

    Difference-mode batches require position embeddings of shape
    (k+1, dim), added to every token before encoding; frame-mode batches
    take none. ``literal_normalization`` divides by the full token count
    m*k (or m*(k+1)) instead of the number of valid tokens.
    """
    if batch.difference:
        if position_embeddings is None:
            raise ContractError("difference mode requires position embeddings")
        expect = (batch.k + 1, batch.subsets[0].tokens.shape[1])
        if position_embeddings.shape != expect:
            raise ContractError(
                f"position embeddings {position_embeddings.shape}, expected {expect}"
            )
    elif position_embeddings is not None:
        raise ContractError("frame mode takes no position embeddings")

    total_valid = sum(s.valid_count for s in batch.subsets)
    if total_valid == 0:
        raise AllMaskedError("short_term_encode: every token is masked")

    sums = None
    for subset in batch.subsets:
        if subset.valid_count == 0:
            continue  # all-padding subset contributes nothing
        if batch.difference:
            subset = TokenSequence(subset.tokens + position_embeddings, subset.mask)
        out = encoder_forward(subset, cfg, params, prefix)
        part = _masked_token_sum(out)
        sums = part if sums is None else sums + part

    tokens_per_subset = batch.k + 1 if batch.difference else batch.k
    denom = (
        len(batch.subsets) * tokens_per_subset if literal_normalization else total_valid
    )
    return sums * (1.0 / denom)


def long_term_encode(
    seq: FrameFeatureSequence, cfg: EncoderConfig, params: ParamStore, prefix: str = "long."
) -> Tensor:
    """Whole-sequence encoding averaged over valid frames.

    The residual combination of original and encoded features is the
    encoder's own pass-through stream: at zero-initialized output
    projections the result is exactly the masked mean of the frames.
    """
    mask = seq.mask
    if not mask.any():
        raise AllMaskedError("long_term_encode: video has no valid frames")
    out = encoder_forward(TokenSequence(seq.frames, mask), cfg, params, prefix)
    return _masked_token_sum(out) * (1.0 / seq.valid_count)


def fuse_scales(
    features: list[Tensor],
    strategy: str,
    long_ref: Tensor | None = None,
    params: ParamStore | None = None,
) -> Tensor:
    """Combine per-scale vectors into one: mean, learned concat, or
    attention with the long-term feature as query."""
    if not features:
        raise ContractError("fuse_scales: empty feature list")
    dim = features[0].shape[0]
    if any(f.shape != (dim,) for f in features):
        raise ContractError("fuse_scales: features must share one dimension")

    if strategy == "mean":
        total = features[0]
        for f in features[1:]:
            total = total + f
        return total * (1.0 / len(features))

    if strategy == "concat":
        if params is None:
            raise ContractError("concat fusion requires params")
        joined = ad.concat_vec(features)
        w = params["fusion.concat.weight"]
        return ad.matvec(ad.transpose(w), joined) + params["fusion.concat.bias"]

    if strategy == "attention":
        if long_ref is None:
            raise ContractError("attention fusion requires the long-term reference")
        stacked = ad.stack_rows(features)  # (|K|, dim)
        logits = ad.matvec(stacked, long_ref) * (1.0 / math.sqrt(dim))
        weights = ad.masked_softmax(logits, np.ones(len(features), dtype=bool), axis=0)
        return ad.matvec(ad.transpose(stacked), weights)

    raise ContractError(f"unknown fusion strategy: {strategy}")


def fuse_video(s: Tensor, l: Tensor, fp: FusionParams) -> Tensor:
    """Convex combination alpha * s + (1 - alpha) * l."""
    if s.shape != l.shape:
        raise ContractError(f"fuse_video shape mismatch: {s.shape} vs {l.shape}")
    if fp.alpha == 0.0:
        return l
    if fp.alpha == 1.0:
        return s
    return s * fp.alpha + l * (1.0 - fp.alpha)

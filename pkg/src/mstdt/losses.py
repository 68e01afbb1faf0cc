"""Cosine similarity blocks and the combined retrieval training loss:
a KL alignment between cross-modal and intra-modal similarity
distributions (diagonal excluded) plus symmetric cross entropy over the
ground-truth diagonal, mixed by a trade-off rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, NumericError

KL_REDUCTIONS = ("mean", "sum")


@dataclass
class SimilarityMatrix:
    values: Tensor  # (rows, cols), cosine entries in [-1, 1]
    row_entities: str = "video"
    col_entities: str = "caption"

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ContractError(f"similarity matrix must be 2-D, got {self.values.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


@dataclass(frozen=True)
class LossParams:
    beta: float = 0.3
    logit_scale: float = 100.0
    kl_swap: bool = False
    kl_reduction: str = "mean"

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.logit_scale <= 0.0:
            raise ConfigError(f"logit_scale must be positive, got {self.logit_scale}")
        if self.kl_reduction not in KL_REDUCTIONS:
            raise ConfigError(f"kl_reduction must be one of {KL_REDUCTIONS}")


def cosine_similarity_matrix(
    x: Tensor, y: Tensor, row_entities: str = "video", col_entities: str = "caption"
) -> SimilarityMatrix:
    """Pairwise cosine similarity between the rows of (n, d) and (m, d)."""
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ContractError(f"cosine inputs must share dim: {x.shape} vs {y.shape}")
    for side in (x, y):
        if (np.linalg.norm(side.data, axis=1) < 1e-12).any():
            raise NumericError("cosine_similarity_matrix: zero-norm row")
    values = ad.matmul(ad.rows_l2_normalized(x), ad.transpose(ad.rows_l2_normalized(y)))
    return SimilarityMatrix(values, row_entities, col_entities)


def _square_batch(sim: SimilarityMatrix) -> int:
    rows, cols = sim.shape
    if rows != cols:
        raise ContractError(f"expected a square similarity matrix, got {sim.shape}")
    return rows


def _masked_kl(a: Tensor, b: Tensor, valid: np.ndarray, axis: int, lp: LossParams) -> Tensor:
    """KL(softmax(a) || softmax(b)) over valid entries, reduced across slices."""
    p = ad.masked_softmax(a, valid, axis=axis)
    log_p = ad.masked_log_softmax(a, valid, axis=axis)
    log_q = ad.masked_log_softmax(b, valid, axis=axis)
    total = ad.sum_all(p * (log_p - log_q))
    if lp.kl_reduction == "mean":
        total = total * (1.0 / a.shape[1 - axis])
    return total


def binary_similarity_loss(
    sim_vc: SimilarityMatrix,
    sim_vv: SimilarityMatrix,
    sim_cc: SimilarityMatrix,
    lp: LossParams = LossParams(),
) -> Tensor:
    """KL alignment of the cross-modal similarity distribution with each
    intra-modal one, diagonal logits excluded, rows and columns averaged."""
    b = _square_batch(sim_vc)
    if _square_batch(sim_vv) != b or _square_batch(sim_cc) != b:
        raise ContractError("all similarity matrices must share the batch size")
    if b < 2:
        raise ContractError("binary similarity loss requires batch size >= 2")

    off_diag = ~np.eye(b, dtype=bool)
    vc = sim_vc.values * lp.logit_scale
    vv = sim_vv.values * lp.logit_scale
    cc = sim_cc.values * lp.logit_scale

    if lp.kl_swap:
        row = _masked_kl(vv, vc, off_diag, 1, lp)
        col = _masked_kl(cc, vc, off_diag, 0, lp)
    else:
        row = _masked_kl(vc, vv, off_diag, 1, lp)
        col = _masked_kl(vc, cc, off_diag, 0, lp)
    return row + col


def symmetric_cross_entropy(sim_vc: SimilarityMatrix, logit_scale: float = 100.0) -> Tensor:
    """Mean negative log-likelihood of the diagonal under row softmax plus
    the same under column softmax."""
    b = _square_batch(sim_vc)
    logits = sim_vc.values * logit_scale
    all_valid = np.ones((b, b), dtype=bool)
    eye = Tensor(np.eye(b))
    rows = ad.sum_all(ad.masked_log_softmax(logits, all_valid, axis=1) * eye)
    cols = ad.sum_all(ad.masked_log_softmax(logits, all_valid, axis=0) * eye)
    return (rows + cols) * (-1.0 / b)


def total_loss(
    sim_vc: SimilarityMatrix,
    sim_vv: SimilarityMatrix,
    sim_cc: SimilarityMatrix,
    lp: LossParams = LossParams(),
) -> Tensor:
    """beta-weighted binary similarity loss plus (1-beta) cross entropy."""
    bs = binary_similarity_loss(sim_vc, sim_vv, sim_cc, lp)
    ce = symmetric_cross_entropy(sim_vc, lp.logit_scale)
    if lp.beta == 0.0:
        return ce
    if lp.beta == 1.0:
        return bs
    return bs * lp.beta + ce * (1.0 - lp.beta)

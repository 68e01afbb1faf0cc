"""Rank-based retrieval metrics over similarity matrices, both directions,
plus flat key-value and structured report serialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .losses import SimilarityMatrix

R_AT_KS = (1, 5, 10)
TIE_MODES = ("optimistic", "pessimistic")


@dataclass
class RetrievalReport:
    direction: str  # "t2v" | "v2t"
    r_at: dict[int, float]  # k -> percentage
    med_r: float
    mean_r: float
    r_sum: float

    def as_dict(self) -> dict:
        return {
            "direction": self.direction,
            **{f"r{k}": self.r_at[k] for k in R_AT_KS},
            "med_r": self.med_r,
            "mean_r": self.mean_r,
            "r_sum": self.r_sum,
        }


def _as_array(sim) -> np.ndarray:
    if isinstance(sim, SimilarityMatrix):
        return sim.values.data
    return np.asarray(sim, dtype=np.float64)


def _check_tie(tie: str) -> None:
    if tie not in TIE_MODES:
        raise ConfigError(f"tie must be one of {TIE_MODES}")


def rank_of_truth(sim, direction: str, tie: str = "optimistic") -> np.ndarray:
    """1-based rank of the diagonal entry for each query of a square matrix.

    v2t queries by row (video over caption columns), t2v by column. Under
    optimistic tie-breaking only strictly greater scores push the true
    match down; pessimistic also counts ties against it.
    """
    _check_tie(tie)
    s = _as_array(sim)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ContractError(f"rank_of_truth expects a square matrix, got {s.shape}")
    if direction == "v2t":
        scores, truth = s, np.diag(s)
    elif direction == "t2v":
        scores, truth = s.T, np.diag(s)
    else:
        raise ConfigError(f"direction must be 't2v' or 'v2t', got {direction!r}")
    if tie == "optimistic":
        beaten = (scores > truth[:, None]).sum(axis=1)
    else:
        beaten = (scores >= truth[:, None]).sum(axis=1) - 1  # the truth ties itself
    return beaten + 1


def paired_ranks(
    sim_cv, caption_to_video, tie: str = "optimistic"
) -> tuple[np.ndarray, np.ndarray]:
    """Ranks for a (captions x videos) similarity block with explicit pairs.

    t2v: each caption queries all videos; its true video's rank. v2t: each
    video queries all captions; the best rank among its true captions.
    Reduces to the square-diagonal convention when pairs are the identity.
    """
    _check_tie(tie)
    s = _as_array(sim_cv)
    pairs = np.asarray(caption_to_video, dtype=int)
    if s.ndim != 2 or pairs.shape != (s.shape[0],):
        raise ContractError(
            f"pairs of shape {pairs.shape} do not fit similarity {s.shape}"
        )
    n_cap, n_vid = s.shape
    if ((pairs < 0) | (pairs >= n_vid)).any():
        raise ContractError("caption_to_video index out of range")
    if len(np.unique(pairs)) != n_vid:
        raise ContractError("every video needs at least one true caption")

    strict = tie == "optimistic"

    t2v = np.empty(n_cap, dtype=int)
    for c in range(n_cap):
        truth = s[c, pairs[c]]
        row = s[c]
        beaten = (row > truth).sum() if strict else (row >= truth).sum() - 1
        t2v[c] = beaten + 1

    v2t = np.empty(n_vid, dtype=int)
    for v in range(n_vid):
        col = s[:, v]
        best = None
        for c in np.flatnonzero(pairs == v):
            truth = col[c]
            beaten = (col > truth).sum() if strict else (col >= truth).sum() - 1
            rank = beaten + 1
            best = rank if best is None else min(best, rank)
        v2t[v] = best
    return t2v, v2t


def retrieval_metrics(ranks, direction: str) -> RetrievalReport:
    """R@k / MedR / MeanR / Rsum from a vector of 1-based ranks."""
    r = np.asarray(ranks, dtype=float)
    if r.size == 0:
        raise ContractError("retrieval_metrics: empty rank vector")
    if (r < 1).any():
        raise ContractError("ranks must be >= 1")
    r_at = {k: 100.0 * float((r <= k).sum()) / r.size for k in R_AT_KS}
    return RetrievalReport(
        direction=direction,
        r_at=r_at,
        med_r=float(np.median(r)),
        mean_r=float(r.mean()),
        r_sum=sum(r_at.values()),
    )


def combined_rsum(t2v: RetrievalReport, v2t: RetrievalReport) -> float:
    return t2v.r_sum + v2t.r_sum


def report_lines(t2v: RetrievalReport, v2t: RetrievalReport) -> list[str]:
    """Flat key-value serialization, one record per direction plus Rsum."""
    lines = []
    for rep in (t2v, v2t):
        for k in R_AT_KS:
            lines.append(f"{rep.direction}.r{k} = {rep.r_at[k]:.4f}")
        lines.append(f"{rep.direction}.med_r = {rep.med_r:.4f}")
        lines.append(f"{rep.direction}.mean_r = {rep.mean_r:.4f}")
        lines.append(f"{rep.direction}.r_sum = {rep.r_sum:.4f}")
    lines.append(f"rsum = {combined_rsum(t2v, v2t):.4f}")
    return lines


def report_dict(t2v: RetrievalReport, v2t: RetrievalReport) -> dict:
    return {
        "t2v": t2v.as_dict(),
        "v2t": v2t.as_dict(),
        "rsum": combined_rsum(t2v, v2t),
    }

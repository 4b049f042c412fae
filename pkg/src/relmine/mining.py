"""Online hard-negative and hard-positive mining over batch similarities.

Three strategies: plain hardest-negative mining, relevance-aware negative
mining (negatives restricted to candidates with relevance below tau), and
relevance-aware negative plus positive mining (positives restricted to
candidates with relevance at or above tau). Ties always break toward the
lowest index, and rows whose candidate pool is empty are skipped and
flagged rather than guessed at.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Strategy(str, Enum):
    STANDARD = "standard"
    RAN = "ran"
    RANP = "ranp"


@dataclass(frozen=True)
class MinedTriplets:
    """Per-anchor mined indices; -1 marks an anchor whose pool was empty."""

    negative_indices: np.ndarray
    positive_indices: np.ndarray
    skipped_negative: np.ndarray
    skipped_positive: np.ndarray
    strategy: Strategy

    @property
    def anchor_count(self) -> int:
        return len(self.negative_indices)


def _validate_tau(tau: float) -> float:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    return float(tau)


def _validate_gt(gt_index: int, size: int) -> int:
    if not 0 <= gt_index < size:
        raise ValueError(f"gt index {gt_index} out of range for row of length {size}")
    return int(gt_index)


def _masked_extremum(values: np.ndarray, mask: np.ndarray, take_max: bool) -> int | None:
    """Index of the max (or min) of ``values`` over ``mask``; lowest index on
    ties; None when the mask is empty."""
    candidates = np.flatnonzero(mask)
    if candidates.size == 0:
        return None
    sub = values[candidates]
    best = np.argmax(sub) if take_max else np.argmin(sub)
    return int(candidates[best])


def hardest_negative_standard(sim_row: np.ndarray, gt_index: int) -> int:
    """Most similar candidate other than the groundtruth."""
    sim_row = np.asarray(sim_row, dtype=float)
    if sim_row.size < 2:
        raise ValueError("no negative candidates: row has fewer than 2 entries")
    gt_index = _validate_gt(gt_index, sim_row.size)
    mask = np.ones(sim_row.size, dtype=bool)
    mask[gt_index] = False
    result = _masked_extremum(sim_row, mask, take_max=True)
    assert result is not None
    return result


def hardest_negative_ran(
    sim_row: np.ndarray,
    rel_row: np.ndarray,
    tau: float,
    gt_index: int | None = None,
) -> int | None:
    """Most similar candidate among those with relevance below tau.

    Returns None when every candidate is relevant (empty pool). The
    groundtruth is normally excluded by its own relevance; passing
    ``gt_index`` removes it explicitly for the datasets where the paired
    item's relevance can fall below tau.
    """
    sim_row = np.asarray(sim_row, dtype=float)
    rel_row = np.asarray(rel_row, dtype=float)
    if sim_row.shape != rel_row.shape:
        raise ValueError(f"similarity/relevance length mismatch: {sim_row.shape} vs {rel_row.shape}")
    tau = _validate_tau(tau)
    mask = rel_row < tau
    if gt_index is not None:
        mask[_validate_gt(gt_index, sim_row.size)] = False
    return _masked_extremum(sim_row, mask, take_max=True)


def hardest_positive_naive(sim_row: np.ndarray, gt_index: int) -> int:
    """Least similar candidate other than the groundtruth (ablation only:
    this happily returns items that are not relevant at all)."""
    sim_row = np.asarray(sim_row, dtype=float)
    if sim_row.size < 2:
        raise ValueError("no positive candidates: row has fewer than 2 entries")
    gt_index = _validate_gt(gt_index, sim_row.size)
    mask = np.ones(sim_row.size, dtype=bool)
    mask[gt_index] = False
    result = _masked_extremum(sim_row, mask, take_max=False)
    assert result is not None
    return result


def hardest_positive_ranp(
    sim_row: np.ndarray,
    rel_row: np.ndarray,
    tau: float,
) -> int | None:
    """Least similar candidate among those with relevance at or above tau.

    The groundtruth stays in the pool; when it is the only relevant
    candidate the mined positive degenerates to the groundtruth itself.
    Returns None when no candidate is relevant.
    """
    sim_row = np.asarray(sim_row, dtype=float)
    rel_row = np.asarray(rel_row, dtype=float)
    if sim_row.shape != rel_row.shape:
        raise ValueError(f"similarity/relevance length mismatch: {sim_row.shape} vs {rel_row.shape}")
    tau = _validate_tau(tau)
    return _masked_extremum(sim_row, rel_row >= tau, take_max=False)


def mine_batch(
    sim: np.ndarray,
    rel: np.ndarray,
    gt: np.ndarray,
    tau: float,
    strategy: Strategy,
) -> MinedTriplets:
    """Mine one triplet per anchor row of a batch similarity matrix.

    ``gt`` maps each anchor row to its groundtruth column. Standard mining
    pairs each anchor with its groundtruth positive and the plain hardest
    negative; RAN swaps in the relevance-filtered negative; RANP
    additionally mines the relevance-filtered positive.
    """
    sim = np.asarray(sim, dtype=float)
    rel = np.asarray(rel, dtype=float)
    gt = np.asarray(gt, dtype=np.int64)
    if sim.shape != rel.shape:
        raise ValueError(f"similarity/relevance shape mismatch: {sim.shape} vs {rel.shape}")
    if gt.shape != (sim.shape[0],):
        raise ValueError(f"gt map must have one entry per anchor, got shape {gt.shape}")
    if gt.size > 0 and (gt.min() < 0 or gt.max() >= sim.shape[1]):
        raise ValueError("gt map contains out-of-range column indices")
    strategy = Strategy(strategy)
    tau = _validate_tau(tau)

    n = sim.shape[0]
    negatives = np.full(n, -1, dtype=np.int64)
    positives = np.full(n, -1, dtype=np.int64)
    skipped_neg = np.zeros(n, dtype=bool)
    skipped_pos = np.zeros(n, dtype=bool)

    for i in range(n):
        row_sim = sim[i]
        row_rel = rel[i]
        g = int(gt[i])

        if strategy is Strategy.STANDARD:
            if row_sim.size >= 2:
                negatives[i] = hardest_negative_standard(row_sim, g)
            else:
                skipped_neg[i] = True
            positives[i] = g
        else:
            neg = hardest_negative_ran(row_sim, row_rel, tau, gt_index=g)
            if neg is None:
                skipped_neg[i] = True
            else:
                negatives[i] = neg
            if strategy is Strategy.RAN:
                positives[i] = g
            else:
                pos = hardest_positive_ranp(row_sim, row_rel, tau)
                if pos is None:
                    skipped_pos[i] = True
                else:
                    positives[i] = pos

    return MinedTriplets(
        negative_indices=negatives,
        positive_indices=positives,
        skipped_negative=skipped_neg,
        skipped_positive=skipped_pos,
        strategy=strategy,
    )

"""Hinge triplet terms and the per-batch contrastive loss.

The negative term enforces a margin between the groundtruth similarity
and the mined-negative similarity; the positive term enforces the same
kind of margin between the mined positive and the mined negative. The
batch loss sums both term families over anchors and divides by the full
batch size, with anchors whose mining came up empty contributing zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mining import MinedTriplets, Strategy


@dataclass(frozen=True)
class Margins:
    delta_n: float = 0.2
    delta_p: float = 0.2

    def __post_init__(self):
        if self.delta_n < 0 or self.delta_p < 0:
            raise ValueError(f"margins must be non-negative, got {self}")


@dataclass(frozen=True)
class LossBreakdown:
    """Loss components for one batch; ``skipped`` counts the per-anchor
    term contributions dropped because mining found no candidate."""

    total: float
    l_n_sum: float
    l_p_sum: float
    active_negatives: int
    active_positives: int
    skipped: int


@dataclass(frozen=True)
class TripletTerm:
    """One anchor's evaluated loss terms and the indices they touch."""

    anchor: int
    gt: int
    negative: int | None
    positive: int | None
    l_n: float
    l_p: float | None


def triplet_term_negative(s_gt: float, s_neg: float, delta_n: float) -> float:
    """max(0, delta_n + s_neg - s_gt): zero exactly when the margin
    constraint holds non-strictly."""
    return float(max(0.0, delta_n + s_neg - s_gt))


def triplet_term_positive(s_pos: float, s_neg: float, delta_p: float) -> float:
    """max(0, delta_p + s_neg - s_pos)."""
    return float(max(0.0, delta_p + s_neg - s_pos))


def anchor_terms(
    sim: np.ndarray,
    mined: MinedTriplets,
    gt: np.ndarray,
    margins: Margins,
) -> list[TripletTerm]:
    """Evaluate the loss terms for every non-skipped anchor.

    The negative term always measures the mined negative against the
    groundtruth similarity; the positive term (mined strategies with
    positives only) measures it against the mined positive. An anchor
    without a mined negative contributes no terms at all, since the
    positive term consumes the mined negative too.
    """
    sim = np.asarray(sim, dtype=float)
    gt = np.asarray(gt, dtype=np.int64)
    n_anchors, n_candidates = sim.shape
    if mined.anchor_count != n_anchors:
        raise ValueError(
            f"mined triplets cover {mined.anchor_count} anchors, batch has {n_anchors}"
        )
    for name, idx in (("gt", gt), ("negative", mined.negative_indices), ("positive", mined.positive_indices)):
        valid = idx[idx >= 0] if name != "gt" else idx
        if valid.size and (valid.min() < 0 or valid.max() >= n_candidates):
            raise ValueError(f"{name} index out of range for {n_candidates} candidates")

    with_positive_term = mined.strategy is Strategy.RANP
    terms: list[TripletTerm] = []
    for i in range(n_anchors):
        if mined.skipped_negative[i]:
            continue
        neg = int(mined.negative_indices[i])
        g = int(gt[i])
        l_n = triplet_term_negative(sim[i, g], sim[i, neg], margins.delta_n)
        l_p: float | None = None
        pos: int | None = None
        if with_positive_term and not mined.skipped_positive[i]:
            pos = int(mined.positive_indices[i])
            l_p = triplet_term_positive(sim[i, pos], sim[i, neg], margins.delta_p)
        terms.append(TripletTerm(anchor=i, gt=g, negative=neg, positive=pos, l_n=l_n, l_p=l_p))
    return terms


def _skipped_count(mined: MinedTriplets) -> int:
    with_positive_term = mined.strategy is Strategy.RANP
    skipped = int(np.count_nonzero(mined.skipped_negative))
    if with_positive_term:
        # a missing negative also drops the positive term it feeds into
        skipped += int(np.count_nonzero(mined.skipped_negative | mined.skipped_positive))
    return skipped


def batch_loss(
    sim: np.ndarray,
    mined: MinedTriplets,
    gt: np.ndarray,
    margins: Margins,
) -> LossBreakdown:
    """Sum the anchor terms and normalize by the full batch size."""
    sim = np.asarray(sim, dtype=float)
    terms = anchor_terms(sim, mined, gt, margins)
    l_n_sum = 0.0
    l_p_sum = 0.0
    active_n = 0
    active_p = 0
    for t in terms:
        l_n_sum += t.l_n
        active_n += 1 if t.l_n > 0 else 0
        if t.l_p is not None:
            l_p_sum += t.l_p
            active_p += 1 if t.l_p > 0 else 0
    batch_size = sim.shape[0]
    return LossBreakdown(
        total=float((l_n_sum + l_p_sum) / batch_size),
        l_n_sum=float(l_n_sum),
        l_p_sum=float(l_p_sum),
        active_negatives=int(active_n),
        active_positives=int(active_p),
        skipped=_skipped_count(mined),
    )


def bidirectional_loss(
    sim_v2t: np.ndarray,
    sim_t2v: np.ndarray,
    mined_v2t: MinedTriplets,
    mined_t2v: MinedTriplets,
    gt_v2t: np.ndarray,
    gt_t2v: np.ndarray,
    margins: Margins,
    t2v_weight: float = 1.0,
) -> LossBreakdown:
    """Sum of the two directional batch losses, mined independently.

    The two similarity matrices must be mutual transposes of one batch;
    the text-to-video direction can be reweighted via ``t2v_weight``.
    """
    sim_v2t = np.asarray(sim_v2t, dtype=float)
    sim_t2v = np.asarray(sim_t2v, dtype=float)
    if sim_t2v.shape != sim_v2t.shape[::-1]:
        raise ValueError(
            f"directional similarity shapes are not transposes: {sim_v2t.shape} vs {sim_t2v.shape}"
        )
    fwd = batch_loss(sim_v2t, mined_v2t, gt_v2t, margins)
    bwd = batch_loss(sim_t2v, mined_t2v, gt_t2v, margins)
    w = float(t2v_weight)
    return LossBreakdown(
        total=fwd.total + w * bwd.total,
        l_n_sum=fwd.l_n_sum + w * bwd.l_n_sum,
        l_p_sum=fwd.l_p_sum + w * bwd.l_p_sum,
        active_negatives=fwd.active_negatives + bwd.active_negatives,
        active_positives=fwd.active_positives + bwd.active_positives,
        skipped=fwd.skipped + bwd.skipped,
    )

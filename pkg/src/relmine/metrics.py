"""Relevance-graded ranking metrics: DCG, nDCG, AP, mAP, and the
two-direction evaluation report.

nDCG treats relevance as a continuous grade in [0, 1]; AP binarizes it
(a candidate counts as relevant only when its relevance is exactly 1),
and anchors with no binary-relevant candidate are excluded from the mAP
mean. Ranked lists order candidates by descending similarity with ties
broken by candidate index, so every metric here is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ModelParams, embed
from .semantics import relevance_matrix


@dataclass(frozen=True)
class RankedList:
    """Candidates for one anchor, sorted by descending similarity."""

    anchor_id: str
    candidate_ids: tuple[str, ...]
    relevances: np.ndarray


def rank_candidates(
    anchor_id: str,
    similarities: np.ndarray,
    candidate_ids: Sequence[str],
    relevances: np.ndarray,
) -> RankedList:
    """Stable descending sort by similarity (ties keep candidate order)."""
    similarities = np.asarray(similarities, dtype=float)
    order = np.argsort(-similarities, kind="stable")
    return RankedList(
        anchor_id=anchor_id,
        candidate_ids=tuple(candidate_ids[i] for i in order),
        relevances=np.asarray(relevances, dtype=float)[order],
    )


def dcg(relevances_in_rank_order: np.ndarray, n_r: int | None = None) -> float:
    """Discounted cumulative gain over the first ``n_r`` ranks (all ranks
    when ``n_r`` is None); rank k starts at 1 with discount log2(k+1)."""
    rels = np.asarray(relevances_in_rank_order, dtype=float)
    if n_r is None:
        n_r = rels.size
    if n_r > rels.size:
        raise ValueError(f"n_r={n_r} exceeds list length {rels.size}")
    rels = rels[:n_r]
    ranks = np.arange(1, rels.size + 1)
    return float(np.sum(rels / np.log2(ranks + 1)))


def ndcg(relevances_in_rank_order: np.ndarray) -> float:
    """DCG over the full list normalized by the ideal (descending-relevance)
    DCG; 0 when the list has no relevant candidate at all."""
    rels = np.asarray(relevances_in_rank_order, dtype=float)
    ideal = np.sort(rels)[::-1]
    idcg = dcg(ideal)
    if idcg == 0.0:
        return 0.0
    return dcg(rels) / idcg


def average_precision(relevances_in_rank_order: np.ndarray) -> float | None:
    """AP under binary relevance (relevant iff relevance is exactly 1).

    Returns None when the list has no binary-relevant candidate, so the
    caller can exclude the anchor from the mean.
    """
    rels = np.asarray(relevances_in_rank_order, dtype=float)
    relevant = rels == 1.0
    n_r = int(np.count_nonzero(relevant))
    if n_r == 0:
        return None
    hits = np.cumsum(relevant)
    ranks = np.arange(1, rels.size + 1)
    precision_at_k = hits / ranks
    return float(np.sum(precision_at_k[relevant]) / n_r)


@dataclass(frozen=True)
class MetricsReport:
    """Per-direction means in percent; mAP fields are None when no anchor
    in the split has a binary-relevant candidate."""

    ndcg_t2v: float
    ndcg_v2t: float
    ndcg_avg: float
    map_t2v: float | None
    map_v2t: float | None
    map_avg: float | None

    def swapped(self) -> "MetricsReport":
        return MetricsReport(
            ndcg_t2v=self.ndcg_v2t, ndcg_v2t=self.ndcg_t2v, ndcg_avg=self.ndcg_avg,
            map_t2v=self.map_v2t, map_v2t=self.map_t2v, map_avg=self.map_avg,
        )


def _direction_means(sims: np.ndarray, rels: np.ndarray) -> tuple[float, float | None]:
    """Mean nDCG and mean AP (or None) over the anchors in ``sims`` rows."""
    ndcgs = []
    aps = []
    for i in range(sims.shape[0]):
        order = np.argsort(-sims[i], kind="stable")
        ranked = rels[i][order]
        ndcgs.append(ndcg(ranked))
        ap = average_precision(ranked)
        if ap is not None:
            aps.append(ap)
    mean_ndcg = float(np.mean(ndcgs))
    mean_ap = float(np.mean(aps)) if aps else None
    return mean_ndcg, mean_ap


def evaluate(
    params: ModelParams,
    dataset,
    split: str,
    rho: float = 0.25,
    empty_empty: float = 1.0,
) -> MetricsReport:
    """Rank the full cross-modal similarity of a split in both directions
    and report mean nDCG / mAP per direction plus their average."""
    video_ids = list(dataset.splits.get(split, []))
    if not video_ids:
        raise ValueError(f"split {split!r} is empty")
    caption_ids = [c for v in video_ids for c in dataset.video_by_id[v].caption_ids]

    video_profiles = [dataset.video_profile(v, rho) for v in video_ids]
    caption_profiles = [dataset.caption_by_id[c].annotation.profile for c in caption_ids]
    rel = relevance_matrix(video_profiles, caption_profiles, empty_empty=empty_empty)

    e_v = embed(dataset.video_feature_matrix(video_ids), params.w_video)
    e_q = embed(dataset.caption_feature_matrix(caption_ids), params.w_text)
    sims = np.clip(e_v @ e_q.T, -1.0, 1.0)

    ndcg_v2t, map_v2t = _direction_means(sims, rel)
    ndcg_t2v, map_t2v = _direction_means(sims.T, rel.T)

    map_usable = map_v2t is not None or map_t2v is not None
    return MetricsReport(
        ndcg_t2v=100.0 * ndcg_t2v,
        ndcg_v2t=100.0 * ndcg_v2t,
        ndcg_avg=100.0 * 0.5 * (ndcg_t2v + ndcg_v2t),
        map_t2v=100.0 * map_t2v if map_usable and map_t2v is not None else None,
        map_v2t=100.0 * map_v2t if map_usable and map_v2t is not None else None,
        map_avg=(
            100.0 * 0.5 * (map_t2v + map_v2t)
            if (map_t2v is not None and map_v2t is not None)
            else None
        ),
    )

import itertools
import math

import numpy as np
import pytest

from relmine.data import Caption, ClassEntry, Dataset, SyntheticConfig, Video, generate_synthetic
from relmine.metrics import (
    MetricsReport,
    average_precision,
    dcg,
    evaluate,
    ndcg,
    rank_candidates,
)
from relmine.model import ModelParams, init_params
from relmine.semantics import CaptionAnnotation, SemanticProfile


def dcg_scalar(rels):
    """Plain-loop reference: sum of rel_k / log2(k+1) with ranks from 1."""
    return sum(r / math.log2(k + 2) for k, r in enumerate(rels))


def ap_scalar(rels):
    """Plain-loop reference for AP under binary (== 1.0) relevance."""
    n_r = sum(1 for r in rels if r == 1.0)
    if n_r == 0:
        return None
    total = 0.0
    hits = 0
    for k, r in enumerate(rels, start=1):
        if r == 1.0:
            hits += 1
            total += hits / k
    return total / n_r


class TestDcg:
    def test_single_relevant_item(self):
        assert dcg([1.0], 1) == 1.0

    def test_relevant_item_at_rank_two(self):
        # 0/log2(2) + 1/log2(3), frozen from the scalar reference
        assert dcg([0.0, 1.0], 2) == pytest.approx(0.6309297535714574, abs=1e-15)

    def test_all_zero_relevances(self):
        assert dcg([0.0, 0.0, 0.0], 3) == 0.0

    def test_truncation(self):
        assert dcg([1.0, 1.0, 1.0], 1) == 1.0

    def test_n_r_beyond_length_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            dcg([1.0], 5)

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            rels = rng.uniform(size=rng.integers(1, 10))
            assert dcg(rels) == pytest.approx(dcg_scalar(rels), abs=1e-12)


class TestNdcg:
    def test_descending_list_is_optimal(self):
        assert ndcg([1.0, 0.8, 0.3, 0.0]) == 1.0

    def test_relevant_item_misplaced(self):
        assert ndcg([0.0, 1.0]) == pytest.approx(0.6309297535714574, abs=1e-12)

    def test_no_relevant_items_is_zero(self):
        assert ndcg([0.0, 0.0]) == 0.0

    def test_idcg_matches_permutation_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            rels = rng.choice([0.0, 0.25, 0.5, 1.0], size=rng.integers(1, 7))
            if not rels.any():
                continue
            best = max(dcg_scalar(perm) for perm in itertools.permutations(rels))
            assert ndcg(rels) == pytest.approx(dcg_scalar(rels) / best, abs=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            rels = rng.uniform(size=6)
            assert 0.0 <= ndcg(rels) <= 1.0 + 1e-12

    def test_one_iff_non_increasing(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            rels = rng.choice([0.0, 0.5, 1.0], size=5)
            if not rels.any():
                continue
            is_sorted = all(rels[i] >= rels[i + 1] for i in range(len(rels) - 1))
            assert (ndcg(rels) == pytest.approx(1.0, abs=1e-12)) == is_sorted

    def test_fixing_adjacent_inversion_increases(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            rels = rng.uniform(size=6)
            k = int(rng.integers(5))
            if rels[k] >= rels[k + 1]:
                rels[k], rels[k + 1] = rels[k + 1], rels[k]
            before = ndcg(rels.copy())
            swapped = rels.copy()
            swapped[k], swapped[k + 1] = swapped[k + 1], swapped[k]
            assert ndcg(swapped) > before

    def test_appending_irrelevant_tail_changes_nothing(self):
        rels = [0.7, 0.2, 1.0]
        assert ndcg(rels + [0.0, 0.0]) == pytest.approx(ndcg(rels), abs=1e-12)


class TestAveragePrecision:
    def test_front_loaded_relevants(self):
        assert average_precision([1.0, 1.0, 0.3, 0.0]) == 1.0

    def test_relevants_at_ranks_two_and_four(self):
        # P(2)=1/2, P(4)=2/4 -> AP = (1/2 + 1/2)/2 = 0.5
        assert average_precision([0.0, 1.0, 0.0, 1.0]) == pytest.approx(0.5, abs=1e-15)

    def test_no_binary_relevant_items_is_undefined(self):
        assert average_precision([0.9, 0.99, 0.5]) is None

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            rels = rng.choice([0.0, 0.5, 1.0], size=rng.integers(1, 12))
            expected = ap_scalar(rels.tolist())
            got = average_precision(rels)
            if expected is None:
                assert got is None
            else:
                assert got == pytest.approx(expected, abs=1e-12)

    def test_one_iff_relevants_on_top(self):
        assert average_precision([1.0, 1.0, 0.0]) == 1.0
        assert average_precision([1.0, 0.0, 1.0]) < 1.0

    def test_tail_invariance(self):
        rels = [1.0, 0.0, 1.0]
        assert average_precision(rels + [0.0]) == average_precision(rels)


class TestRankCandidates:
    def test_orders_by_descending_similarity(self):
        ranked = rank_candidates("a", np.array([0.1, 0.9, 0.5]), ["x", "y", "z"],
                                 np.array([0.0, 1.0, 0.5]))
        assert ranked.candidate_ids == ("y", "z", "x")
        assert ranked.relevances.tolist() == [1.0, 0.5, 0.0]

    def test_ties_keep_candidate_order(self):
        ranked = rank_candidates("a", np.array([0.5, 0.5, 0.5]), ["x", "y", "z"],
                                 np.array([0.1, 0.2, 0.3]))
        assert ranked.candidate_ids == ("x", "y", "z")


def _manual_dataset():
    """Three single-caption videos whose profile-indicator features make
    cosine order coincide with relevance order for every anchor.

    Profiles: v0 {verb0; noun0}, v1 {verb0; noun1}, v2 {verb1; noun2},
    so rel(v0, v1) = 0.5 and rel(·, v2) = 0 off-diagonal.
    """
    classes = [ClassEntry(0, "V", "v0"), ClassEntry(1, "V", "v1"),
               ClassEntry(0, "N", "n0"), ClassEntry(1, "N", "n1"), ClassEntry(2, "N", "n2")]
    spec = {
        "v0": (SemanticProfile.from_ids([0], [0]), np.array([1.0, 0, 1.0, 0, 0])),
        "v1": (SemanticProfile.from_ids([0], [1]), np.array([1.0, 0, 0, 1.0, 0])),
        "v2": (SemanticProfile.from_ids([1], [2]), np.array([0, 1.0, 0, 0, 1.0])),
    }
    videos, captions = [], []
    for vid, (profile, feats) in spec.items():
        cid = f"{vid}_c"
        videos.append(Video(vid, feats, (cid,)))
        captions.append(Caption(CaptionAnnotation(cid, vid, "", profile), feats))
    return Dataset(classes=classes, videos=videos, captions=captions,
                   splits={"test": ["v0", "v1", "v2"]})


class TestEvaluate:
    def test_single_pair_perfect_scores(self):
        profile = SemanticProfile.from_ids([0], [0])
        classes = [ClassEntry(0, "V", "v"), ClassEntry(0, "N", "n")]
        feats = np.array([1.0, 0.0])
        ds = Dataset(
            classes=classes,
            videos=[Video("v0", feats, ("c0",))],
            captions=[Caption(CaptionAnnotation("c0", "v0", "", profile), feats)],
            splits={"test": ["v0"]},
        )
        params = ModelParams(np.eye(2), np.eye(2))
        report = evaluate(params, ds, "test")
        assert report.ndcg_t2v == report.ndcg_v2t == report.ndcg_avg == 100.0
        assert report.map_t2v == report.map_v2t == report.map_avg == 100.0

    def test_ranking_by_true_relevance_is_optimal(self):
        ds = _manual_dataset()
        params = ModelParams(np.eye(5), np.eye(5))
        report = evaluate(params, ds, "test", rho=0.25)
        assert report.ndcg_v2t == pytest.approx(100.0, abs=1e-9)
        assert report.ndcg_t2v == pytest.approx(100.0, abs=1e-9)

    def test_empty_split_rejected(self):
        ds = _manual_dataset()
        with pytest.raises(ValueError, match="empty"):
            evaluate(ModelParams(np.eye(5), np.eye(5)), ds, "train")

    def test_matches_per_anchor_scalar_oracle(self):
        ds = generate_synthetic(SyntheticConfig(
            n_videos=12, val_videos=1, test_videos=10,
            n_verb_classes=6, n_noun_classes=10, captions_per_video=1, seed=4,
        ))
        params = init_params(ds.d_video, ds.d_text, 8, np.random.default_rng(6))
        report = evaluate(params, ds, "test", rho=0.25)

        from relmine.model import embed
        from relmine.semantics import relevance

        video_ids = ds.splits["test"]
        caption_ids = [c for v in video_ids for c in ds.video_by_id[v].caption_ids]
        e_v = embed(ds.video_feature_matrix(video_ids), params.w_video)
        e_q = embed(ds.caption_feature_matrix(caption_ids), params.w_text)
        v_profiles = {v: ds.video_profile(v, 0.25) for v in video_ids}
        q_profiles = {c: ds.caption_by_id[c].annotation.profile for c in caption_ids}

        def direction(anchors_e, cands_e, anchor_ids, cand_ids, prof_a, prof_c):
            ndcgs, aps = [], []
            for i, aid in enumerate(anchor_ids):
                sims = [float(np.dot(anchors_e[i], cands_e[j])) for j in range(len(cand_ids))]
                order = sorted(range(len(cand_ids)), key=lambda j: (-sims[j], j))
                rels = [relevance(prof_a[aid], prof_c[cand_ids[j]]) for j in order]
                idcg = dcg_scalar(sorted(rels, reverse=True))
                ndcgs.append(dcg_scalar(rels) / idcg if idcg > 0 else 0.0)
                ap = ap_scalar(rels)
                if ap is not None:
                    aps.append(ap)
            return (100 * sum(ndcgs) / len(ndcgs),
                    100 * sum(aps) / len(aps) if aps else None)

        ndcg_v2t, map_v2t = direction(e_v, e_q, video_ids, caption_ids, v_profiles, q_profiles)
        ndcg_t2v, map_t2v = direction(e_q, e_v, caption_ids, video_ids, q_profiles, v_profiles)
        assert report.ndcg_v2t == pytest.approx(ndcg_v2t, abs=1e-10)
        assert report.ndcg_t2v == pytest.approx(ndcg_t2v, abs=1e-10)
        assert report.ndcg_avg == pytest.approx((ndcg_v2t + ndcg_t2v) / 2, abs=1e-10)
        if map_v2t is None:
            assert report.map_v2t is None
        else:
            assert report.map_v2t == pytest.approx(map_v2t, abs=1e-10)
        if map_t2v is None:
            assert report.map_t2v is None
        else:
            assert report.map_t2v == pytest.approx(map_t2v, abs=1e-10)

    def test_map_absent_without_any_full_relevance(self):
        # two captions with distinct nouns: the aggregated video profile is
        # their union, so no video-caption pair reaches relevance 1
        profile_a = SemanticProfile.from_ids([0], [0])
        profile_b = SemanticProfile.from_ids([0], [1])
        classes = [ClassEntry(0, "V", "v"), ClassEntry(0, "N", "a"), ClassEntry(1, "N", "b")]
        feats = np.ones(3)
        ds = Dataset(
            classes=classes,
            videos=[Video("v0", feats, ("c0", "c1"))],
            captions=[
                Caption(CaptionAnnotation("c0", "v0", "", profile_a), feats),
                Caption(CaptionAnnotation("c1", "v0", "", profile_b), feats),
            ],
            splits={"test": ["v0"]},
        )
        report = evaluate(ModelParams(np.eye(3), np.eye(3)), ds, "test", rho=0.25)
        assert report.map_t2v is None
        assert report.map_v2t is None
        assert report.map_avg is None

    def test_swapped_report(self):
        report = MetricsReport(10.0, 20.0, 15.0, 1.0, 2.0, 1.5)
        swapped = report.swapped()
        assert swapped.ndcg_t2v == 20.0
        assert swapped.ndcg_v2t == 10.0
        assert swapped.ndcg_avg == 15.0
        assert swapped.map_t2v == 2.0

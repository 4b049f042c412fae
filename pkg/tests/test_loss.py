import numpy as np
import pytest
from hypothesis import given, strategies as st

from relmine.loss import (
    LossBreakdown,
    Margins,
    batch_loss,
    bidirectional_loss,
    triplet_term_negative,
    triplet_term_positive,
)
from relmine.mining import MinedTriplets, Strategy, mine_batch

finite = st.floats(-2, 2, allow_nan=False)


def _mined(negatives, positives, strategy, skipped_neg=None, skipped_pos=None):
    n = len(negatives)
    return MinedTriplets(
        negative_indices=np.asarray(negatives, dtype=np.int64),
        positive_indices=np.asarray(positives, dtype=np.int64),
        skipped_negative=np.asarray(skipped_neg if skipped_neg is not None else [False] * n),
        skipped_positive=np.asarray(skipped_pos if skipped_pos is not None else [False] * n),
        strategy=strategy,
    )


class TestTripletTerms:
    def test_negative_term_inactive_when_margin_satisfied(self):
        assert triplet_term_negative(0.9, 0.5, 0.2) == 0.0

    def test_negative_term_partial_violation(self):
        assert triplet_term_negative(0.6, 0.5, 0.2) == pytest.approx(0.1, abs=1e-15)

    def test_negative_term_equal_similarities(self):
        assert triplet_term_negative(0.4, 0.4, 0.2) == pytest.approx(0.2)

    def test_positive_term_inactive(self):
        assert triplet_term_positive(0.8, 0.1, 0.2) == 0.0

    def test_positive_term_active(self):
        assert triplet_term_positive(0.2, 0.3, 0.2) == pytest.approx(0.3, abs=1e-15)

    @given(finite, finite, st.floats(0, 1))
    def test_positive_equals_negative_when_anchored_at_gt(self, s_gt, s_neg, delta):
        # with the mined positive being the groundtruth, the two terms are
        # the same function up to the margin name
        assert triplet_term_positive(s_gt, s_neg, delta) == triplet_term_negative(s_gt, s_neg, delta)

    @given(finite, finite, st.floats(0, 1))
    def test_non_negative(self, a, b, delta):
        assert triplet_term_negative(a, b, delta) >= 0.0
        assert triplet_term_positive(a, b, delta) >= 0.0

    @given(finite, finite, st.floats(0, 1), st.floats(-1, 1))
    def test_translation_invariance(self, s_gt, s_neg, delta, shift):
        before = triplet_term_negative(s_gt, s_neg, delta)
        after = triplet_term_negative(s_gt + shift, s_neg + shift, delta)
        assert after == pytest.approx(before, abs=1e-12)


class TestMargins:
    def test_negative_margin_rejected(self):
        with pytest.raises(ValueError):
            Margins(-0.1, 0.2)


class TestBatchLoss:
    def test_all_skipped_anchors_zero_loss(self):
        sim = np.array([[0.5, 0.1], [0.2, 0.6]])
        mined = _mined([-1, -1], [0, 1], Strategy.RAN, skipped_neg=[True, True])
        out = batch_loss(sim, mined, np.array([0, 1]), Margins(0.2, 0.2))
        assert out.total == 0.0
        assert out.skipped == 2

    def test_single_anchor_hand_values(self):
        # s_gt=0.6, s_neg=0.5, s_pos=0.55: L_n=0.1, L_p=0.15, total 0.25
        sim = np.array([[0.6, 0.5, 0.55]])
        mined = _mined([1], [2], Strategy.RANP)
        out = batch_loss(sim, mined, np.array([0]), Margins(0.2, 0.2))
        assert out.l_n_sum == pytest.approx(0.1, abs=1e-15)
        assert out.l_p_sum == pytest.approx(0.15, abs=1e-15)
        assert out.total == pytest.approx(0.25, abs=1e-15)
        assert out.active_negatives == 1
        assert out.active_positives == 1

    def test_positive_sum_zero_under_standard_and_ran(self):
        rng = np.random.default_rng(2)
        sim = rng.uniform(-1, 1, size=(8, 8))
        rel = rng.uniform(0, 1, size=(8, 8))
        gt = np.arange(8)
        for strategy in (Strategy.STANDARD, Strategy.RAN):
            mined = mine_batch(sim, rel, gt, 0.4, strategy)
            out = batch_loss(sim, mined, gt, Margins(0.2, 0.2))
            assert out.l_p_sum == 0.0
            assert out.active_positives == 0

    def test_matches_scalar_loop_on_random_batch(self):
        rng = np.random.default_rng(3)
        sim = rng.uniform(-1, 1, size=(64, 64))
        rel = rng.uniform(0, 1, size=(64, 64))
        np.fill_diagonal(rel, 1.0)
        gt = np.arange(64)
        margins = Margins(0.2, 0.25)
        mined = mine_batch(sim, rel, gt, 0.4, Strategy.RANP)
        out = batch_loss(sim, mined, gt, margins)

        expected_n = 0.0
        expected_p = 0.0
        for i in range(64):
            if mined.skipped_negative[i]:
                continue
            j = mined.negative_indices[i]
            expected_n += max(0.0, margins.delta_n + sim[i, j] - sim[i, i])
            if not mined.skipped_positive[i]:
                p = mined.positive_indices[i]
                expected_p += max(0.0, margins.delta_p + sim[i, j] - sim[i, p])
        assert out.l_n_sum == pytest.approx(expected_n, rel=1e-12)
        assert out.l_p_sum == pytest.approx(expected_p, rel=1e-12)
        assert out.total == pytest.approx((expected_n + expected_p) / 64, rel=1e-12)

    def test_out_of_range_index_rejected(self):
        sim = np.array([[0.6, 0.5]])
        mined = _mined([7], [0], Strategy.RAN)
        with pytest.raises(ValueError, match="out of range"):
            batch_loss(sim, mined, np.array([0]), Margins())

    def test_missing_positive_drops_only_positive_term(self):
        sim = np.array([[0.6, 0.9, 0.1], [0.1, 0.6, 0.9]])
        mined = _mined([1, 2], [-1, -1], Strategy.RANP, skipped_pos=[True, True])
        out = batch_loss(sim, mined, np.array([0, 1]), Margins(0.2, 0.2))
        assert out.l_p_sum == 0.0
        assert out.l_n_sum > 0.0
        assert out.skipped == 2


class TestBidirectionalLoss:
    def test_symmetric_batch_doubles_directional_total(self):
        sim = np.array([[0.9, 0.6], [0.6, 0.9]])
        gt = np.arange(2)
        rel = np.eye(2)
        mined_fwd = mine_batch(sim, rel, gt, 0.5, Strategy.RAN)
        mined_bwd = mine_batch(sim.T, rel.T, gt, 0.5, Strategy.RAN)
        one = batch_loss(sim, mined_fwd, gt, Margins(0.2, 0.2))
        both = bidirectional_loss(sim, sim.T, mined_fwd, mined_bwd, gt, gt, Margins(0.2, 0.2))
        assert both.total == pytest.approx(2 * one.total, rel=1e-12)

    def test_separated_embeddings_zero_loss(self):
        sim = np.array([[1.0, -1.0], [-1.0, 1.0]])
        gt = np.arange(2)
        rel = np.eye(2)
        mined_fwd = mine_batch(sim, rel, gt, 0.5, Strategy.RAN)
        mined_bwd = mine_batch(sim.T, rel.T, gt, 0.5, Strategy.RAN)
        out = bidirectional_loss(sim, sim.T, mined_fwd, mined_bwd, gt, gt, Margins(0.0, 0.0))
        assert out.total == 0.0

    def test_matches_two_directional_passes(self):
        rng = np.random.default_rng(9)
        sim = rng.uniform(-1, 1, size=(16, 16))
        rel = rng.uniform(0, 1, size=(16, 16))
        np.fill_diagonal(rel, 1.0)
        gt = np.arange(16)
        mined_fwd = mine_batch(sim, rel, gt, 0.3, Strategy.RANP)
        mined_bwd = mine_batch(sim.T, rel.T, gt, 0.3, Strategy.RANP)
        margins = Margins(0.2, 0.2)
        fwd = batch_loss(sim, mined_fwd, gt, margins)
        bwd = batch_loss(sim.T, mined_bwd, gt, margins)
        both = bidirectional_loss(sim, sim.T, mined_fwd, mined_bwd, gt, gt, margins)
        assert both.total == pytest.approx(fwd.total + bwd.total, rel=1e-12)
        assert both.l_n_sum == pytest.approx(fwd.l_n_sum + bwd.l_n_sum, rel=1e-12)
        assert both.skipped == fwd.skipped + bwd.skipped

    def test_t2v_weight_scales_backward_direction(self):
        rng = np.random.default_rng(10)
        sim = rng.uniform(-1, 1, size=(8, 8))
        rel = np.eye(8)
        gt = np.arange(8)
        mined_fwd = mine_batch(sim, rel, gt, 0.5, Strategy.RAN)
        mined_bwd = mine_batch(sim.T, rel.T, gt, 0.5, Strategy.RAN)
        margins = Margins(0.2, 0.2)
        fwd = batch_loss(sim, mined_fwd, gt, margins)
        bwd = batch_loss(sim.T, mined_bwd, gt, margins)
        out = bidirectional_loss(sim, sim.T, mined_fwd, mined_bwd, gt, gt, margins, t2v_weight=0.5)
        assert out.total == pytest.approx(fwd.total + 0.5 * bwd.total, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        sim = np.zeros((3, 4))
        with pytest.raises(ValueError, match="transposes"):
            bidirectional_loss(sim, sim, None, None, None, None, Margins())

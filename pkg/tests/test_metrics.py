import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodkit import glm, metrics

from .oracles import csi_at_threshold, csi_grid_max


class TestRmse:
    def test_exact_fit_is_zero(self):
        y = np.array([1.0, 2.0, 3.0])
        assert metrics.rmse(y, y) == 0.0

    def test_hand_value(self):
        assert metrics.rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(
            np.sqrt(12.5), abs=1e-12)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(5)
        y = rng.normal(size=200)
        yh = rng.normal(size=200)
        naive = np.sqrt(sum((a - b) ** 2 for a, b in zip(y, yh)) / 200)
        assert metrics.rmse(y, yh) == pytest.approx(naive, abs=1e-12)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            metrics.rmse([], [])


class TestGini:
    def test_constant_prediction_is_exactly_zero(self):
        y = np.array([0.0, 1.0, 0.0, 2.0])
        p = np.full(4, 3.3)
        assert metrics.gini(y, p) == 0.0

    def test_four_point_lorenz_hand_value(self):
        # One positive, ranked first: Lorenz polygon (0,0)-(1/4,1)-(1,1).
        y = np.array([0.0, 0.0, 0.0, 1.0])
        p = np.array([0.1, 0.2, 0.3, 0.9])
        assert metrics.gini(y, p) == pytest.approx(0.75, abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(11)
        y = rng.integers(0, 2, 60).astype(float)
        y[0] = 1.0
        p = rng.choice([0.1, 0.4, 0.4, 0.9], size=60)
        base = metrics.gini(y, p)
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(60)
            assert metrics.gini(y[perm], p[perm]) == base

    def test_invariant_under_increasing_transform(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            y = rng.exponential(size=50)
            p = np.round(rng.normal(size=50), 2)
            g1 = metrics.gini(y, p)
            g2 = metrics.gini(y, np.exp(p))          # strictly increasing
            g3 = metrics.gini(y, 3.0 * p + 11.0)     # affine increasing
            assert g1 == g2 == g3

    def test_all_zero_outcomes_raises(self):
        with pytest.raises(ValueError):
            metrics.gini([0.0, 0.0], [0.5, 0.6])

    def test_perfect_ranking_beats_poor_ranking(self):
        y = np.array([0.0, 0.0, 1.0, 5.0])
        good = metrics.gini(y, np.array([0.1, 0.2, 0.5, 0.9]))
        bad = metrics.gini(y, np.array([0.9, 0.5, 0.2, 0.1]))
        assert good > 0 > bad


class TestLogloss:
    def test_perfect_prediction_near_zero(self):
        y = np.array([0.0, 1.0])
        assert metrics.logloss(y, np.array([0.0, 1.0])) < 1e-10

    def test_coin_flip(self):
        y = np.array([0.0, 1.0, 1.0, 0.0])
        assert metrics.logloss(y, np.full(4, 0.5)) == pytest.approx(
            np.log(2.0), abs=1e-12)

    def test_equals_bernoulli_deviance_over_2n(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, 1000).astype(float)
        p = rng.uniform(0.01, 0.99, 1000)
        dev = glm.deviance("bernoulli_logit", y, p)
        assert dev / (2 * 1000) == pytest.approx(metrics.logloss(y, p),
                                                 abs=1e-12)

    def test_moves_toward_label_decreases(self):
        y = np.array([1.0, 0.0, 1.0])
        p = np.array([0.4, 0.4, 0.6])
        better = p.copy()
        better[0] = 0.5
        assert metrics.logloss(y, better) < metrics.logloss(y, p)


class TestCsiSweep:
    def test_perfect_separation(self):
        y = np.array([0.0, 0.0, 1.0, 1.0])
        p = np.array([0.1, 0.2, 0.8, 0.9])
        csi, thr, rec, prec = metrics.csi_sweep(y, p)
        assert csi == 1.0 and rec == 1.0 and prec == 1.0
        assert 0.2 < thr <= 0.8

    def test_all_negative_classification_scores_zero(self):
        y = np.array([0.0, 1.0])
        p = np.array([0.9, 0.1])
        # Labelling everything negative gives CSI 0 by TP=0.
        assert csi_at_threshold(y, p, 2.0) == 0.0
        csi, thr, _, _ = metrics.csi_sweep(y, p)
        assert csi == pytest.approx(0.5)  # all-positive cut keeps the one TP

    def test_ten_row_toy_matches_dense_grid(self):
        rng = np.random.default_rng(17)
        y = rng.integers(0, 2, 10).astype(float)
        y[3] = 1.0
        p = np.round(rng.uniform(size=10), 3)
        csi, _, _, _ = metrics.csi_sweep(y, p)
        assert csi == pytest.approx(csi_grid_max(y, p), abs=1e-12)
        assert csi >= csi_grid_max(y, p) - 1e-15

    def test_sweep_dominates_any_external_threshold(self):
        rng = np.random.default_rng(23)
        y = rng.integers(0, 2, 40).astype(float)
        y[0] = 1.0
        p = rng.uniform(size=40)
        csi, _, _, _ = metrics.csi_sweep(y, p)
        for t in rng.uniform(0, 1, 50):
            assert csi >= csi_at_threshold(y, p, t) - 1e-15

    def test_no_positives_raises(self):
        with pytest.raises(ValueError):
            metrics.csi_sweep(np.zeros(4), np.ones(4) * 0.1)

    def test_tie_takes_smallest_threshold(self):
        # CSI 0.5 both at the all-positive cut (t=0.2) and at t=0.7.
        y = np.array([1.0, 0.0, 0.0, 1.0])
        p = np.array([0.8, 0.6, 0.4, 0.2])
        csi, thr, _, _ = metrics.csi_sweep(y, p)
        assert csi == pytest.approx(0.5)
        assert thr == pytest.approx(0.2)


class TestPearsonResiduals:
    def test_zero_at_perfect_fit(self):
        r = metrics.pearson_residuals("gamma_log", [2.0, 3.0], [2.0, 3.0])
        assert np.all(r == 0.0)

    def test_bernoulli_unit_case(self):
        r = metrics.pearson_residuals("bernoulli_logit", [1.0], [0.5])
        assert r[0] == pytest.approx(1.0)

    def test_gamma_unit_case(self):
        r = metrics.pearson_residuals("gamma_log", [4.0], [2.0])
        assert r[0] == pytest.approx(1.0)

    def test_degenerate_probability_raises(self):
        with pytest.raises(ValueError):
            metrics.pearson_residuals("bernoulli_logit", [1.0], [1.0])


class TestReportDeltas:
    def test_directions_match_table_layout(self):
        base = metrics.MetricReport("ins", n_params=15, rmse=9146.6254,
                                    gini=0.0562, deviance=13180.49)
        new = metrics.MetricReport("ins+c", n_params=19, rmse=9054.3267,
                                   gini=0.1474, deviance=12586.02)
        deltas = new.deltas_vs(base)
        assert deltas["rmse"] == pytest.approx(1.01, abs=0.01)
        assert deltas["gini"] == pytest.approx(162.28, abs=0.01)
        assert deltas["deviance"] == pytest.approx(4.51, abs=0.01)
        assert deltas["n_params"] == pytest.approx(-26.67, abs=0.01)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=1e6, allow_nan=False),
                min_size=2, max_size=40),
       st.integers(min_value=0, max_value=39))
def test_logloss_pointwise_improvement(probs, idx):
    p = np.clip(np.array(probs[:max(2, len(probs))]), 1e-6, 1 - 1e-6)
    y = (np.arange(p.size) % 2).astype(float)
    idx = idx % p.size
    moved = p.copy()
    moved[idx] = (p[idx] + y[idx]) / 2.0
    if moved[idx] != p[idx]:
        assert metrics.logloss(y, moved) < metrics.logloss(y, p)

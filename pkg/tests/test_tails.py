import numpy as np
import pytest

from floodkit import tails

from .oracles import kmeans_1d_dp


def sample_gpd(rng, xi, sigma, n):
    u = rng.random(n)
    if abs(xi) < 1e-12:
        return -sigma * np.log1p(-u)
    return sigma / xi * ((1.0 - u) ** (-xi) - 1.0)


class TestFitGpd:
    def test_recovers_heavy_shape(self):
        rng = np.random.default_rng(100)
        y = sample_gpd(rng, 0.3, 1.0, 100_000)
        fit = tails.fit_gpd(y)
        assert fit.fit_method == "mle" and fit.converged
        assert 0.25 <= fit.shape_xi <= 0.35
        assert fit.scale_sigma == pytest.approx(1.0, abs=0.05)

    def test_exponential_gives_near_zero_shape(self):
        rng = np.random.default_rng(101)
        y = sample_gpd(rng, 0.0, 1.0, 100_000)
        fit = tails.fit_gpd(y)
        assert -0.05 <= fit.shape_xi <= 0.05

    def test_negative_shape_recovery(self):
        rng = np.random.default_rng(102)
        y = sample_gpd(rng, -0.2, 2.0, 50_000)
        fit = tails.fit_gpd(y)
        assert fit.shape_xi == pytest.approx(-0.2, abs=0.05)

    def test_insufficient_exceedances(self):
        with pytest.raises(ValueError, match="insufficient"):
            tails.fit_gpd(np.ones(10) + np.arange(10) * 0.1, min_exceedances=30)

    def test_identical_sample_degenerate(self):
        with pytest.raises(ValueError, match="identical"):
            tails.fit_gpd(np.full(50, 2.0))

    def test_local_optimality_64_neighbors(self):
        rng = np.random.default_rng(103)
        y = sample_gpd(rng, 0.25, 3.0, 20_000)
        fit = tails.fit_gpd(y)
        base = tails.gpd_loglik(fit.shape_xi, fit.scale_sigma, y)
        deltas = np.linspace(-4e-3, 4e-3, 9)
        count = 0
        for dx in deltas:
            for ds in deltas:
                if dx == 0.0 and ds == 0.0:
                    continue
                count += 1
                perturbed = tails.gpd_loglik(
                    fit.shape_xi + dx, fit.scale_sigma * (1 + ds), y)
                assert base >= perturbed - 1e-9 * abs(base)
        assert count >= 64

    def test_moments_method_flagged(self):
        rng = np.random.default_rng(104)
        y = sample_gpd(rng, 0.1, 1.0, 1_000)
        fit = tails.fit_gpd(y, method="moments")
        assert fit.fit_method == "moments-fallback"
        assert not fit.converged
        assert fit.shape_xi == pytest.approx(0.1, abs=0.15)


class TestChooseThreshold:
    def test_uniform_quantile(self):
        series = np.arange(1.0, 101.0)  # wet days are values > 1 mm
        u = tails.choose_threshold(series, quantile=0.95)
        assert u == pytest.approx(np.quantile(np.arange(2.0, 101.0), 0.95))

    def test_q1_is_max(self):
        series = np.array([0.0, 2.0, 5.0, 50.0])
        assert tails.choose_threshold(series, quantile=1.0) == 50.0

    def test_all_dry_raises(self):
        with pytest.raises(ValueError, match="wet"):
            tails.choose_threshold(np.zeros(100))

    def test_heavy_tail_threshold_larger(self):
        rng = np.random.default_rng(105)
        heavy = 1.5 + sample_gpd(rng, 0.4, 8.0, 5_000)
        light = 1.5 + sample_gpd(rng, 0.05, 7.0, 5_000)
        assert tails.choose_threshold(heavy) > tails.choose_threshold(light)


class TestRescale:
    def _fits(self, xis):
        return [tails.TailFit(f"p{i}", 10.0, 100, x, 1.0, "mle", True)
                for i, x in enumerate(xis)]

    def test_endpoints(self):
        scores = tails.rescale_scores(self._fits([0.0, 0.5]))
        assert [s.score for s in scores] == [0.0, 100.0]

    def test_linearity(self):
        scores = tails.rescale_scores(self._fits([0.0, 0.25, 0.5]))
        assert [s.score for s in scores] == [0.0, 50.0, 100.0]

    def test_degenerate_raises(self):
        with pytest.raises(ValueError, match="degenerate"):
            tails.rescale_scores(self._fits([0.3, 0.3, 0.3]))

    def test_order_preserved(self):
        rng = np.random.default_rng(106)
        xis = rng.uniform(-0.3, 0.8, 50)
        scores = tails.rescale_scores(self._fits(xis))
        vals = np.array([s.score for s in scores])
        assert np.all(np.argsort(vals, kind="stable")
                      == np.argsort(xis, kind="stable"))


class TestKmeans1d:
    def test_two_obvious_clusters(self):
        scores = [tails.TailScore(f"p{i}", v)
                  for i, v in enumerate([0.0, 0.0, 0.0, 100.0, 100.0, 100.0])]
        clusters = tails.cluster_1d(scores, 2)
        ids = [c.cluster_id for c in clusters]
        assert ids == [1, 1, 1, 2, 2, 2]
        np.testing.assert_allclose(clusters[0].centroids, [0.0, 100.0])

    def test_k1_centroid_is_mean(self):
        vals = [1.0, 2.0, 6.0]
        scores = [tails.TailScore(f"p{i}", v) for i, v in enumerate(vals)]
        clusters = tails.cluster_1d(scores, 1)
        assert clusters[0].centroids[0] == pytest.approx(np.mean(vals))

    def test_matches_naive_dp_oracle(self):
        rng = np.random.default_rng(107)
        for trial in range(12):
            n = int(rng.integers(10, 60))
            k = int(rng.integers(2, 6))
            vals = np.round(rng.uniform(0, 100, n), 3)
            if np.unique(vals).size < k:
                continue
            _, _, wcss = tails.kmeans_1d(vals, k)
            assert wcss == pytest.approx(kmeans_1d_dp(vals, k), rel=1e-12)

    def test_invalid_k_raises(self):
        vals = np.array([1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            tails.kmeans_1d(vals, 0)
        with pytest.raises(ValueError):
            tails.kmeans_1d(vals, 4)
        with pytest.raises(ValueError):
            tails.kmeans_1d(np.array([1.0, 1.0, 1.0]), 2)

    def test_clusters_are_contiguous_intervals(self):
        rng = np.random.default_rng(108)
        vals = rng.uniform(0, 100, 200)
        assignment, centroids, _ = tails.kmeans_1d(vals, 5)
        order = np.argsort(vals, kind="stable")
        labels = assignment[order]
        assert np.all(np.diff(labels) >= 0)          # contiguous in score order
        assert np.all(np.diff(centroids) > 0)        # strictly increasing
        assert set(labels.tolist()) == set(range(5))  # partition


class TestGridTails:
    def test_two_regime_toy_grid(self):
        from floodkit.data_model import RainGrid
        rng = np.random.default_rng(109)
        n_days = 4_000
        dates = np.arange("2000-01-01", "2010-12-15", dtype="datetime64[D]")[:n_days]
        rows = []
        for i in range(6):
            xi = 0.45 if i < 3 else 0.02
            wet = rng.random(n_days) < 0.4
            rows.append(np.where(wet, 1.5 + sample_gpd(rng, xi, 8.0, n_days), 0.0))
        grid = RainGrid([f"p{i}" for i in range(6)],
                        [43.0, 43.1, 43.2, 50.0, 50.1, 50.2],
                        [3.0] * 6, dates, np.array(rows))
        fits, scores, clusters = tails.fit_grid_tails(grid, k=2)
        south = np.mean([s.score for s in scores[:3]])
        north = np.mean([s.score for s in scores[3:]])
        assert south > north

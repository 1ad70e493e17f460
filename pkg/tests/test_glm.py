import numpy as np
import pandas as pd
import pytest

from floodkit import glm
from floodkit.data_model import FeatureTable

from .oracles import chi2_sf


def make_table(frame, target, levels=None, tags=None):
    feat = [c for c in frame.columns if c != target]
    tags = tags or {c: "ins" for c in feat}
    return FeatureTable(frame=frame, target=target, tags=tags,
                        levels=levels or {}, task="occurrence", layer="ins")


class TestClassWeights:
    def test_imbalanced_formula(self):
        y = np.r_[np.ones(10), np.zeros(990)]
        w0, w1 = glm.class_weights(y)
        assert w1 == pytest.approx(50.0, abs=1e-12)
        assert w0 == pytest.approx(1000.0 / 1980.0, abs=1e-12)

    def test_balanced_gives_unit_weights(self):
        y = np.r_[np.ones(5), np.zeros(5)]
        assert glm.class_weights(y) == (1.0, 1.0)

    def test_per_class_totals_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n1 = int(rng.integers(1, 40))
            n0 = int(rng.integers(1, 400))
            y = np.r_[np.ones(n1), np.zeros(n0)]
            w0, w1 = glm.class_weights(y)
            n = n0 + n1
            assert n0 * w0 == pytest.approx(n / 2, rel=1e-12)
            assert n1 * w1 == pytest.approx(n / 2, rel=1e-12)

    def test_single_class_raises(self):
        with pytest.raises(ValueError):
            glm.class_weights(np.ones(5))


class TestBuildDesign:
    def test_single_numeric_term(self):
        frame = pd.DataFrame({"x": [1.0, 2.0, 3.0], "y": [0.0, 1.0, 0.0]})
        table = make_table(frame, "y")
        spec = glm.ModelSpec("bernoulli_logit", ["x"])
        design = glm.build_design(table, spec)
        assert design.column_names == ["intercept", "x"]

    def test_categorical_reference_drop(self):
        frame = pd.DataFrame({
            "c": ["a", "b", "c", "d", "a", "a"],
            "y": [0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        })
        table = make_table(frame, "y", levels={"c": ["a", "b", "c", "d"]})
        spec = glm.ModelSpec("bernoulli_logit", ["c"])
        design = glm.build_design(table, spec)
        # Most frequent level "a" is the reference.
        assert design.column_names == ["intercept", "c[b]", "c[c]", "c[d]"]

    def test_numeric_by_categorical_interaction_column_count(self):
        rng = np.random.default_rng(2)
        frame = pd.DataFrame({
            "x": rng.normal(size=30),
            "c": rng.choice(["a", "b", "c"], size=30),
            "y": rng.integers(0, 2, 30).astype(float),
        })
        table = make_table(frame, "y", levels={"c": ["a", "b", "c"]})
        base = glm.build_design(table, glm.ModelSpec("bernoulli_logit", ["x", "c"]))
        with_int = glm.build_design(
            table, glm.ModelSpec("bernoulli_logit", ["x", "c", "x:c"]))
        assert with_int.n_cols - base.n_cols == 2  # (levels-1) x 1

    def test_unseen_level_raises_with_name(self):
        frame = pd.DataFrame({"c": ["a", "b"], "y": [0.0, 1.0]})
        table = make_table(frame, "y", levels={"c": ["a", "b"]})
        spec = glm.ModelSpec("bernoulli_logit", ["c"])
        fit, _ = glm.fit_model(table, spec)
        new = pd.DataFrame({"c": ["a", "z"], "y": [0.0, 0.0]})
        with pytest.raises(ValueError, match="z"):
            fit.predict(table, frame=new)

    def test_duplicate_column_pruned_with_warning(self, caplog):
        frame = pd.DataFrame({
            "x": [1.0, 2.0, 3.0, 4.0],
            "x2": [1.0, 2.0, 3.0, 4.0],
            "y": [0.0, 1.0, 0.0, 1.0],
        })
        table = make_table(frame, "y")
        design = glm.build_design(
            table, glm.ModelSpec("bernoulli_logit", ["x", "x2"]))
        assert "x2" in design.pruned
        assert design.term_columns["x2"] == []


class TestFitIrls:
    def test_intercept_only_logistic_closed_form(self):
        y = np.r_[np.ones(25), np.zeros(75)]
        frame = pd.DataFrame({"y": y})
        table = make_table(frame, "y", tags={})
        fit, _ = glm.fit_model(table, glm.ModelSpec("bernoulli_logit", []))
        assert fit.beta[0] == pytest.approx(np.log(1.0 / 3.0), abs=1e-9)

    def test_intercept_only_weighted_logistic_is_zero(self):
        y = np.r_[np.ones(7), np.zeros(2993)]
        frame = pd.DataFrame({"y": y})
        table = make_table(frame, "y", tags={})
        spec = glm.ModelSpec("bernoulli_logit", [], weight_scheme="class_balanced")
        fit, _ = glm.fit_model(table, spec)
        assert abs(fit.beta[0]) < 1e-8

    def test_intercept_only_gamma_mean_claim_amount(self):
        # Mean severity matches the documented portfolio average.
        rng = np.random.default_rng(4)
        y = rng.gamma(2.0, 1.0, size=400)
        y *= 5884.13 / y.mean()
        frame = pd.DataFrame({"y": y})
        table = make_table(frame, "y", tags={})
        fit, _ = glm.fit_model(table, glm.ModelSpec("gamma_log", []))
        assert fit.beta[0] == pytest.approx(np.log(5884.13), abs=1e-8)
        assert fit.beta[0] == pytest.approx(8.680, abs=1e-3)

    def test_logistic_recovery_within_3_se(self):
        rng = np.random.default_rng(42)
        n = 50_000
        x1 = rng.normal(size=n)
        x2 = rng.normal(size=n)
        beta_true = np.array([-2.0, 0.8, -0.5])
        eta = beta_true[0] + beta_true[1] * x1 + beta_true[2] * x2
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        frame = pd.DataFrame({"x1": x1, "x2": x2, "y": y})
        table = make_table(frame, "y")
        fit, _ = glm.fit_model(table, glm.ModelSpec("bernoulli_logit",
                                                    ["x1", "x2"]))
        assert fit.converged
        for b, bt, se in zip(fit.beta, beta_true, fit.beta_se):
            assert abs(b - bt) < 3 * se

    def test_gamma_targets_must_be_positive(self):
        frame = pd.DataFrame({"y": [1.0, -2.0, 3.0]})
        table = make_table(frame, "y", tags={})
        with pytest.raises(ValueError):
            glm.fit_model(table, glm.ModelSpec("gamma_log", []))

    def test_score_equation_after_convergence(self):
        rng = np.random.default_rng(9)
        n = 5_000
        x = rng.normal(size=n)
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-(-1.0 + x)))).astype(float)
        frame = pd.DataFrame({"x": x, "y": y})
        table = make_table(frame, "y")
        spec = glm.ModelSpec("bernoulli_logit", ["x"])
        fit, design = glm.fit_model(table, spec)
        # 5-point central finite differences of the weighted log-likelihood.
        h = 1e-4
        for j in range(fit.beta.size):
            def ll(b):
                v = fit.beta.copy()
                v[j] = b
                return glm.log_likelihood_at(design, y, "bernoulli_logit", v)
            b0 = fit.beta[j]
            fd = (-ll(b0 + 2 * h) + 8 * ll(b0 + h)
                  - 8 * ll(b0 - h) + ll(b0 - 2 * h)) / (12 * h)
            assert abs(fd) < 1e-6

    def test_covariate_scaling_invariance(self):
        rng = np.random.default_rng(10)
        n = 2_000
        x = rng.normal(size=n)
        y = (rng.random(n) < 0.3).astype(float)
        frame = pd.DataFrame({"x": x, "y": y})
        table = make_table(frame, "y")
        spec = glm.ModelSpec("bernoulli_logit", ["x"])
        fit1, _ = glm.fit_model(table, spec)
        c = 42.0
        frame2 = frame.assign(x=frame["x"] * c)
        table2 = make_table(frame2, "y")
        fit2, _ = glm.fit_model(table2, spec)
        assert fit2.beta[1] == pytest.approx(fit1.beta[1] / c, rel=1e-6)
        p1 = fit1.predict(table)
        p2 = fit2.predict(table2)
        np.testing.assert_allclose(p1, p2, rtol=1e-6)

    def test_gamma_fitted_means_positive(self):
        rng = np.random.default_rng(12)
        n = 500
        x = rng.normal(size=n)
        y = rng.gamma(2.0, np.exp(1.0 + 0.5 * x) / 2.0)
        y = np.maximum(y, 1e-3)
        frame = pd.DataFrame({"x": x, "y": y})
        table = make_table(frame, "y")
        fit, _ = glm.fit_model(table, glm.ModelSpec("gamma_log", ["x"]))
        assert np.all(fit.predict(table) > 0)


class TestDeviance:
    def test_gamma_zero_at_exact_fit(self):
        y = np.array([1.0, 2.0, 3.0])
        assert glm.deviance("gamma_log", y, y) == 0.0

    def test_gamma_single_observation_hand_value(self):
        val = glm.deviance("gamma_log", [2.0], [1.0])
        assert val == pytest.approx(2.0 * (1.0 - np.log(2.0)), abs=1e-12)

    def test_nested_deviance_monotone(self):
        rng = np.random.default_rng(14)
        n = 4_000
        x1 = rng.normal(size=n)
        x2 = rng.normal(size=n)
        eta = -1.5 + 0.7 * x1
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        frame = pd.DataFrame({"x1": x1, "x2": x2, "y": y})
        table = make_table(frame, "y")
        fit_r, _ = glm.fit_model(table, glm.ModelSpec("bernoulli_logit", ["x1"]))
        fit_f, _ = glm.fit_model(table, glm.ModelSpec("bernoulli_logit",
                                                      ["x1", "x2"]))
        assert fit_f.deviance <= fit_r.deviance * (1 + 1e-10)


class TestLikelihoodRatio:
    def _fits(self, seed=21, n=3_000):
        rng = np.random.default_rng(seed)
        x1 = rng.normal(size=n)
        x2 = rng.normal(size=n)
        eta = -0.5 + 0.6 * x1 + 0.2 * x2
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        frame = pd.DataFrame({"x1": x1, "x2": x2, "y": y})
        table = make_table(frame, "y")
        full, _ = glm.fit_model(table, glm.ModelSpec("bernoulli_logit",
                                                     ["x1", "x2"]))
        restricted, _ = glm.fit_model(table, glm.ModelSpec("bernoulli_logit",
                                                           ["x1"]))
        return full, restricted

    def test_identical_models_give_unit_p(self):
        full, _ = self._fits()
        stat, df, log10_p = glm.likelihood_ratio_test(full, full)
        assert stat == 0.0 and df == 0 and log10_p == 0.0

    def test_chi2_95th_percentile(self):
        from scipy.stats import chi2
        assert chi2.sf(3.841, 1) == pytest.approx(0.05, abs=5e-4)

    def test_p_matches_incomplete_gamma_oracle(self):
        from scipy.stats import chi2
        rng = np.random.default_rng(30)
        for _ in range(200):
            df = int(rng.integers(1, 30))
            stat = float(rng.uniform(0.01, 80.0))
            assert chi2.sf(stat, df) == pytest.approx(chi2_sf(stat, df),
                                                      abs=1e-6)

    def test_lrt_statistic_and_direction(self):
        full, restricted = self._fits()
        stat, df, log10_p = glm.likelihood_ratio_test(full, restricted)
        assert df == 1
        assert stat >= 0.0
        assert log10_p <= 0.0

    def test_non_nested_raises(self):
        full, restricted = self._fits()
        with pytest.raises(ValueError):
            glm.likelihood_ratio_test(restricted, full)


class TestModelJson:
    def test_round_trip_predictions(self):
        rng = np.random.default_rng(33)
        frame = pd.DataFrame({
            "x": rng.normal(size=200),
            "c": rng.choice(["u", "v"], size=200),
            "y": rng.integers(0, 2, 200).astype(float),
        })
        table = make_table(frame, "y", levels={"c": ["u", "v"]})
        fit, _ = glm.fit_model(table, glm.ModelSpec("bernoulli_logit",
                                                    ["x", "c"]))
        payload = fit.to_jsonable()
        assert set(payload["beta"]) == set(fit.column_names)
        assert payload["n_params"] == fit.n_params

import hashlib
import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from floodkit import scenario
from floodkit.config import DATA_FILES

from .conftest import TINY_SEED, tiny_scenario_config


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class TestGenerate:
    def test_all_files_written(self, tiny_scenario):
        out, scn, summary = tiny_scenario
        for rel in DATA_FILES.values():
            assert (out / "data" / rel).exists(), rel
        for rel in ("true_ann_milre.csv", "true_milre.csv", "true_geo.csv",
                    "true_tails.csv", "true_coefficients.json"):
            assert (out / "truth" / rel).exists(), rel
        assert (out / "scenario.json").exists()
        assert (out / "run_config.json").exists()

    def test_realized_rate_close_to_target(self, tiny_scenario):
        out, scn, summary = tiny_scenario
        rate = summary["realized"]["positive_rate"]
        assert rate == pytest.approx(scn["target_positive_rate"], rel=0.25)

    def test_same_seed_is_byte_identical(self, tmp_path, tiny_scenario):
        out, scn, _ = tiny_scenario
        again = tmp_path / "again"
        scenario.generate(scn, again, seed=TINY_SEED)
        for rel in DATA_FILES.values():
            assert file_digest(out / "data" / rel) == file_digest(
                again / "data" / rel), rel
        assert file_digest(out / "scenario.json") == file_digest(
            again / "scenario.json")

    def test_different_seed_differs(self, tmp_path):
        scn = tiny_scenario_config()
        a = tmp_path / "a"
        scenario.generate(scn, a, seed=1)
        b = tmp_path / "b"
        scenario.generate(scn, b, seed=2)
        assert (file_digest(a / "data" / "rain_grid.csv")
                != file_digest(b / "data" / "rain_grid.csv"))

    def test_claim_years_linked_to_high_ann_milre(self, tiny_scenario):
        out, scn, summary = tiny_scenario
        assert summary["realized"]["median_ann_milre_gap"] > 0.0

    def test_southern_regime_heavier(self, tiny_scenario):
        out, scn, summary = tiny_scenario
        tails = pd.read_csv(out / "truth" / "true_tails.csv")
        south = tails[tails["regime"] == "south"]["xi"].mean()
        north = tails[tails["regime"] == "north"]["xi"].mean()
        assert south > north

    def test_claims_match_policy_flags(self, tiny_scenario):
        out, _, _ = tiny_scenario
        pol = pd.read_csv(out / "data" / "policies.csv")
        claims = pd.read_csv(out / "data" / "claims.csv")
        assert pol["claim_nb"].sum() == len(claims)
        flagged = pol[pol["claim_nb"] == 1]
        keys = set(zip(flagged["policy_id"], flagged["year"]))
        for row in claims.itertuples():
            year = int(row.flood_date[:4])
            assert (row.policy_id, year) in keys

    def test_flood_dates_on_year_peak_day(self, tiny_scenario):
        out, _, _ = tiny_scenario
        claims = pd.read_csv(out / "data" / "claims.csv")
        milre_truth = pd.read_csv(out / "truth" / "true_milre.csv")
        merged = claims.merge(milre_truth, on=["building_id", "flood_date"])
        assert len(merged) == len(claims)
        # Peak-day events rank very high against local history.
        assert merged["milre"].min() > 0.8

    def test_infeasible_rate_raises(self, tmp_path):
        scn = tiny_scenario_config()
        # A pathological coefficient pushes every linear predictor so low
        # that even the largest admissible intercept cannot reach the target.
        scn["occurrence_coefficients"]["ann_milre"] = -5000.0
        with pytest.raises(scenario.ScenarioError, match="unattainable"):
            scenario.generate(scn, tmp_path / "x", seed=3)

    def test_out_of_range_target_rate_rejected(self, tmp_path):
        scn = tiny_scenario_config()
        scn["target_positive_rate"] = 0.2
        with pytest.raises(scenario.ScenarioError, match="0, 0.05"):
            scenario.generate(scn, tmp_path / "y", seed=3)

    def test_out_of_range_shape_rejected(self, tmp_path):
        scn = tiny_scenario_config()
        scn["regimes"]["south"]["xi"] = 1.5
        with pytest.raises(scenario.ScenarioError, match="outside"):
            scenario.generate(scn, tmp_path / "z", seed=3)


class TestOracleTruth:
    def test_loads_after_generate(self, tiny_scenario):
        out, scn, _ = tiny_scenario
        truth = scenario.oracle_truth(scn, out)
        assert set(truth["coefficients"]) == {"occurrence", "severity"}
        n_years = scn["portfolio_years"]["n"]
        assert len(truth["ann_milre"]) == 400 * n_years
        assert truth["geo"]["wctrii"].isin([str(i) for i in range(1, 10)]).all()

    def test_config_mismatch_raises(self, tiny_scenario):
        out, scn, _ = tiny_scenario
        changed = json.loads(json.dumps(scn))
        changed["n_buildings"] = 500
        with pytest.raises(scenario.ScenarioError, match="does not match"):
            scenario.oracle_truth(changed, out)

    def test_missing_scenario_raises(self, tmp_path):
        with pytest.raises(scenario.ScenarioError, match="generate first"):
            scenario.oracle_truth(tiny_scenario_config(), tmp_path)


class TestOraclePrimitives:
    def test_oracle_accum_matches_direct(self):
        rng = np.random.default_rng(5)
        x = np.round(rng.gamma(0.4, 8.0, 500), 3)
        for nd in (1, 5, 30):
            got = scenario._oracle_accum(x, nd)
            ref = [np.sum(x[i:i + nd]) for i in range(x.size - nd + 1)]
            np.testing.assert_array_equal(got, np.array(ref))

    def test_rank_prob_bounds(self):
        rng = np.random.default_rng(6)
        sample = rng.normal(size=50)
        probs = scenario._oracle_rank_prob(sample, sample)
        assert probs.min() == pytest.approx(1.0 / 50.0)
        assert probs.max() == 1.0

    def test_calibrate_intercept_hits_target(self):
        rng = np.random.default_rng(7)
        eta = rng.normal(0, 2, 20_000)
        b0 = scenario._calibrate_intercept(eta, 0.0022)
        rate = float(np.mean(1 / (1 + np.exp(-(b0 + eta)))))
        assert rate == pytest.approx(0.0022, rel=1e-6)

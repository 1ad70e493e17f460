import pytest

from floodkit import config as cfg_mod
from floodkit import scenario

TINY_SEED = 777


def tiny_scenario_config():
    """A miniature world: fast enough for unit tests, rich enough to fit.

    The grid is dense relative to the building region so buildings spread
    over several nearest-point sets and the annual indicator varies in
    space, not only across years.
    """
    scn = cfg_mod.scenario_defaults("sweep")
    scn["grid"] = {"n_lat": 12, "n_lon": 12, "lat_min": 45.5, "lat_max": 46.5,
                   "lon_min": 2.0, "lon_max": 3.0}
    scn["years"] = {"start": 2015, "n": 6}
    scn["portfolio_years"] = {"start": 2015, "n": 6}
    scn["n_buildings"] = 400
    scn["n_municipalities"] = 10
    scn["region_km"] = 20.0
    scn["n_rivers"] = 2
    scn["target_positive_rate"] = 0.03
    return scn


@pytest.fixture(scope="session")
def tiny_scenario(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_scenario")
    scn = tiny_scenario_config()
    summary = scenario.generate(scn, out, seed=TINY_SEED)
    return out, scn, summary


@pytest.fixture(scope="session")
def tiny_features(tiny_scenario):
    from floodkit import features as features_mod
    from floodkit.config import load_run_config

    out, scn, summary = tiny_scenario
    cfg = load_run_config(out / "run_config.json")
    portfolio, bundle, tail_frame, building_tails, geo_frame = (
        features_mod.run_features(cfg))
    return {
        "out": out,
        "cfg": cfg,
        "portfolio": portfolio,
        "bundle": bundle,
        "tails": tail_frame,
        "building_tails": building_tails,
        "geo": geo_frame,
        "summary": summary,
    }

"""Run configuration: one JSON file drives every pipeline command.

Paths are resolved relative to the config file location. The seed is
mandatory; everything else has documented defaults. CLI flags override
config values (flags win).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Invalid or incomplete run configuration (CLI exit code 2)."""


DEFAULT_WINDOWS = [1, 3, 5, 7, 10, 30]

DEFAULT_GPD = {
    "threshold_quantile": 0.95,
    "wet_day_mm": 1.0,
    "min_exceedances": 30,
    "cluster_k": 5,
}

DEFAULT_WCTRII = {"near_m": 100.0, "far_m": 500.0, "demote_above_m": 10.0}

DEFAULT_RADII = {
    "slope_m": 50.0,
    "impervious_m": 200.0,
    "density_m": 50.0,
    "soil_m": 200.0,
}

INS_TERMS = ["nb_rooms", "mov_assets", "prec_obj", "amenity_elmt", "outbuilg_size"]
CLIMATE_TERMS = ["tri_overflow", "tri_runoff", "ppri", "hydro_zone",
                 "clim_region", "nb_catnat"]
BUILDING_TERMS = [
    "living_surface", "house_value", "construction_period", "nb_floors",
    "wall_material", "outbuilding_surface", "pres_adjoining", "length_partywall",
    "terrain_maxslope_50m", "nb_building_50m", "distance_watercourse",
    "altitude_diffwatercourse", "soil_type", "impervious_surface", "wctrii",
]


def default_layer_terms(task):
    """Nested term lists per layer for one task (occurrence or severity)."""
    rain = "milre" if task == "severity" else "ann_milre"
    rain_terms = [rain, "tail_weight_cluster"]
    if task == "severity":
        interactions = [f"mov_assets:{rain}", f"wctrii:{rain}"]
    else:
        interactions = [f"mov_assets:{rain}", f"{rain}:nb_catnat", f"wctrii:{rain}"]
    return {
        "ins": list(INS_TERMS),
        "ins+c": INS_TERMS + CLIMATE_TERMS,
        "ins+r": INS_TERMS + CLIMATE_TERMS + rain_terms,
        "all": INS_TERMS + CLIMATE_TERMS + rain_terms + BUILDING_TERMS + interactions,
    }


DEFAULT_SCENARIO = {
    "profile": "ci",
    "grid": {
        "n_lat": 50, "n_lon": 50,
        "lat_min": 42.0, "lat_max": 51.0,
        "lon_min": -4.0, "lon_max": 8.0,
    },
    "years": {"start": 2003, "n": 20},
    "portfolio_years": {"start": 2013, "n": 10},
    "n_buildings": 10_000,
    "n_municipalities": 100,
    "region_km": 80.0,
    "raster_cell_m": 50.0,
    "n_rivers": 4,
    "target_positive_rate": 0.0022,
    "regimes": {
        "south": {"xi": 0.40, "sigma": 8.0},
        "north": {"xi": 0.05, "sigma": 7.0},
    },
    "wet_prob": {"base": 0.35, "amplitude": 0.4},
    "seasonal_base_mm": {"base": 1.5, "amplitude": 0.3},
    "occurrence_coefficients": {
        "intercept": None,  # calibrated against the target positive rate
        "ann_milre": 6.0,
        "wctrii_norm": 0.9,
        "nb_building_50m_norm": -0.6,
        "amenity_elmt_pres": 0.9,
    },
    "severity_coefficients": {
        "intercept": 8.2,
        "milre_centered": 40.0,
        "milre_center": 0.97,
        "log_mov_assets": 0.35,
        "wctrii_minus1": 0.12,
        "shape": 1.4,
    },
    "severity_floor_eur": 5.0,
}

DESK_MAX_OVERRIDES = {
    "profile": "desk_max",
    "years": {"start": 1950, "n": 75},
    "portfolio_years": {"start": 2013, "n": 10},
}

# Reduced profile for multi-seed sweeps.
SWEEP_OVERRIDES = {
    "profile": "sweep",
    "grid": {"n_lat": 12, "n_lon": 12},
    "years": {"start": 2013, "n": 10},
    "portfolio_years": {"start": 2017, "n": 6},
    "n_buildings": 1200,
    "n_municipalities": 24,
    "region_km": 40.0,
    "n_rivers": 3,
    "target_positive_rate": 0.02,
}

DATA_FILES = {
    "rain_grid": "rain_grid.csv",
    "policies": "policies.csv",
    "claims": "claims.csv",
    "buildings": "buildings.csv",
    "hazard": "hazard.csv",
    "watercourses": "watercourses.csv",
    "elevation": "elevation.asc",
    "landcover": "landcover.asc",
    "soil": "soil.asc",
}


@dataclass
class RunConfig:
    seed: int
    out_dir: Path
    paths: dict
    windows: list = field(default_factory=lambda: list(DEFAULT_WINDOWS))
    gpd: dict = field(default_factory=lambda: dict(DEFAULT_GPD))
    wctrii: dict = field(default_factory=lambda: dict(DEFAULT_WCTRII))
    radii: dict = field(default_factory=lambda: dict(DEFAULT_RADII))
    folds: int = 5
    milre_binned: bool = False
    layers: dict = field(default_factory=dict)
    threads: int = 0  # 0 = auto
    scenario: dict = field(default_factory=dict)
    claim_floor_eur: float = 5.0
    projection: dict = field(default_factory=dict)  # lat0/lon0 of the local plane

    def layer_terms(self, task, layer):
        configured = self.layers.get(task, {})
        if layer in configured:
            return list(configured[layer])
        return default_layer_terms(task)[layer]

    def path(self, key):
        try:
            return Path(self.paths[key])
        except KeyError:
            raise ConfigError(f"run config is missing path for {key!r}")


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def scenario_defaults(profile="ci"):
    if profile == "ci":
        return copy.deepcopy(DEFAULT_SCENARIO)
    if profile == "desk_max":
        return _merge(DEFAULT_SCENARIO, DESK_MAX_OVERRIDES)
    if profile == "sweep":
        return _merge(DEFAULT_SCENARIO, SWEEP_OVERRIDES)
    raise ConfigError(f"unknown scenario profile {profile!r}")


def load_run_config(path):
    """Parse and validate run_config.json."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})")

    if "seed" not in raw:
        raise ConfigError(f"{path}: required field 'seed' is missing")
    try:
        seed = int(raw["seed"])
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: 'seed' must be an integer")

    base = path.parent
    out_dir = Path(raw.get("out_dir", "out"))
    if not out_dir.is_absolute():
        out_dir = base / out_dir

    paths = {}
    for key, rel in raw.get("paths", {}).items():
        p = Path(rel)
        paths[key] = p if p.is_absolute() else base / p

    scenario = raw.get("scenario", {})
    profile = scenario.get("profile", "ci")
    scenario = _merge(scenario_defaults(profile), scenario)

    cfg = RunConfig(
        seed=seed,
        out_dir=out_dir,
        paths=paths,
        windows=list(raw.get("windows", DEFAULT_WINDOWS)),
        gpd=_merge(DEFAULT_GPD, raw.get("gpd", {})),
        wctrii=_merge(DEFAULT_WCTRII, raw.get("wctrii", {})),
        radii=_merge(DEFAULT_RADII, raw.get("radii", {})),
        folds=int(raw.get("folds", 5)),
        milre_binned=bool(raw.get("milre_binned", False)),
        layers=raw.get("layers", {}),
        threads=int(raw.get("threads", 0)),
        scenario=scenario,
        claim_floor_eur=float(raw.get("claim_floor_eur", 5.0)),
        projection=raw.get("projection", {}),
    )
    if cfg.folds < 2:
        raise ConfigError("folds must be >= 2")
    if any(int(w) < 1 for w in cfg.windows):
        raise ConfigError("accumulation windows must be >= 1 day")
    return cfg


def write_run_config(cfg_dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg_dict, fh, indent=2, sort_keys=True)
        fh.write("\n")

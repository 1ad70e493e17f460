"""Feature-step orchestration: rainfall indicators, tail scores, geometry.

Reads the ingested inputs, runs the three feature engines, and persists the
documented artifacts (indicators.csv, tail_scores.csv, geo_features.csv plus
the per-building tail-cluster join table building_tails.csv).
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from . import geo as geo_mod
from . import rainfall, tails
from .config import RunConfig
from .data_model import ingest_portfolio, ingest_rain_grid

log = logging.getLogger(__name__)


def load_watercourses(path):
    frame = pd.read_csv(path, dtype={"watercourse_id": str},
                        float_precision="round_trip")
    polylines = []
    for rid, group in frame.groupby("watercourse_id", sort=True):
        group = group.sort_values("vertex")
        polylines.append((rid, list(zip(group["x_m"], group["y_m"],
                                        group["bed_alt_m"]))))
    return geo_mod.WatercourseLayer.from_polylines(polylines)


def compute_geo_features(buildings_frame, proj, watercourses, elevation,
                         landcover, soil, radii, wctrii_cfg, hazard_frame):
    """Per-building geometry features (planar coordinates via `proj`)."""
    bx, by = proj.to_xy(buildings_frame["lat"].to_numpy(),
                        buildings_frame["lon"].to_numpy())
    n_b = len(buildings_frame)
    index = geo_mod.build_neighbor_index(bx, by)
    xy = np.column_stack([bx, by])

    tri = hazard_frame.set_index("building_id")["tri_overflow"]
    tri = tri.reindex(buildings_frame["building_id"]).fillna("none").to_numpy()

    dist = np.empty(n_b)
    altdiff = np.empty(n_b)
    slope = np.empty(n_b)
    imperv = np.empty(n_b)
    soil_code = np.empty(n_b, dtype=int)
    nb = np.empty(n_b, dtype=int)
    wct = np.empty(n_b, dtype=int)
    for i in range(n_b):
        x, y = bx[i], by[i]
        b_elev = elevation.sample(x, y)
        dist[i], altdiff[i] = geo_mod.distance_to_watercourse(
            x, y, watercourses, b_elev)
        slope[i] = geo_mod.max_slope_buffer(x, y, elevation, radii["slope_m"])
        imperv[i] = geo_mod.impervious_fraction(x, y, landcover,
                                                radii["impervious_m"])
        soil_code[i] = geo_mod.majority_class_buffer(x, y, soil, radii["soil_m"])
        nb[i] = geo_mod.count_buildings_radius(index, xy, i, radii["density_m"])
        wct[i] = geo_mod.wctrii(tri[i], dist[i], altdiff[i], wctrii_cfg)

    return pd.DataFrame({
        "building_id": buildings_frame["building_id"].to_numpy(),
        "distance_watercourse": dist,
        "altitude_diffwatercourse": altdiff,
        "terrain_maxslope_50m": slope,
        "nb_building_50m": nb,
        "impervious_surface": imperv,
        "soil_type": [geo_mod.SOIL_CODES.get(c, str(c)) for c in soil_code],
        "wctrii": wct.astype(str),
    })


def run_features(cfg: RunConfig):
    """Full feature step; returns the in-memory frames and writes artifacts."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    grid = ingest_rain_grid(cfg.path("rain_grid"))
    portfolio = ingest_portfolio(
        cfg.path("policies"), cfg.path("claims"), cfg.path("buildings"),
        cfg.path("hazard"), claim_floor_eur=cfg.claim_floor_eur)

    log.info("features: rainfall indicators over %d windows", len(cfg.windows))
    bundle = rainfall.compute_indicators(
        grid, portfolio.buildings_frame, portfolio.policies_frame,
        portfolio.claims_frame, windows=tuple(int(w) for w in cfg.windows))

    log.info("features: tail fits on %d grid points", grid.n_points)
    fits, scores, clusters = tails.fit_grid_tails(
        grid,
        quantile=cfg.gpd["threshold_quantile"],
        wet_day_mm=cfg.gpd["wet_day_mm"],
        min_exceedances=cfg.gpd["min_exceedances"],
        k=cfg.gpd["cluster_k"],
    )
    tail_frame = pd.DataFrame({
        "point_id": [f.point_id for f in fits],
        "threshold": [f.threshold_u for f in fits],
        "n_exc": [f.n_exceedances for f in fits],
        "xi": [f.shape_xi for f in fits],
        "sigma": [f.scale_sigma for f in fits],
        "score": [s.score for s in scores],
        "cluster_id": [c.cluster_id for c in clusters],
    })

    # Nearest fitted point carries the tail cluster to each building.
    fitted_rows = {pid: i for i, pid in enumerate(tail_frame["point_id"])}
    b_tail = []
    for bid, rows in bundle.nearest_rows.items():
        pid = next((grid.point_ids[r] for r in rows
                    if grid.point_ids[r] in fitted_rows),
                   tail_frame["point_id"].iloc[0])
        row = tail_frame.iloc[fitted_rows[pid]]
        b_tail.append((bid, pid, float(row["score"]), int(row["cluster_id"])))
    building_tails = pd.DataFrame(
        b_tail, columns=["building_id", "point_id", "score", "cluster_id"])
    building_tails["tail_weight_cluster"] = "c" + building_tails["cluster_id"].astype(str)

    if not cfg.projection:
        raise ValueError("run config must define the local projection (lat0/lon0)")
    proj = geo_mod.LocalProjection(**cfg.projection)
    geo_frame = compute_geo_features(
        portfolio.buildings_frame, proj,
        load_watercourses(cfg.path("watercourses")),
        geo_mod.Raster.load(cfg.path("elevation")),
        geo_mod.Raster.load(cfg.path("landcover")),
        geo_mod.Raster.load(cfg.path("soil")),
        cfg.radii, cfg.wctrii, portfolio.hazard_frame)

    bundle.long_frame.to_csv(out / "indicators.csv", index=False,
                             lineterminator="\n")
    tail_frame.to_csv(out / "tail_scores.csv", index=False, lineterminator="\n")
    building_tails.to_csv(out / "building_tails.csv", index=False,
                          lineterminator="\n")
    geo_frame.to_csv(out / "geo_features.csv", index=False, lineterminator="\n")
    log.info("features: wrote %d indicator rows, %d tail fits, %d geo rows",
             len(bundle.long_frame), len(tail_frame), len(geo_frame))
    return portfolio, bundle, tail_frame, building_tails, geo_frame


def load_feature_artifacts(out_dir):
    """Rebuild the assembly inputs from the persisted feature artifacts."""
    out = Path(out_dir)
    long_frame = pd.read_csv(out / "indicators.csv",
                             dtype={"building_id": str, "year_or_date": str},
                             float_precision="round_trip")
    is_date = long_frame["year_or_date"].str.contains("-")
    ann = (long_frame[~is_date]
           .drop_duplicates(["building_id", "year_or_date"])
           .assign(year=lambda f: f["year_or_date"].astype(int))
           .rename(columns={"milre_or_annmilre": "ann_milre"})
           [["building_id", "year", "ann_milre"]])
    mil = (long_frame[is_date]
           .drop_duplicates(["building_id", "year_or_date"])
           .rename(columns={"year_or_date": "flood_date",
                            "milre_or_annmilre": "milre"})
           [["building_id", "flood_date", "milre"]])
    building_tails = pd.read_csv(out / "building_tails.csv",
                                 dtype={"building_id": str},
                                 float_precision="round_trip")
    geo_frame = pd.read_csv(out / "geo_features.csv",
                            dtype={"building_id": str, "wctrii": str,
                                   "soil_type": str},
                            float_precision="round_trip")
    return ann, mil, building_tails, geo_frame

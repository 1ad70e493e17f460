"""Domain entities, file ingestion with validation, and feature assembly.

All inputs are flat CSV files with documented headers (see External file
formats in the README). Ingested tables are immutable after validation and
safe to share read-only across workers. Ingestion fails loudly: malformed
rows are reported with their line number, referential problems with the
offending identifiers.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import date as Date

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

TRI_LEVELS = ["none", "low", "medium", "high"]
PPRI_LEVELS = ["none", "very_low", "low", "moderate", "medium", "high", "very_high"]
PRES_ABS = ["abs", "pres"]
MAX_HYDRO_ZONES = 24
MAX_CLIM_REGIONS = 10
DEFAULT_CLAIM_FLOOR_EUR = 5.0

RAIN_GRID_COLUMNS = ["point_id", "lat", "lon", "date", "precip_mm"]
POLICY_COLUMNS = [
    "policy_id", "building_id", "year", "exposure", "nb_rooms", "mov_assets",
    "prec_obj", "amenity_elmt", "outbuilg_size", "claim_nb",
]
CLAIM_COLUMNS = ["policy_id", "building_id", "flood_date", "amount"]
BUILDING_COLUMNS = [
    "building_id", "lat", "lon", "municipality_code", "living_surface",
    "house_value", "construction_period", "nb_floors", "wall_material",
    "outbuilding_surface", "pres_adjoining", "length_partywall",
]
HAZARD_COLUMNS = [
    "building_id", "tri_overflow", "tri_runoff", "ppri", "hydro_zone",
    "clim_region", "nb_catnat",
]


class IngestError(ValueError):
    """Raised on malformed files or invariant violations during ingestion."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Building:
    building_id: str
    lat: float
    lon: float
    municipality_code: str
    living_surface: float
    house_value: float
    construction_period: str
    nb_floors: int
    wall_material: str
    outbuilding_surface: float
    pres_adjoining: str
    length_partywall: float


@dataclass(frozen=True)
class HazardContext:
    tri_overflow: str = "none"
    tri_runoff: str = "none"
    ppri: str = "none"
    hydro_zone: str = "none"
    clim_region: str = "none"
    nb_catnat: int = 0


@dataclass(frozen=True)
class PolicyYear:
    policy_id: str
    building_id: str
    year: int
    exposure: float
    nb_rooms: int
    mov_assets: float
    prec_obj: float
    amenity_elmt: str
    outbuilg_size: str
    claim_nb: int


@dataclass(frozen=True)
class ClaimRecord:
    policy_id: str
    building_id: str
    flood_date: Date
    amount: float


@dataclass
class RainGridPoint:
    point_id: str
    lat: float
    lon: float
    series: dict  # calendar date -> precipitation depth (mm/day)


class RainGrid:
    """Gridded daily precipitation on a shared date axis.

    Gaps (dates missing at a point) are stored as NaN and counted; readers
    that need contiguous windows treat NaN as invalidating.
    """

    def __init__(self, point_ids, lat, lon, dates, matrix, n_gaps=0):
        self.point_ids = list(point_ids)
        self.lat = np.asarray(lat, dtype=float)
        self.lon = np.asarray(lon, dtype=float)
        self.dates = np.asarray(dates, dtype="datetime64[D]")
        self.matrix = np.asarray(matrix, dtype=float)
        self.n_gaps = int(n_gaps)
        self._index = {pid: i for i, pid in enumerate(self.point_ids)}
        if self.matrix.shape != (len(self.point_ids), self.dates.size):
            raise ValueError("rain grid matrix shape mismatch")

    @property
    def n_points(self):
        return len(self.point_ids)

    @property
    def n_days(self):
        return self.dates.size

    def row(self, point_id):
        return self.matrix[self._index[point_id]]

    def point(self, point_id):
        i = self._index[point_id]
        values = self.matrix[i]
        ok = np.isfinite(values)
        series = dict(zip(self.dates[ok].astype(Date).tolist(), values[ok].tolist()))
        return RainGridPoint(point_id, float(self.lat[i]), float(self.lon[i]), series)

    def date_pos(self, when):
        d = np.datetime64(when, "D")
        pos = int(np.searchsorted(self.dates, d))
        if pos >= self.dates.size or self.dates[pos] != d:
            raise KeyError(f"date {when} not in the rain grid")
        return pos

    def summary(self):
        return {
            "n_points": self.n_points,
            "date_min": str(self.dates[0]),
            "date_max": str(self.dates[-1]),
            "n_days": self.n_days,
            "n_gaps": self.n_gaps,
        }


# ---------------------------------------------------------------------------
# Rain grid ingestion
# ---------------------------------------------------------------------------

def _scan_rain_grid_for_error(path):
    """Slow per-row scan used only after the fast parser failed."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RAIN_GRID_COLUMNS:
            raise IngestError(
                f"{path}: header {header} does not match {RAIN_GRID_COLUMNS}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise IngestError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                float(row[1]); float(row[2]); float(row[4])
            except ValueError:
                raise IngestError(f"{path}:{lineno}: malformed numeric field in {row}")
            try:
                Date.fromisoformat(row[3])
            except ValueError:
                raise IngestError(f"{path}:{lineno}: malformed date {row[3]!r}")
    raise IngestError(f"{path}: parse failed but no malformed row found on rescan")


def ingest_rain_grid(path, chunksize=2_000_000):
    """Parse and validate a rain-grid CSV into a RainGrid.

    Points keep first-appearance order; the date axis is the sorted union of
    all dates. Negative or non-finite precipitation and malformed rows raise
    with the offending line number.
    """
    pid_codes, date_vals, precip_vals = [], [], []
    pid_table = {}          # point_id -> global code
    pid_order = []
    pid_latlon = []
    offset = 0
    try:
        reader = pd.read_csv(
            path, chunksize=chunksize, float_precision="round_trip",
            dtype={"point_id": str, "lat": float, "lon": float,
                   "date": str, "precip_mm": float},
        )
        first = True
        for chunk in reader:
            if first:
                if list(chunk.columns) != RAIN_GRID_COLUMNS:
                    raise IngestError(
                        f"{path}: header {list(chunk.columns)} does not match "
                        f"{RAIN_GRID_COLUMNS}"
                    )
                first = False
            precip = chunk["precip_mm"].to_numpy()
            bad = ~np.isfinite(precip) | (precip < 0)
            if bad.any():
                line = offset + int(np.flatnonzero(bad)[0]) + 2
                raise IngestError(
                    f"{path}:{line}: invalid precipitation value "
                    f"{precip[np.flatnonzero(bad)[0]]!r} (must be finite and >= 0)"
                )
            dts = pd.to_datetime(chunk["date"], format="%Y-%m-%d", errors="coerce")
            if dts.isna().any():
                line = offset + int(np.flatnonzero(dts.isna().to_numpy())[0]) + 2
                raise IngestError(f"{path}:{line}: malformed date")

            codes, uniques = pd.factorize(chunk["point_id"].to_numpy())
            lats = chunk["lat"].to_numpy()
            lons = chunk["lon"].to_numpy()
            _, first_rows = np.unique(codes, return_index=True)
            gcode = np.empty(len(uniques), dtype=np.int32)
            for k, pid in enumerate(uniques):
                if pid not in pid_table:
                    pid_table[pid] = len(pid_order)
                    pid_order.append(pid)
                    fr = int(first_rows[k])
                    pid_latlon.append((lats[fr], lons[fr]))
                gcode[k] = pid_table[pid]
            pid_codes.append(gcode[codes])
            date_vals.append(dts.to_numpy().astype("datetime64[D]"))
            precip_vals.append(precip)
            offset += len(chunk)
    except (pd.errors.ParserError, ValueError) as exc:
        if isinstance(exc, IngestError):
            raise
        log.warning("fast parse of %s failed (%s); locating bad row", path, exc)
        _scan_rain_grid_for_error(path)

    if not pid_codes:
        raise IngestError(f"{path}: no data rows")
    pids = np.concatenate(pid_codes)
    dates = np.concatenate(date_vals)
    precip = np.concatenate(precip_vals)

    latlon = np.asarray(pid_latlon, dtype=float)
    if np.any(np.abs(latlon[:, 0]) > 90) or np.any(np.abs(latlon[:, 1]) > 180):
        bad_pid = pid_order[int(np.flatnonzero(
            (np.abs(latlon[:, 0]) > 90) | (np.abs(latlon[:, 1]) > 180))[0])]
        raise IngestError(f"{path}: point {bad_pid!r} has lat/lon out of range")

    axis = np.unique(dates)
    date_code = np.searchsorted(axis, dates)
    n_pts, n_days = len(pid_order), axis.size
    matrix = np.full((n_pts, n_days), np.nan)
    flat = pids.astype(np.int64) * n_days + date_code
    if np.unique(flat).size != flat.size:
        dup = np.flatnonzero(np.bincount(flat, minlength=n_pts * n_days) > 1)[0]
        raise IngestError(
            f"{path}: duplicate date {axis[dup % n_days]} for point "
            f"{pid_order[int(dup // n_days)]!r}"
        )
    matrix.ravel()[flat] = precip
    n_gaps = int(n_pts * n_days - flat.size)
    if n_gaps:
        log.warning("%s: %d gap(s) in the date axis flagged", path, n_gaps)

    grid = RainGrid(pid_order, latlon[:, 0], latlon[:, 1], axis, matrix, n_gaps)
    info = grid.summary()
    log.info("rain grid %s: %d points, %s..%s (%d days, %d gaps)", path,
             info["n_points"], info["date_min"], info["date_max"],
             info["n_days"], info["n_gaps"])
    return grid


def write_rain_grid(grid: RainGrid, path):
    """Persist a RainGrid in the documented long CSV format."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(RAIN_GRID_COLUMNS) + "\n")
        for i, pid in enumerate(grid.point_ids):
            values = grid.matrix[i]
            ok = np.isfinite(values)
            frame = pd.DataFrame({
                "point_id": pid,
                "lat": repr(float(grid.lat[i])),
                "lon": repr(float(grid.lon[i])),
                "date": np.datetime_as_string(grid.dates[ok], unit="D"),
                "precip_mm": values[ok],
            })
            frame.to_csv(fh, header=False, index=False, lineterminator="\n")


# ---------------------------------------------------------------------------
# Portfolio ingestion
# ---------------------------------------------------------------------------

def _read_table(path, columns):
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise IngestError(f"{path}: {exc}")
    if list(frame.columns) != columns:
        raise IngestError(f"{path}: header {list(frame.columns)} does not match {columns}")
    return frame


def _to_float(frame, col, path, *, allow_blank=False, default=np.nan):
    raw = frame[col].to_numpy()
    blank = raw == ""
    try:
        vals = np.where(blank, "nan", raw).astype(float)
    except ValueError:
        bad = next(v for v in raw if v != "" and not _is_float(v))
        line = int(np.flatnonzero(raw == bad)[0]) + 2
        raise IngestError(f"{path}:{line}: malformed numeric value {bad!r} in {col!r}")
    if blank.any():
        if not allow_blank:
            line = int(np.flatnonzero(blank)[0]) + 2
            raise IngestError(f"{path}:{line}: blank value in required column {col!r}")
        vals = np.where(blank, default, vals)
    return vals


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _check_levels(frame, col, allowed, path):
    vals = frame[col].to_numpy()
    bad = ~np.isin(vals, allowed)
    if bad.any():
        line = int(np.flatnonzero(bad)[0]) + 2
        raise IngestError(
            f"{path}:{line}: invalid {col!r} value {vals[np.flatnonzero(bad)[0]]!r}; "
            f"allowed: {allowed}"
        )


@dataclass
class Portfolio:
    """Validated, cross-linked portfolio tables.

    Exposes both typed record lists (the domain contract) and the underlying
    frames (used by feature assembly). Immutable by convention once built.
    """

    policy_years: list
    claims: list
    buildings: list
    hazard: dict
    policies_frame: pd.DataFrame = field(repr=False, default=None)
    claims_frame: pd.DataFrame = field(repr=False, default=None)
    buildings_frame: pd.DataFrame = field(repr=False, default=None)
    hazard_frame: pd.DataFrame = field(repr=False, default=None)

    @property
    def positive_rate(self):
        y = self.policies_frame["claim_nb"].to_numpy()
        return float(y.mean())


def ingest_portfolio(policies_path, claims_path, buildings_path, hazard_path,
                     claim_floor_eur=DEFAULT_CLAIM_FLOOR_EUR):
    """Load and cross-validate the four portfolio files.

    Referential integrity: every policy-year references an existing building;
    every claim references an existing policy-year (by policy_id and flood
    year) flagged with claim_nb=1. Claims below the configured amount floor
    are rejected. Missing hazard rows default to explicit "none" levels.
    """
    bframe = _read_table(buildings_path, BUILDING_COLUMNS)
    pframe = _read_table(policies_path, POLICY_COLUMNS)
    cframe = _read_table(claims_path, CLAIM_COLUMNS)
    hframe = _read_table(hazard_path, HAZARD_COLUMNS)

    # Buildings.
    for col in ("lat", "lon", "living_surface", "house_value", "nb_floors",
                "outbuilding_surface", "length_partywall"):
        bframe[col] = _to_float(bframe, col, buildings_path)
    if bframe["building_id"].duplicated().any():
        dup = bframe.loc[bframe["building_id"].duplicated(), "building_id"].iloc[0]
        raise IngestError(f"{buildings_path}: duplicate building_id {dup!r}")
    if (bframe["living_surface"] <= 0).any():
        bad = bframe.loc[bframe["living_surface"] <= 0, "building_id"].iloc[0]
        raise IngestError(f"{buildings_path}: building {bad!r} has living_surface <= 0")
    for col in ("nb_floors", "outbuilding_surface", "length_partywall"):
        if (bframe[col] < 0).any():
            bad = bframe.loc[bframe[col] < 0, "building_id"].iloc[0]
            raise IngestError(f"{buildings_path}: building {bad!r} has {col} < 0")
    _check_levels(bframe, "pres_adjoining", PRES_ABS, buildings_path)
    bframe["nb_floors"] = bframe["nb_floors"].astype(int)

    # Hazard context.
    hframe["nb_catnat"] = _to_float(hframe, "nb_catnat", hazard_path).astype(int)
    if (hframe["nb_catnat"] < 0).any():
        raise IngestError(f"{hazard_path}: nb_catnat must be >= 0")
    _check_levels(hframe, "tri_overflow", TRI_LEVELS, hazard_path)
    _check_levels(hframe, "tri_runoff", TRI_LEVELS, hazard_path)
    _check_levels(hframe, "ppri", PPRI_LEVELS, hazard_path)
    for col, cap in (("hydro_zone", MAX_HYDRO_ZONES), ("clim_region", MAX_CLIM_REGIONS)):
        n_levels = hframe[col].nunique()
        if n_levels > cap:
            raise IngestError(f"{hazard_path}: {col} has {n_levels} levels (max {cap})")
    unknown_h = set(hframe["building_id"]) - set(bframe["building_id"])
    if unknown_h:
        raise IngestError(
            f"{hazard_path}: hazard rows reference unknown buildings "
            f"{sorted(unknown_h)[:10]}"
        )

    # Policy-years.
    pframe["year"] = _to_float(pframe, "year", policies_path).astype(int)
    pframe["exposure"] = _to_float(pframe, "exposure", policies_path,
                                   allow_blank=True, default=1.0)
    for col in ("nb_rooms", "mov_assets", "prec_obj"):
        pframe[col] = _to_float(pframe, col, policies_path)
    pframe["claim_nb"] = _to_float(pframe, "claim_nb", policies_path).astype(int)
    pframe["nb_rooms"] = pframe["nb_rooms"].astype(int)
    _check_levels(pframe, "amenity_elmt", PRES_ABS, policies_path)
    _check_levels(pframe, "outbuilg_size", PRES_ABS, policies_path)
    if not np.isin(pframe["claim_nb"].to_numpy(), (0, 1)).all():
        raise IngestError(f"{policies_path}: claim_nb must be 0 or 1")
    expo = pframe["exposure"].to_numpy()
    if ((expo <= 0) | (expo > 1)).any():
        bad = pframe.loc[(expo <= 0) | (expo > 1), "policy_id"].iloc[0]
        raise IngestError(f"{policies_path}: policy {bad!r} has exposure outside (0, 1]")
    dangling_b = set(pframe["building_id"]) - set(bframe["building_id"])
    if dangling_b:
        raise IngestError(
            f"{policies_path}: policies reference unknown buildings "
            f"{sorted(dangling_b)[:10]}"
        )
    key = pframe["policy_id"] + "@" + pframe["year"].astype(str)
    if key.duplicated().any():
        raise IngestError(
            f"{policies_path}: duplicate (policy_id, year) "
            f"{key[key.duplicated()].iloc[0]!r}"
        )

    # Claims.
    cframe["amount"] = _to_float(cframe, "amount", claims_path)
    fdates = pd.to_datetime(cframe["flood_date"], format="%Y-%m-%d", errors="coerce")
    if fdates.isna().any():
        line = int(np.flatnonzero(fdates.isna().to_numpy())[0]) + 2
        raise IngestError(f"{claims_path}:{line}: malformed flood_date")
    if (cframe["amount"] <= 0).any():
        raise IngestError(f"{claims_path}: claim amounts must be > 0")
    low = cframe["amount"] < claim_floor_eur
    if low.any():
        raise IngestError(
            f"{claims_path}: {int(low.sum())} claim(s) below the "
            f"{claim_floor_eur} EUR floor (first at line "
            f"{int(np.flatnonzero(low.to_numpy())[0]) + 2})"
        )
    cframe["flood_year"] = fdates.dt.year
    ckey = cframe["policy_id"] + "@" + cframe["flood_year"].astype(str)
    missing = ~ckey.isin(set(key))
    if missing.any():
        raise IngestError(
            f"{claims_path}: claims reference unknown policy-years "
            f"{sorted(ckey[missing].unique().tolist())[:10]}"
        )
    pby = pframe.set_index(key)
    linked = pby.loc[ckey]
    mismatched = linked["building_id"].to_numpy() != cframe["building_id"].to_numpy()
    if mismatched.any():
        raise IngestError(
            f"{claims_path}: claim building_id disagrees with the policy's building "
            f"for policy-years {sorted(ckey[mismatched].unique().tolist())[:10]}"
        )
    zero_claim = linked["claim_nb"].to_numpy() == 0
    if zero_claim.any():
        raise IngestError(
            f"{claims_path}: claims attached to policy-years with claim_nb=0: "
            f"{sorted(ckey[zero_claim].unique().tolist())[:10]}"
        )
    n_orphan_pos = int(pframe["claim_nb"].sum() - len(cframe))
    if n_orphan_pos > 0:
        log.warning("%d policy-year(s) with claim_nb=1 but no claim row", n_orphan_pos)

    # Typed records.
    buildings = [Building(*row) for row in bframe.itertuples(index=False, name=None)]
    hazard = {
        row[0]: HazardContext(*row[1:])
        for row in hframe.itertuples(index=False, name=None)
    }
    default_ctx = HazardContext()
    missing_ctx = [b.building_id for b in buildings if b.building_id not in hazard]
    if missing_ctx:
        log.warning("hazard context missing for %d building(s); defaulting to "
                    "'none' levels", len(missing_ctx))
        for bid in missing_ctx:
            hazard[bid] = default_ctx
    policy_years = [
        PolicyYear(*row) for row in pframe.itertuples(index=False, name=None)
    ]
    claims = [
        ClaimRecord(r.policy_id, r.building_id, r.flood_date_parsed, r.amount)
        for r in cframe.assign(flood_date_parsed=fdates.dt.date).itertuples()
    ]

    # Hazard context joined onto the frames for assembly.
    hz = hframe.set_index("building_id")
    hz_full = hz.reindex(bframe["building_id"])
    for col, dval in (("tri_overflow", "none"), ("tri_runoff", "none"),
                      ("ppri", "none"), ("hydro_zone", "none"),
                      ("clim_region", "none")):
        hz_full[col] = hz_full[col].fillna(dval)
    hz_full["nb_catnat"] = hz_full["nb_catnat"].fillna(0).astype(int)
    hz_full = hz_full.reset_index()

    log.info("portfolio: %d policy-years, %d claims, %d buildings, "
             "positive rate %.4f%%", len(policy_years), len(claims),
             len(buildings), 100.0 * pframe["claim_nb"].mean())
    return Portfolio(
        policy_years=policy_years, claims=claims, buildings=buildings,
        hazard=hazard, policies_frame=pframe, claims_frame=cframe,
        buildings_frame=bframe, hazard_frame=hz_full,
    )


def write_portfolio(portfolio: Portfolio, policies_path, claims_path,
                    buildings_path, hazard_path):
    """Persist the four portfolio tables in their documented formats."""
    pf = portfolio.policies_frame[POLICY_COLUMNS]
    pf.to_csv(policies_path, index=False, lineterminator="\n")
    cf = portfolio.claims_frame[CLAIM_COLUMNS]
    cf.to_csv(claims_path, index=False, lineterminator="\n")
    portfolio.buildings_frame[BUILDING_COLUMNS].to_csv(
        buildings_path, index=False, lineterminator="\n")
    portfolio.hazard_frame[HAZARD_COLUMNS].to_csv(
        hazard_path, index=False, lineterminator="\n")


# ---------------------------------------------------------------------------
# Feature assembly
# ---------------------------------------------------------------------------

LAYER_ORDER = ["ins", "ins+c", "ins+r", "all"]
LAYER_TAGS = {
    "ins": ("ins",),
    "ins+c": ("ins", "climate"),
    "ins+r": ("ins", "climate", "rainfall"),
    "all": ("ins", "climate", "rainfall", "building"),
}

CATEGORICAL_COLUMNS = {
    "amenity_elmt", "outbuilg_size", "tri_overflow", "tri_runoff", "ppri",
    "hydro_zone", "clim_region", "tail_weight_cluster", "construction_period",
    "wall_material", "pres_adjoining", "soil_type", "wctrii", "milre_bin",
    "ann_milre_bin",
}

META_COLUMNS = ["policy_id", "building_id", "year", "flood_date", "exposure",
                "municipality_code"]


@dataclass
class FeatureTable:
    """Model-ready rows: features, target, per-column layer tags, levels."""

    frame: pd.DataFrame
    target: str
    tags: dict        # feature column -> layer tag
    levels: dict      # categorical feature column -> ordered level list
    task: str
    layer: str

    def __post_init__(self):
        feat = list(self.tags.keys())
        na = self.frame[feat + [self.target]].isna()
        if na.to_numpy().any():
            bad = [c for c in na.columns if na[c].any()]
            raise ValueError(f"feature table has missing values in {bad}")
        for col in self.levels:
            if col not in self.tags:
                raise ValueError(f"levels declared for unknown column {col!r}")

    @property
    def feature_columns(self):
        return list(self.tags.keys())

    def exposure(self):
        if "exposure" in self.frame.columns:
            return self.frame["exposure"].to_numpy(dtype=float)
        return np.ones(len(self.frame))


def default_tag_map(task):
    """Column -> layer tag mapping for one modelling task."""
    rain = "milre" if task == "severity" else "ann_milre"
    tags = {}
    for c in ("nb_rooms", "mov_assets", "prec_obj", "amenity_elmt", "outbuilg_size"):
        tags[c] = "ins"
    for c in ("tri_overflow", "tri_runoff", "ppri", "hydro_zone",
              "clim_region", "nb_catnat"):
        tags[c] = "climate"
    for c in (rain, "tail_weight_cluster"):
        tags[c] = "rainfall"
    for c in ("living_surface", "house_value", "construction_period", "nb_floors",
              "wall_material", "outbuilding_surface", "pres_adjoining",
              "length_partywall", "terrain_maxslope_50m", "nb_building_50m",
              "distance_watercourse", "altitude_diffwatercourse", "soil_type",
              "impervious_surface", "wctrii"):
        tags[c] = "building"
    return tags


def assemble_features(portfolio: Portfolio, indicators: pd.DataFrame,
                      geo: pd.DataFrame, layer, task, *, tails=None,
                      tag_map=None, binned_milre=False, n_bins=10):
    """Join all source tables into one model-ready FeatureTable.

    `indicators` carries the task's rainfall indicator: columns
    (building_id, year, ann_milre) for occurrence, (building_id, flood_date,
    milre) for severity. `tails` maps building_id -> tail_weight_cluster;
    `geo` is keyed by building_id with the computed geometry features.
    Missing columns for a requested layer raise naming the column.
    """
    if layer not in LAYER_ORDER:
        raise ValueError(f"unknown layer {layer!r}; expected one of {LAYER_ORDER}")
    if task not in ("occurrence", "severity"):
        raise ValueError(f"unknown task {task!r}")
    tag_map = tag_map or default_tag_map(task)
    wanted_tags = LAYER_TAGS[layer]

    bjoin = portfolio.buildings_frame.merge(
        portfolio.hazard_frame, on="building_id", validate="one_to_one")
    if geo is not None and len(geo):
        bjoin = bjoin.merge(geo, on="building_id", how="left", validate="one_to_one")
    if tails is not None and len(tails):
        bjoin = bjoin.merge(tails[["building_id", "tail_weight_cluster"]],
                            on="building_id", how="left", validate="one_to_one")

    if task == "occurrence":
        base = portfolio.policies_frame.copy()
        base["claim_nb"] = base["claim_nb"].astype(float)
        frame = base.merge(bjoin, on="building_id", how="left",
                           suffixes=("", "_bldg"))
        if indicators is not None and len(indicators):
            frame = frame.merge(
                indicators[["building_id", "year", "ann_milre"]],
                on=["building_id", "year"], how="left")
        target = "claim_nb"
        meta = ["policy_id", "building_id", "year", "exposure", "municipality_code"]
    else:
        base = portfolio.claims_frame.copy()
        base["amount"] = base["amount"].astype(float)
        base["year"] = base["flood_year"].astype(int)
        uw = portfolio.policies_frame.drop(columns=["claim_nb"])
        frame = base.merge(uw, on=["policy_id", "building_id", "year"], how="left",
                           validate="many_to_one")
        frame = frame.merge(bjoin, on="building_id", how="left", suffixes=("", "_bldg"))
        if indicators is not None and len(indicators):
            frame = frame.merge(
                indicators[["building_id", "flood_date", "milre"]],
                on=["building_id", "flood_date"], how="left")
        target = "amount"
        meta = ["policy_id", "building_id", "flood_date", "year", "exposure",
                "municipality_code"]

    tags = {}
    for col, tag in tag_map.items():
        if tag not in wanted_tags:
            continue
        if col not in frame.columns or frame[col].isna().any():
            pretty = {"ins": "underwriting", "climate": "climate",
                      "rainfall": "rainfall", "building": "building"}[tag]
            raise ValueError(f"{pretty} layer incomplete: missing column {col!r}")
        tags[col] = tag

    rain_col = "milre" if task == "severity" else "ann_milre"
    if binned_milre and rain_col in tags:
        binned = f"{rain_col}_bin"
        edges = np.quantile(frame[rain_col].to_numpy(dtype=float),
                            np.linspace(0, 1, n_bins + 1))
        codes = np.clip(np.searchsorted(edges, frame[rain_col], side="right") - 1,
                        0, n_bins - 1)
        frame[binned] = np.char.add("q", (codes + 1).astype(str))
        tags[binned] = tags.pop(rain_col)

    levels = {}
    for col in tags:
        if col in CATEGORICAL_COLUMNS:
            frame[col] = frame[col].astype(str)
            levels[col] = sorted(frame[col].unique().tolist())
        else:
            frame[col] = frame[col].astype(float)

    keep = meta + [target] + list(tags.keys())
    out = frame[keep].copy()
    out["exposure"] = out["exposure"].astype(float)
    return FeatureTable(frame=out, target=target, tags=tags, levels=levels,
                        task=task, layer=layer)

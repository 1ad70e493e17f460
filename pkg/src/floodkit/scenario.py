"""Synthetic ground-truth world: rainfall grid, towns, rivers, portfolio.

The generator wires claim occurrence and severity to known coefficients on
the true indicator and geometry values, so the pipeline's outputs can be
checked against an oracle. All oracle quantities are computed here with
straight-line implementations (stacked-window sums, sort + rank, windowed
raster scans, all-pairs distances) that share no code with the pipeline
modules. Generation is deterministic given the seed: every sampling stage
draws from its own spawned stream.

Claim years coincide with high annual indicator values by construction;
flood dates sit on the year's peak 1-day accumulation day at the location.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from . import config as cfg_mod
from .data_model import (RainGrid, write_rain_grid, POLICY_COLUMNS,
                         CLAIM_COLUMNS, BUILDING_COLUMNS, HAZARD_COLUMNS)

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
SCENARIO_VERSION = 1

CONSTRUCTION_PERIODS = ["pre1915", "1915_1948", "1949_1968", "1969_1988",
                        "1989_2005", "post2005"]
WALL_MATERIALS = ["agglomerate", "brick", "concrete", "stone", "wood", "other"]
from .geo import SOIL_CODES  # class-code naming table (no geometry logic)


class ScenarioError(ValueError):
    pass


def config_hash(scenario_cfg):
    blob = json.dumps(scenario_cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Oracle primitives (independent of the pipeline implementations)
# ---------------------------------------------------------------------------

def _oracle_accum(x, nd):
    """Trailing nd-day sums via stacked columns; index j = absolute day j+nd-1."""
    n = x.size
    if n < nd:
        return np.empty(0)
    cols = [x[i:n - nd + 1 + i] for i in range(nd)]
    return np.column_stack(cols).sum(axis=1)


def _oracle_haversine(lat1, lon1, lat2, lon2):
    p1, l1 = np.radians(lat1), np.radians(lon1)
    p2, l2 = np.radians(lat2), np.radians(lon2)
    a = (np.sin((p2 - p1) / 2.0) ** 2
         + np.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(a))


def _oracle_rank_prob(sample, values):
    """Empirical CDF by sort + rank, non-strict: P(X <= v)."""
    s = np.sort(np.asarray(sample, dtype=float))
    return np.searchsorted(s, values, side="right") / s.size


class OracleIndicators:
    """Rank-based indicator oracle over the generated rainfall matrix."""

    def __init__(self, matrix, dates, glat, glon, blat, blon, windows):
        self.windows = list(windows)
        self.matrix = matrix
        self.dates = dates
        years_all = dates.astype("datetime64[Y]").astype(int) + 1970
        self.years = np.unique(years_all)
        self.ystart = np.searchsorted(years_all, self.years)
        self.yend = np.r_[self.ystart[1:], years_all.size]

        n_b = blat.size
        idx4 = np.empty((n_b, 4), dtype=np.int64)
        for i in range(n_b):
            d = _oracle_haversine(blat[i], blon[i], glat, glon)
            idx4[i] = np.argsort(d, kind="stable")[:4]
        self.quads, self.quad_of_building = np.unique(
            np.sort(idx4, axis=1), axis=0, return_inverse=True)

        n_q = self.quads.shape[0]
        n_y = self.years.size
        n_w = len(self.windows)
        self._local = {}       # (window index, quad) -> local accum series
        self.ann_max = np.full((n_w, n_q, n_y), np.nan)
        self.peak_day_1d = np.zeros((n_q, n_y), dtype=np.int64)
        for qi in range(n_q):
            for wi, nd in enumerate(self.windows):
                acc = np.maximum.reduce(
                    [_oracle_accum(matrix[p], nd) for p in self.quads[qi]])
                self._local[(wi, qi)] = acc
                for yi in range(n_y):
                    a = max(self.ystart[yi], nd - 1)
                    b = self.yend[yi]
                    if a >= b:
                        continue
                    seg = acc[a - (nd - 1):b - (nd - 1)]
                    self.ann_max[wi, qi, yi] = np.max(seg)
                    if nd == 1:
                        self.peak_day_1d[qi, yi] = a + int(np.argmax(seg))

        self.ann_prob = np.full((n_w, n_q, n_y), np.nan)
        for wi in range(n_w):
            for qi in range(n_q):
                vals = self.ann_max[wi, qi]
                self.ann_prob[wi, qi] = _oracle_rank_prob(vals, vals)
        self.ann_value = self.ann_prob.max(axis=0)

    def ann_milre(self, building_idx, year):
        qi = self.quad_of_building[building_idx]
        yi = int(np.searchsorted(self.years, year))
        return float(self.ann_value[qi, yi])

    def milre(self, building_idx, abs_day):
        qi = self.quad_of_building[building_idx]
        probs = []
        for wi, nd in enumerate(self.windows):
            acc = self._local[(wi, qi)]
            v = acc[abs_day - (nd - 1)]
            probs.append(float(_oracle_rank_prob(acc, v)))
        return max(probs), probs

    def peak_day(self, building_idx, year):
        qi = self.quad_of_building[building_idx]
        yi = int(np.searchsorted(self.years, year))
        return int(self.peak_day_1d[qi, yi])


def _oracle_point_segment(px, py, sx1, sy1, sx2, sy2, a1, a2):
    """Distances and interpolated bed altitude against every segment."""
    dx = sx2 - sx1
    dy = sy2 - sy1
    L2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = ((px - sx1) * dx + (py - sy1) * dy) / L2
    t = np.where(L2 == 0.0, 0.0, t)
    t = np.clip(t, 0.0, 1.0)
    qx = sx1 + t * dx
    qy = sy1 + t * dy
    d2 = (px - qx) ** 2 + (py - qy) ** 2
    j = int(np.argmin(d2))
    bed = a1[j] + t[j] * (a2[j] - a1[j])
    return math.sqrt(d2[j]), bed


def _oracle_buffer_mask(raster_xll, raster_yll, cs, nrows, ncols, x, y, radius):
    """Rows/cols/mask of cells whose centers fall within the radius."""
    j0 = max(int((x - radius - raster_xll) / cs) - 1, 0)
    j1 = min(int((x + radius - raster_xll) / cs) + 1, ncols - 1)
    r0 = max(int((y - radius - raster_yll) / cs) - 1, 0)
    r1 = min(int((y + radius - raster_yll) / cs) + 1, nrows - 1)
    cols = np.arange(j0, j1 + 1)
    rups = np.arange(r0, r1 + 1)
    cx = raster_xll + (cols + 0.5) * cs
    cy = raster_yll + (rups + 0.5) * cs
    mask = ((cy - y) ** 2)[:, None] + ((cx - x) ** 2)[None, :] <= radius * radius
    rows_top = nrows - 1 - rups
    return rows_top, cols, mask


# ---------------------------------------------------------------------------
# World generation
# ---------------------------------------------------------------------------

def _date_axis(start_year, n_years):
    """Calendar dates with Feb 29 removed: exactly 365 days per year."""
    days = pd.date_range(f"{start_year}-01-01", f"{start_year + n_years - 1}-12-31",
                         freq="D")
    days = days[~((days.month == 2) & (days.day == 29))]
    return days.to_numpy().astype("datetime64[D]")


def _sample_gpd(rng, xi, sigma, size):
    u = rng.random(size)
    if abs(xi) < 1e-12:
        return -sigma * np.log1p(-u)
    return sigma / xi * ((1.0 - u) ** (-xi) - 1.0)


def _generate_rain(scn, seed_seq):
    g = scn["grid"]
    lats = np.linspace(g["lat_min"], g["lat_max"], g["n_lat"])
    lons = np.linspace(g["lon_min"], g["lon_max"], g["n_lon"])
    glat, glon = [a.ravel() for a in np.meshgrid(lats, lons, indexing="ij")]
    n_pts = glat.size
    point_ids = [f"p{i:04d}" for i in range(n_pts)]

    dates = _date_axis(scn["years"]["start"], scn["years"]["n"])
    n_days = dates.size
    doy = np.arange(n_days) % 365

    lat_mid = 0.5 * (g["lat_min"] + g["lat_max"])
    south = glat < lat_mid
    reg = scn["regimes"]
    xi = np.where(south, reg["south"]["xi"], reg["north"]["xi"])
    sigma = np.where(south, reg["south"]["sigma"], reg["north"]["sigma"])
    phase = np.where(south, 270.0, 0.0)  # autumn peak south, winter north

    wp = scn["wet_prob"]
    sb = scn["seasonal_base_mm"]
    matrix = np.empty((n_pts, n_days))
    streams = seed_seq.spawn(n_pts)
    for i in range(n_pts):
        rng = np.random.default_rng(streams[i])
        season = np.sin(2.0 * np.pi * (doy - phase[i]) / 365.0)
        p_wet = np.clip(wp["base"] * (1.0 + wp["amplitude"] * season), 0.02, 0.95)
        base = sb["base"] * (1.0 + sb["amplitude"] * season)
        wet = rng.random(n_days) < p_wet
        shocks = _sample_gpd(rng, xi[i], sigma[i], n_days)
        matrix[i] = np.where(wet, base + shocks, 0.0)
    matrix = np.round(matrix, 3)
    regime = np.where(south, "south", "north")
    return point_ids, glat, glon, dates, matrix, regime, xi, sigma


def _allocate_counts(rng, total, n_groups):
    weights = rng.random(n_groups) + 0.5
    weights /= weights.sum()
    counts = np.floor(weights * total).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(weights * total - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _generate_world(scn, seed_seq, proj):
    """Towns, buildings, rasters and rivers in the planar region."""
    rng = np.random.default_rng(seed_seq)
    half = scn["region_km"] * 1000.0 / 2.0
    cs = scn["raster_cell_m"]
    n_cells = int(2 * half / cs)
    xll = yll = -half
    margin = 400.0

    n_muni = scn["n_municipalities"]
    tx = rng.uniform(-half + 4000.0, half - 4000.0, n_muni)
    ty = rng.uniform(-half + 4000.0, half - 4000.0, n_muni)
    town_sigma = rng.uniform(350.0, 900.0, n_muni)

    n_b = scn["n_buildings"]
    counts = _allocate_counts(rng, n_b, n_muni)
    muni_of = np.repeat(np.arange(n_muni), counts)
    bx = np.empty(n_b)
    by = np.empty(n_b)
    pos = 0
    for m in range(n_muni):
        c = counts[m]
        bx[pos:pos + c] = np.clip(tx[m] + rng.normal(0, town_sigma[m], c),
                                  -half + margin, half - margin)
        by[pos:pos + c] = np.clip(ty[m] + rng.normal(0, town_sigma[m], c),
                                  -half + margin, half - margin)
        pos += c

    # Round-trip planar -> lat/lon (6 decimals, as written) -> planar, so the
    # oracle sees exactly the coordinates the pipeline will reconstruct.
    blat, blon = proj.to_latlon(bx, by)
    blat = np.round(blat, 6)
    blon = np.round(blon, 6)
    bx, by = proj.to_xy(blat, blon)

    # Elevation: smooth surface + mild cell noise.
    jj = np.arange(n_cells)
    cx = xll + (jj + 0.5) * cs
    cy = yll + (jj + 0.5) * cs  # bottom-up
    X, Y = np.meshgrid(cx, cy)
    elev_up = (
        120.0
        + 45.0 * np.sin(2 * np.pi * X / 52000.0 + 0.7) * np.sin(2 * np.pi * Y / 64000.0 + 1.9)
        + 20.0 * np.sin(2 * np.pi * (X + 0.4 * Y) / 17000.0 + 4.0)
        + 0.0006 * Y
        + rng.normal(0.0, 1.2, (n_cells, n_cells))
    )
    elev = np.round(elev_up[::-1], 2)  # top-down rows

    # Landcover: impervious probability peaks at town centers.
    d2town = np.full((n_cells, n_cells), np.inf)
    for m in range(n_muni):
        d2 = (X - tx[m]) ** 2 + (Y - ty[m]) ** 2
        np.minimum(d2town, d2, out=d2town)
    p_imp = 0.06 + 0.85 * np.exp(-d2town / (2.0 * 1400.0 ** 2))
    land_up = (rng.random((n_cells, n_cells)) < p_imp).astype(float)
    land = land_up[::-1]

    # Soil: Voronoi cells of a handful of seeds.
    n_soil = len(SOIL_CODES)
    sx = rng.uniform(-half, half, n_soil)
    sy = rng.uniform(-half, half, n_soil)
    best = np.zeros((n_cells, n_cells), dtype=int)
    bestd = np.full((n_cells, n_cells), np.inf)
    for s in range(n_soil):
        d2 = (X - sx[s]) ** 2 + (Y - sy[s]) ** 2
        swap = d2 < bestd
        best[swap] = s + 1
        bestd[swap] = d2[swap]
    soil_up = best.astype(float)
    soil = soil_up[::-1]

    # Rivers: west-to-east random walks with incised bed altitude.
    rivers = []
    for r in range(scn["n_rivers"]):
        y0 = rng.uniform(-half * 0.8, half * 0.8)
        x = -half
        y = y0
        verts = []
        incision = rng.uniform(3.0, 8.0)
        while x <= half:
            xr, yr = round(x, 1), round(float(np.clip(y, -half + cs, half - cs)), 1)
            i_cell = min(int((yr - yll) / cs), n_cells - 1)
            j_cell = min(int((xr - xll) / cs), n_cells - 1)
            bed = round(float(elev_up[i_cell, j_cell] - incision), 2)
            verts.append((xr, yr, bed))
            x += rng.uniform(250.0, 550.0)
            y += rng.normal(0.0, 300.0)
        rivers.append((f"r{r:02d}", verts))

    return {
        "xll": xll, "yll": yll, "cellsize": cs, "n_cells": n_cells,
        "tx": tx, "ty": ty, "muni_of": muni_of,
        "bx": bx, "by": by, "blat": blat, "blon": blon,
        "elev": elev, "elev_up": elev_up, "land": land, "soil": soil,
        "rivers": rivers,
    }


def _oracle_geo(world, radii):
    """All-pairs / windowed-scan geometry oracle for every building."""
    bx, by = world["bx"], world["by"]
    n_b = bx.size
    xll, yll, cs = world["xll"], world["yll"], world["cellsize"]
    n_cells = world["n_cells"]
    elev = world["elev"]
    land = world["land"]
    soil = world["soil"]

    segs = ([], [], [], [], [], [])
    for _, verts in world["rivers"]:
        for (xa, ya, aa), (xb, yb, ab) in zip(verts[:-1], verts[1:]):
            for arr, v in zip(segs, (xa, ya, xb, yb, aa, ab)):
                arr.append(v)
    sx1, sy1, sx2, sy2, sa1, sa2 = (np.asarray(a, dtype=float) for a in segs)

    dist = np.empty(n_b)
    altdiff = np.empty(n_b)
    slope = np.empty(n_b)
    imperv = np.empty(n_b)
    soil_code = np.empty(n_b, dtype=int)
    for i in range(n_b):
        x, y = bx[i], by[i]
        i_cell = n_cells - 1 - min(int((y - yll) / cs), n_cells - 1)
        j_cell = min(int((x - xll) / cs), n_cells - 1)
        b_elev = elev[i_cell, j_cell]
        d, bed = _oracle_point_segment(x, y, sx1, sy1, sx2, sy2, sa1, sa2)
        dist[i] = d
        altdiff[i] = b_elev - bed

        rows, cols, mask = _oracle_buffer_mask(
            xll, yll, cs, n_cells, n_cells, x, y, radii["slope_m"])
        vals = elev[np.ix_(rows, cols)][mask]
        slope[i] = np.max(np.abs(vals - b_elev))

        rows, cols, mask = _oracle_buffer_mask(
            xll, yll, cs, n_cells, n_cells, x, y, radii["impervious_m"])
        lv = land[np.ix_(rows, cols)][mask]
        imperv[i] = np.count_nonzero(lv == 1.0) / lv.size

        rows, cols, mask = _oracle_buffer_mask(
            xll, yll, cs, n_cells, n_cells, x, y, radii["soil_m"])
        sv = soil[np.ix_(rows, cols)][mask].astype(int)
        codes, cnt = np.unique(sv, return_counts=True)
        soil_code[i] = int(codes[np.argmax(cnt)])

    # All-pairs neighbor counts, chunked.
    r2 = radii["density_m"] ** 2
    nb50 = np.empty(n_b, dtype=int)
    for lo in range(0, n_b, 1024):
        hi = min(lo + 1024, n_b)
        d2 = (bx[lo:hi, None] - bx[None, :]) ** 2 + (by[lo:hi, None] - by[None, :]) ** 2
        nb50[lo:hi] = np.count_nonzero(d2 <= r2, axis=1) - 1

    return pd.DataFrame({
        "building_id": [f"b{i:05d}" for i in range(n_b)],
        "distance_watercourse": dist,
        "altitude_diffwatercourse": altdiff,
        "terrain_maxslope_50m": slope,
        "nb_building_50m": nb50,
        "impervious_surface": imperv,
        "soil_type": [SOIL_CODES[c] for c in soil_code],
    })


def _oracle_wctrii(dist, altdiff, tri_overflow, wctrii_cfg):
    """Composite exposure category with the generator's own banding code."""
    near, far, demote = (wctrii_cfg["near_m"], wctrii_cfg["far_m"],
                         wctrii_cfg["demote_above_m"])
    tri_band = np.array([{"none": 0, "low": 1, "medium": 1, "high": 2}[t]
                         for t in tri_overflow])
    prox = np.where(dist < near, 2, np.where(dist <= far, 1, 0))
    prox = np.where(altdiff > demote, np.maximum(prox - 1, 0), prox)
    return 3 * tri_band + prox + 1


def _generate_hazard(scn, seed_seq, world, dist, slope, imperv):
    rng = np.random.default_rng(seed_seq)
    n_muni = scn["n_municipalities"]
    muni_of = world["muni_of"]
    n_b = muni_of.size

    tri_covered = rng.random(n_muni) < 0.15
    ppri_none = rng.random(n_muni) < 0.55
    south_town = world["ty"] < 0.0

    share_near = np.zeros(n_muni)
    for m in range(n_muni):
        sel = muni_of == m
        if sel.any():
            share_near[m] = np.mean(dist[sel] < 400.0)

    tri_overflow = np.full(n_b, "none", dtype=object)
    covered_b = tri_covered[muni_of]
    tri_overflow[covered_b & (dist < 120.0)] = "high"
    tri_overflow[covered_b & (dist >= 120.0) & (dist < 350.0)] = "medium"
    tri_overflow[covered_b & (dist >= 350.0) & (dist < 700.0)] = "low"

    tri_runoff = np.full(n_b, "none", dtype=object)
    runoff_sel = covered_b & (slope > 12.0) & (imperv > 0.75)
    tri_runoff[runoff_sel] = "low"

    ppri_levels = np.array(["very_low", "low", "moderate", "medium", "high",
                            "very_high"])
    ppri_town = np.full(n_muni, "none", dtype=object)
    for m in range(n_muni):
        if ppri_none[m]:
            continue
        idx = min(int(share_near[m] * len(ppri_levels) * 2), len(ppri_levels) - 1)
        ppri_town[m] = ppri_levels[idx]

    half = scn["region_km"] * 1000.0 / 2.0
    hydro_band = np.clip(((world["tx"] + half) / (2 * half) * 8).astype(int), 0, 7)
    clim_band = np.clip(((world["ty"] + half) / (2 * half) * 5).astype(int), 0, 4)
    nb_catnat_town = rng.poisson(2.5 + 9.0 * share_near + 2.0 * south_town)

    return pd.DataFrame({
        "building_id": [f"b{i:05d}" for i in range(n_b)],
        "tri_overflow": tri_overflow,
        "tri_runoff": tri_runoff,
        "ppri": ppri_town[muni_of],
        "hydro_zone": np.array([f"h{b + 1}" for b in hydro_band])[muni_of],
        "clim_region": np.array([f"c{b + 1}" for b in clim_band])[muni_of],
        "nb_catnat": nb_catnat_town[muni_of],
    })


def _generate_underwriting(scn, seed_seq, n_b):
    rng = np.random.default_rng(seed_seq)
    nb_rooms = 2 + rng.binomial(4, 0.42, n_b)
    mov_assets = np.round(np.clip(rng.lognormal(np.log(18000.0), 0.75, n_b),
                                  500.0, 456000.0))
    small = rng.random(n_b) < 0.91
    prec_obj = np.where(
        small,
        np.round(rng.uniform(0.0, 5000.0, n_b)),
        np.round(np.clip(5000.0 + rng.exponential(3000.0, n_b), None, 25000.0)),
    )
    amenity = np.where(rng.random(n_b) < 0.07, "pres", "abs")
    outbuilg = np.where(rng.random(n_b) < 0.0144, "pres", "abs")

    living = np.round(np.clip(rng.lognormal(np.log(105.0), 0.45, n_b),
                              20.0, 2400.0), 1)
    value = np.round(np.clip(rng.lognormal(np.log(2200.0), 0.5, n_b),
                             200.0, 28000.0))
    period = rng.choice(CONSTRUCTION_PERIODS, n_b,
                        p=[0.26, 0.12, 0.12, 0.2, 0.18, 0.12])
    floors = rng.choice(np.arange(5), n_b, p=[0.28, 0.5, 0.17, 0.04, 0.01])
    wall = rng.choice(WALL_MATERIALS, n_b, p=[0.2, 0.19, 0.25, 0.2, 0.08, 0.08])
    adjoining = np.where(rng.random(n_b) < 0.39, "pres", "abs")
    partywall = np.where(adjoining == "pres",
                         np.round(rng.exponential(7.0, n_b) + 1.0, 1), 0.0)
    outb_surface = np.where(rng.random(n_b) < 0.3,
                            np.round(np.clip(rng.exponential(15.0, n_b),
                                             None, 1500.0), 1), 0.0)
    return {
        "nb_rooms": nb_rooms, "mov_assets": mov_assets, "prec_obj": prec_obj,
        "amenity_elmt": amenity, "outbuilg_size": outbuilg,
        "living_surface": living, "house_value": value,
        "construction_period": period, "nb_floors": floors,
        "wall_material": wall, "pres_adjoining": adjoining,
        "length_partywall": partywall, "outbuilding_surface": outb_surface,
    }


def _calibrate_intercept(eta_no_intercept, target_rate):
    """Bisection on the mean Bernoulli probability (monotone in b0)."""

    def rate(b0):
        with np.errstate(over="ignore"):
            return float(np.mean(1.0 / (1.0 + np.exp(-(b0 + eta_no_intercept)))))

    lo, hi = -40.0, 10.0
    if rate(hi) < target_rate or rate(lo) > target_rate:
        raise ScenarioError(
            f"target positive rate {target_rate} unattainable: achievable range "
            f"[{rate(lo):.6f}, {rate(hi):.6f}]"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rate(mid) < target_rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _validate_scenario(scn):
    rate = scn["target_positive_rate"]
    if not 0.0 < rate < 0.05:
        raise ScenarioError(
            f"target positive rate {rate} outside the supported (0, 0.05)")
    for name, regime in scn["regimes"].items():
        if not -0.4 < regime["xi"] < 0.9:
            raise ScenarioError(
                f"regime {name!r} shape {regime['xi']} outside (-0.4, 0.9)")
    if scn["grid"]["n_lat"] * scn["grid"]["n_lon"] < 4:
        raise ScenarioError("rain grid needs at least 4 points")


def generate(scenario_cfg, out_dir, seed):
    """Write the full synthetic world and its oracle truth tables.

    Returns the realized summary (also written to scenario.json).
    """
    scn = scenario_cfg
    _validate_scenario(scn)
    out_dir = Path(out_dir)
    data_dir = out_dir / "data"
    truth_dir = out_dir / "truth"
    data_dir.mkdir(parents=True, exist_ok=True)
    truth_dir.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(seed)
    (rain_ss, world_ss, hazard_ss, uw_ss, claims_ss, severity_ss) = root.spawn(6)

    g = scn["grid"]
    lat0 = 0.5 * (g["lat_min"] + g["lat_max"])
    lon0 = 0.5 * (g["lon_min"] + g["lon_max"])
    from .geo import LocalProjection  # local import to keep oracle code separate
    proj = LocalProjection(lat0, lon0)

    log.info("scenario: generating rainfall grid")
    (point_ids, glat, glon, dates, matrix, regime, xi_true,
     sigma_true) = _generate_rain(scn, rain_ss)

    log.info("scenario: generating world geometry")
    world = _generate_world(scn, world_ss, proj)
    n_b = scn["n_buildings"]
    building_ids = [f"b{i:05d}" for i in range(n_b)]

    radii = dict(cfg_mod.DEFAULT_RADII)
    wct_cfg = dict(cfg_mod.DEFAULT_WCTRII)

    log.info("scenario: oracle geometry features")
    geo_truth = _oracle_geo(world, radii)
    hazard_frame = _generate_hazard(
        scn, hazard_ss, world,
        geo_truth["distance_watercourse"].to_numpy(),
        geo_truth["terrain_maxslope_50m"].to_numpy(),
        geo_truth["impervious_surface"].to_numpy(),
    )
    wct_truth = _oracle_wctrii(
        geo_truth["distance_watercourse"].to_numpy(),
        geo_truth["altitude_diffwatercourse"].to_numpy(),
        hazard_frame["tri_overflow"].to_numpy(), wct_cfg)
    geo_truth["wctrii"] = wct_truth.astype(str)

    log.info("scenario: oracle rainfall indicators")
    oracle = OracleIndicators(matrix, dates, glat, glon,
                              world["blat"], world["blon"],
                              cfg_mod.DEFAULT_WINDOWS)

    # Portfolio years and the occurrence data-generating process.
    py0 = scn["portfolio_years"]["start"]
    pyn = scn["portfolio_years"]["n"]
    years = np.arange(py0, py0 + pyn)
    grid_years = set(int(y) for y in oracle.years)
    if not set(years.tolist()) <= grid_years:
        raise ScenarioError("portfolio years are not covered by the rainfall span")

    uw = _generate_underwriting(scn, uw_ss, n_b)
    wct_num = geo_truth["wctrii"].astype(int).to_numpy()
    nb50 = geo_truth["nb_building_50m"].to_numpy()
    amenity_pres = (uw["amenity_elmt"] == "pres").astype(float)

    oc = scn["occurrence_coefficients"]
    ann_bld_year = np.empty((n_b, pyn))
    for yi, y in enumerate(years):
        col = int(np.searchsorted(oracle.years, y))
        ann_bld_year[:, yi] = oracle.ann_value[oracle.quad_of_building, col]

    eta = (
        oc["ann_milre"] * ann_bld_year
        + oc["wctrii_norm"] * ((wct_num - 1) / 8.0)[:, None]
        + oc["nb_building_50m_norm"] * (np.minimum(nb50, 60) / 30.0)[:, None]
        + oc["amenity_elmt_pres"] * amenity_pres[:, None]
    )
    b0 = _calibrate_intercept(eta.ravel(), scn["target_positive_rate"])
    prob = 1.0 / (1.0 + np.exp(-(b0 + eta)))

    rng_claims = np.random.default_rng(claims_ss)
    claim_nb = (rng_claims.random((n_b, pyn)) < prob).astype(int)
    n_claims = int(claim_nb.sum())
    realized_rate = n_claims / claim_nb.size
    log.info("scenario: %d claims (rate %.4f%%, target %.4f%%)",
             n_claims, 100 * realized_rate, 100 * scn["target_positive_rate"])

    # Severity on claim rows.
    sv = scn["severity_coefficients"]
    rng_sev = np.random.default_rng(severity_ss)
    claim_rows = np.argwhere(claim_nb == 1)
    claim_records = []
    true_milre_rows = []
    for bi, yi in claim_rows:
        year = int(years[yi])
        day = oracle.peak_day(bi, year)
        milre_v, _ = oracle.milre(bi, day)
        mu = math.exp(
            sv["intercept"]
            + sv["milre_centered"] * (milre_v - sv["milre_center"])
            + sv["log_mov_assets"] * math.log(uw["mov_assets"][bi] / 20000.0)
            + sv["wctrii_minus1"] * (wct_num[bi] - 1)
        )
        amount = rng_sev.gamma(sv["shape"], mu / sv["shape"])
        amount = round(max(amount, scn["severity_floor_eur"]), 2)
        flood_date = str(dates[day])
        claim_records.append((f"P{bi:05d}", building_ids[bi], flood_date, amount))
        true_milre_rows.append((building_ids[bi], flood_date, milre_v))

    # ---------------- write data files ----------------
    log.info("scenario: writing data files")
    grid = RainGrid(point_ids, glat, glon, dates, matrix)
    write_rain_grid(grid, data_dir / "rain_grid.csv")

    bframe = pd.DataFrame({
        "building_id": building_ids,
        "lat": world["blat"], "lon": world["blon"],
        "municipality_code": [f"m{m:03d}" for m in world["muni_of"]],
        "living_surface": uw["living_surface"],
        "house_value": uw["house_value"],
        "construction_period": uw["construction_period"],
        "nb_floors": uw["nb_floors"],
        "wall_material": uw["wall_material"],
        "outbuilding_surface": uw["outbuilding_surface"],
        "pres_adjoining": uw["pres_adjoining"],
        "length_partywall": uw["length_partywall"],
    })[BUILDING_COLUMNS]
    bframe.to_csv(data_dir / "buildings.csv", index=False, lineterminator="\n")

    hazard_frame[HAZARD_COLUMNS].to_csv(
        data_dir / "hazard.csv", index=False, lineterminator="\n")

    pol = pd.DataFrame({
        "policy_id": np.repeat([f"P{i:05d}" for i in range(n_b)], pyn),
        "building_id": np.repeat(building_ids, pyn),
        "year": np.tile(years, n_b),
        "exposure": 1.0,
        "nb_rooms": np.repeat(uw["nb_rooms"], pyn),
        "mov_assets": np.repeat(uw["mov_assets"], pyn),
        "prec_obj": np.repeat(uw["prec_obj"], pyn),
        "amenity_elmt": np.repeat(uw["amenity_elmt"], pyn),
        "outbuilg_size": np.repeat(uw["outbuilg_size"], pyn),
        "claim_nb": claim_nb.ravel(),
    })[POLICY_COLUMNS]
    pol.to_csv(data_dir / "policies.csv", index=False, lineterminator="\n")

    cframe = pd.DataFrame(claim_records, columns=CLAIM_COLUMNS)
    cframe.to_csv(data_dir / "claims.csv", index=False, lineterminator="\n")

    with open(data_dir / "watercourses.csv", "w", encoding="utf-8") as fh:
        fh.write("watercourse_id,vertex,x_m,y_m,bed_alt_m\n")
        for rid, verts in world["rivers"]:
            for k, (x, y, bed) in enumerate(verts):
                fh.write(f"{rid},{k},{x!r},{y!r},{bed!r}\n")

    from .geo import Raster  # writer reuse only
    cs = world["cellsize"]
    Raster(world["xll"], world["yll"], cs, world["elev"]).save(data_dir / "elevation.asc")
    Raster(world["xll"], world["yll"], cs, world["land"]).save(data_dir / "landcover.asc")
    Raster(world["xll"], world["yll"], cs, world["soil"]).save(data_dir / "soil.asc")

    # ---------------- truth tables ----------------
    log.info("scenario: writing truth tables")
    ann_rows = pd.DataFrame({
        "building_id": np.repeat(building_ids, pyn),
        "year": np.tile(years, n_b),
        "ann_milre": ann_bld_year.ravel(),
    })
    ann_rows.to_csv(truth_dir / "true_ann_milre.csv", index=False, lineterminator="\n")
    pd.DataFrame(true_milre_rows,
                 columns=["building_id", "flood_date", "milre"]).to_csv(
        truth_dir / "true_milre.csv", index=False, lineterminator="\n")
    geo_truth.to_csv(truth_dir / "true_geo.csv", index=False, lineterminator="\n")
    pd.DataFrame({
        "point_id": point_ids, "regime": regime,
        "xi": xi_true, "sigma": sigma_true,
    }).to_csv(truth_dir / "true_tails.csv", index=False, lineterminator="\n")

    true_coeffs = {
        "occurrence": dict(oc, intercept=b0),
        "severity": dict(sv),
    }
    with open(truth_dir / "true_coefficients.json", "w", encoding="utf-8") as fh:
        json.dump(true_coeffs, fh, indent=2, sort_keys=True)
        fh.write("\n")

    # Realized calibration facts for the acceptance gate.
    claim_mask = claim_nb.ravel() == 1
    med_gap = float(np.median(ann_bld_year.ravel()[claim_mask])
                    - np.median(ann_bld_year.ravel()[~claim_mask]))
    summary = {
        "version": SCENARIO_VERSION,
        "config": scn,
        "config_hash": config_hash(scn),
        "seed": seed,
        "projection": {"lat0": lat0, "lon0": lon0},
        "realized": {
            "n_grid_points": len(point_ids),
            "n_days": int(dates.size),
            "n_buildings": n_b,
            "n_policy_years": int(n_b * pyn),
            "n_claims": n_claims,
            "positive_rate": realized_rate,
            "median_ann_milre_gap": med_gap,
            "mean_claim_amount": float(cframe["amount"].mean()) if n_claims else None,
            "occurrence_intercept": b0,
        },
    }
    with open(out_dir / "scenario.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    # Ready-to-run config pointing at the generated files.
    run_cfg = {
        "seed": seed,
        "out_dir": "out",
        "projection": {"lat0": lat0, "lon0": lon0},
        "paths": {k: f"data/{v}" for k, v in cfg_mod.DATA_FILES.items()},
        "windows": list(cfg_mod.DEFAULT_WINDOWS),
        "folds": 5,
    }
    cfg_mod.write_run_config(run_cfg, out_dir / "run_config.json")
    return summary


def oracle_truth(scenario_cfg, out_dir):
    """Load the truth tables for a previously generated scenario.

    Raises if the configuration does not hash-match the generated one.
    """
    out_dir = Path(out_dir)
    meta_path = out_dir / "scenario.json"
    if not meta_path.exists():
        raise ScenarioError(f"{meta_path} not found; run generate first")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta["config_hash"] != config_hash(scenario_cfg):
        raise ScenarioError("scenario config does not match the generated data")
    truth_dir = out_dir / "truth"
    with open(truth_dir / "true_coefficients.json", "r", encoding="utf-8") as fh:
        coeffs = json.load(fh)
    return {
        "meta": meta,
        "coefficients": coeffs,
        "ann_milre": pd.read_csv(truth_dir / "true_ann_milre.csv",
                                 float_precision="round_trip"),
        "milre": pd.read_csv(truth_dir / "true_milre.csv",
                             float_precision="round_trip"),
        "geo": pd.read_csv(truth_dir / "true_geo.csv",
                           dtype={"wctrii": str, "soil_type": str},
                           float_precision="round_trip"),
        "tails": pd.read_csv(truth_dir / "true_tails.csv",
                             float_precision="round_trip"),
    }

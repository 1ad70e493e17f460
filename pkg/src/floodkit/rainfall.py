"""Rainfall accumulation windows and the local relative-extremity indicators.

For a location, daily rainfall is the maximum over its four nearest grid
points of the trailing accumulated depth for each window length. The event
indicator transforms an accumulated value into its empirical cumulative
probability against the full local history (non-strict <=) and keeps the
maximum across windows; the annual variant does the same on yearly maxima
of the accumulated series.

Everything here is a pure function of the grid: identical inputs give
bit-identical outputs. Trailing windows reaching before the start of the
record are dropped, not padded; days whose window covers a gap are invalid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .geo import haversine_m

log = logging.getLogger(__name__)

DEFAULT_WINDOWS = (1, 3, 5, 7, 10, 30)


@dataclass
class AccumulationSeries:
    """Trailing window sums aligned to the source date axis.

    values[d] covers days d-nd+1 .. d; entries without a full finite window
    are NaN. M_nd counts the valid days.
    """

    point_id: str
    window_nd: int
    values: np.ndarray
    valid: np.ndarray
    M_nd: int

    @property
    def usable(self):
        return self.M_nd > 0

    def history(self):
        return self.values[self.valid]


@dataclass
class AnnualMaxSeries:
    point_id: str
    window_nd: int
    years: np.ndarray
    maxima: np.ndarray  # NaN for incomplete years
    year_count: int


@dataclass
class MilreValue:
    subject: str
    per_window_prob: dict
    milre: float


def accumulate(series, nd, point_id=""):
    """Trailing nd-day sums of a daily series (NaN marks gaps)."""
    if nd < 1:
        raise ValueError("window length nd must be >= 1")
    x = np.asarray(series, dtype=float)
    values = np.full(x.size, np.nan)
    if x.size >= nd:
        values[nd - 1:] = sliding_window_view(x, nd).sum(axis=-1)
    valid = np.isfinite(values)
    acc = AccumulationSeries(point_id, nd, values, valid, int(valid.sum()))
    if not acc.usable:
        log.warning("accumulation window %d exceeds series length %d; unusable",
                    nd, x.size)
    return acc


def empirical_prob(history, x_star):
    """count(history <= x_star) / len(history), non-strict comparison."""
    h = np.asarray(history, dtype=float)
    if h.size == 0:
        raise ValueError("empirical_prob: empty history")
    if not np.isfinite(x_star):
        raise ValueError("empirical_prob: x_star must be finite")
    return float(np.count_nonzero(h <= x_star) / h.size)


def nearest_point_rows(grid, lat, lon, k=4):
    """Row indexes of the k nearest grid points by great-circle distance.

    Ties resolve to the lower point index (stable sort), so results are
    deterministic.
    """
    if grid.n_points < k:
        raise ValueError(f"grid has {grid.n_points} points; need at least {k}")
    d = haversine_m(lat, lon, grid.lat, grid.lon)
    return np.argsort(d, kind="stable")[:k]


def _local_max_accumulation(grid, rows, nd):
    """Max over the given point rows of each point's trailing sums."""
    per_point = [accumulate(grid.matrix[r], nd).values for r in rows]
    return np.maximum.reduce(per_point)


def nearest_four_max(grid, location, windows=DEFAULT_WINDOWS, date=None):
    """Per-window local accumulated value at a date (max over 4 nearest points).

    With date=None the full valid series per window is returned instead.
    """
    lat, lon = location
    rows = nearest_point_rows(grid, lat, lon, k=4)
    out = {}
    for nd in windows:
        values = _local_max_accumulation(grid, rows, nd)
        if date is None:
            out[nd] = values
            continue
        pos = grid.date_pos(date)
        v = values[pos]
        if not np.isfinite(v):
            raise ValueError(
                f"no full {nd}-day window at {date} (history starts too late "
                f"or gaps intersect the window)"
            )
        out[nd] = float(v)
    return out


def milre(building, flood_date, grid, windows=DEFAULT_WINDOWS):
    """Event indicator at a building for a flood date.

    Per window: empirical probability of the event accumulation against the
    full historical accumulation distribution at the location; the indicator
    is the maximum across windows.
    """
    lat, lon = _building_latlon(building)
    rows = nearest_point_rows(grid, lat, lon, k=4)
    pos = grid.date_pos(flood_date)
    probs = {}
    for nd in windows:
        values = _local_max_accumulation(grid, rows, nd)
        if not np.isfinite(values[pos]):
            raise ValueError(f"insufficient history for window {nd} at {flood_date}")
        hist = values[np.isfinite(values)]
        probs[nd] = empirical_prob(hist, values[pos])
    subject = f"{_building_id(building)}@{flood_date}"
    return MilreValue(subject, probs, max(probs.values()))


def annual_maxima(grid, rows, nd, point_id=""):
    """Yearly maxima of the local max-accumulation series (complete years only).

    A year is complete when every calendar day of that year is on the grid
    axis; its maximum runs over the days with a full finite window (for the
    first year of the record long windows start at day nd-1). Incomplete
    years and years whose windows hit gaps carry NaN.
    """
    values = _local_max_accumulation(grid, rows, nd)
    years_all = grid.dates.astype("datetime64[Y]").astype(int) + 1970
    years = np.unique(years_all)
    starts = np.searchsorted(years_all, years)
    ends = np.r_[starts[1:], years_all.size]
    maxima = np.full(years.size, np.nan)
    for i, y in enumerate(years):
        n_days_expected = (np.datetime64(f"{y + 1}-01-01") -
                           np.datetime64(f"{y}-01-01")).astype(int)
        span = values[starts[i]:ends[i]]
        day_span = ends[i] - starts[i]
        if day_span != n_days_expected and day_span != _days_no_leap(y):
            continue  # incomplete year
        lo = max(starts[i], nd - 1)
        seg = values[lo:ends[i]]
        if seg.size == 0 or not np.all(np.isfinite(seg)):
            continue
        maxima[i] = seg.max()
    return AnnualMaxSeries(point_id, nd, years, maxima,
                           int(np.isfinite(maxima).sum()))


def _days_no_leap(year):
    """365-day years are accepted as complete (synthetic archives skip Feb 29)."""
    return 365


def ann_milre(building, year, grid, windows=DEFAULT_WINDOWS):
    """Annual indicator: empirical probability of the year's maxima.

    Per window, the year's maximum accumulated value is ranked against the
    annual-maxima distribution over all complete years; the indicator is the
    maximum across windows.
    """
    lat, lon = _building_latlon(building)
    rows = nearest_point_rows(grid, lat, lon, k=4)
    probs = {}
    for nd in windows:
        ams = annual_maxima(grid, rows, nd)
        sel = np.flatnonzero(ams.years == year)
        if sel.size == 0 or not np.isfinite(ams.maxima[sel[0]]):
            raise ValueError(f"year {year} incomplete in the grid for window {nd}")
        sample = ams.maxima[np.isfinite(ams.maxima)]
        probs[nd] = empirical_prob(sample, ams.maxima[sel[0]])
    subject = f"{_building_id(building)}@{year}"
    return MilreValue(subject, probs, max(probs.values()))


def _building_latlon(building):
    if hasattr(building, "lat"):
        return building.lat, building.lon
    return building  # (lat, lon) tuple


def _building_id(building):
    return getattr(building, "building_id", "location")


# ---------------------------------------------------------------------------
# Bulk computation over a portfolio
# ---------------------------------------------------------------------------

@dataclass
class IndicatorBundle:
    """All rainfall indicator outputs for one portfolio."""

    ann_frame: pd.DataFrame      # building_id, year, ann_milre
    milre_frame: pd.DataFrame    # building_id, flood_date, milre
    long_frame: pd.DataFrame     # documented indicators.csv layout
    nearest_rows: dict           # building_id -> distance-ordered 4 nearest rows


def compute_indicators(grid, buildings_frame, policies_frame, claims_frame,
                       windows=DEFAULT_WINDOWS, chunk=512):
    """Vectorized MILRE / annual indicator computation for a whole portfolio.

    Buildings sharing the same set of four nearest grid points share one
    local accumulation series, so work is grouped by that point set. Results
    are bit-identical to the per-building operations.
    """
    bids = buildings_frame["building_id"].to_numpy()
    blat = buildings_frame["lat"].to_numpy(dtype=float)
    blon = buildings_frame["lon"].to_numpy(dtype=float)
    n_b = bids.size

    # Distance-ordered nearest rows per building, chunked over buildings.
    idx4 = np.empty((n_b, 4), dtype=np.int64)
    for lo in range(0, n_b, 2048):
        hi = min(lo + 2048, n_b)
        d = haversine_m(blat[lo:hi, None], blon[lo:hi, None],
                        grid.lat[None, :], grid.lon[None, :])
        idx4[lo:hi] = np.argsort(d, axis=1, kind="stable")[:, :4]
    nearest_rows = {bid: idx4[i] for i, bid in enumerate(bids)}

    quads, quad_of_building = np.unique(np.sort(idx4, axis=1), axis=0,
                                        return_inverse=True)
    n_q = quads.shape[0]
    log.info("indicators: %d buildings share %d nearest-point sets", n_b, n_q)

    years_all = grid.dates.astype("datetime64[Y]").astype(int) + 1970
    years = np.unique(years_all)
    ystarts = np.searchsorted(years_all, years)
    yends = np.r_[ystarts[1:], years_all.size]
    complete = np.array([
        (yends[i] - ystarts[i]) in (365, _calendar_days(y))
        for i, y in enumerate(years)
    ])

    # Claims grouped by quadruple.
    claim_pos = claim_quad = claim_bids = claim_dates = None
    if claims_frame is not None and len(claims_frame):
        claim_bids = claims_frame["building_id"].to_numpy()
        claim_dates = claims_frame["flood_date"].to_numpy()
        b_index = {bid: i for i, bid in enumerate(bids)}
        claim_quad = np.array([quad_of_building[b_index[b]] for b in claim_bids])
        claim_pos = np.array([grid.date_pos(d) for d in claim_dates])

    n_windows = len(windows)
    ann_max = np.full((n_windows, n_q, years.size), np.nan)
    claim_probs = (np.full((n_windows, len(claims_frame)), np.nan)
                   if claim_pos is not None else None)

    for wi, nd in enumerate(windows):
        acc = np.full((grid.n_points, grid.n_days), np.nan)
        if grid.n_days >= nd:
            acc[:, nd - 1:] = sliding_window_view(
                grid.matrix, nd, axis=1).sum(axis=-1)
        for lo in range(0, n_q, chunk):
            hi = min(lo + chunk, n_q)
            local = np.maximum.reduce(
                [acc[quads[lo:hi, j]] for j in range(4)])
            for i, y in enumerate(years):
                if not complete[i]:
                    continue
                a = max(ystarts[i], nd - 1)
                b = yends[i]
                if a >= b:
                    continue
                seg = local[:, a:b]
                finite = np.all(np.isfinite(seg), axis=1)
                ann_max[wi, lo:hi, i] = np.where(finite, seg.max(axis=1), np.nan)
            if claim_pos is not None:
                in_chunk = np.flatnonzero((claim_quad >= lo) & (claim_quad < hi))
                for ci in in_chunk:
                    series = local[claim_quad[ci] - lo]
                    v = series[claim_pos[ci]]
                    if not np.isfinite(v):
                        raise ValueError(
                            f"claim at {claim_dates[ci]} lacks a full "
                            f"{nd}-day window"
                        )
                    hist = series[np.isfinite(series)]
                    claim_probs[wi, ci] = (
                        np.searchsorted(np.sort(hist), v, side="right") / hist.size
                    )
        del acc

    # Annual probabilities per quadruple and window.
    ann_prob = np.full((n_windows, n_q, years.size), np.nan)
    for wi in range(n_windows):
        for q in range(n_q):
            vals = ann_max[wi, q]
            ok = np.isfinite(vals)
            if not ok.any():
                raise ValueError(
                    f"no complete year for window {windows[wi]}; "
                    "the archive is too short"
                )
            sample = np.sort(vals[ok])
            ann_prob[wi, q, ok] = (
                np.searchsorted(sample, vals[ok], side="right") / sample.size
            )
    # Max across windows; incomplete years keep NaN without nanmax warnings.
    finite_any = np.isfinite(ann_prob).any(axis=0)
    ann_value = np.where(
        finite_any,
        np.max(np.where(np.isfinite(ann_prob), ann_prob, -np.inf), axis=0),
        np.nan,
    )

    # Per policy-year indicator rows.
    pol_b = policies_frame["building_id"].to_numpy()
    pol_y = policies_frame["year"].to_numpy()
    b_index = {bid: i for i, bid in enumerate(bids)}
    year_index = {int(y): i for i, y in enumerate(years)}
    pairs = pd.DataFrame({"building_id": pol_b, "year": pol_y}).drop_duplicates()
    rows_q = np.array([quad_of_building[b_index[b]] for b in pairs["building_id"]])
    rows_y = np.array([year_index.get(int(y), -1) for y in pairs["year"]])
    if (rows_y < 0).any():
        missing = sorted(set(int(y) for y in pairs["year"][rows_y < 0]))
        raise ValueError(f"policy years {missing} not covered by the rain grid")
    vals = ann_value[rows_q, rows_y]
    if not np.all(np.isfinite(vals)):
        bad_years = sorted(set(int(y) for y in pairs["year"][~np.isfinite(vals)]))
        raise ValueError(f"years {bad_years} incomplete in the grid")
    ann_frame = pd.DataFrame({
        "building_id": pairs["building_id"].to_numpy(),
        "year": pairs["year"].to_numpy(),
        "ann_milre": vals,
    })

    # Per claim indicator rows.
    if claim_pos is not None:
        milre_vals = claim_probs.max(axis=0)
        milre_frame = pd.DataFrame({
            "building_id": claim_bids,
            "flood_date": claim_dates,
            "milre": milre_vals,
        })
    else:
        milre_frame = pd.DataFrame(
            columns=["building_id", "flood_date", "milre"])

    long_frame = _long_format(windows, pairs, rows_q, rows_y, ann_prob, ann_value,
                              claim_bids, claim_dates, claim_probs)
    return IndicatorBundle(ann_frame, milre_frame, long_frame, nearest_rows)


def _calendar_days(year):
    return int((np.datetime64(f"{year + 1}-01-01") -
                np.datetime64(f"{year}-01-01")).astype(int))


def _long_format(windows, pairs, rows_q, rows_y, ann_prob, ann_value,
                 claim_bids, claim_dates, claim_probs):
    """Documented indicators.csv layout: one row per subject and window."""
    frames = []
    n_pairs = len(pairs)
    for wi, nd in enumerate(windows):
        frames.append(pd.DataFrame({
            "building_id": pairs["building_id"].to_numpy(),
            "year_or_date": pairs["year"].astype(str).to_numpy(),
            "window": np.full(n_pairs, nd),
            "prob": ann_prob[wi, rows_q, rows_y],
            "milre_or_annmilre": ann_value[rows_q, rows_y],
        }))
    if claim_bids is not None and len(claim_bids):
        milre_vals = claim_probs.max(axis=0)
        for wi, nd in enumerate(windows):
            frames.append(pd.DataFrame({
                "building_id": claim_bids,
                "year_or_date": [str(d) for d in claim_dates],
                "window": np.full(len(claim_bids), nd),
                "prob": claim_probs[wi],
                "milre_or_annmilre": milre_vals,
            }))
    return pd.concat(frames, ignore_index=True)

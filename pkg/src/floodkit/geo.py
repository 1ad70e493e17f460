"""Building-level geometry features in a local planar projection.

Distances to watercourses, neighbor counts, terrain slope and soil-sealing
buffers, and the 9-category composite exposure index combining the
river-overflow zoning band with watercourse proximity. All coordinates are
meters in a projected plane; rasters are plain ASCII grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

EARTH_RADIUS_M = 6_371_000.0

WCTRII_DEFAULTS = {"near_m": 100.0, "far_m": 500.0, "demote_above_m": 10.0}

# Soil raster class codes and their category labels.
SOIL_CODES = {1: "sand", 2: "clay", 3: "marl", 4: "limestone", 5: "silt", 6: "rock"}


class LocalProjection:
    """Equirectangular projection about a reference point, in meters."""

    def __init__(self, lat0, lon0):
        self.lat0 = float(lat0)
        self.lon0 = float(lon0)
        self._kx = EARTH_RADIUS_M * math.cos(math.radians(lat0)) * math.pi / 180.0
        self._ky = EARTH_RADIUS_M * math.pi / 180.0

    def to_xy(self, lat, lon):
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        return (lon - self.lon0) * self._kx, (lat - self.lat0) * self._ky

    def to_latlon(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.lat0 + y / self._ky, self.lon0 + x / self._kx


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters (vectorized)."""
    lat1, lon1 = np.radians(lat1), np.radians(lon1)
    lat2, lon2 = np.radians(lat2), np.radians(lon2)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(a))


@dataclass
class Raster:
    """ASCII-grid raster; row 0 is the top (northernmost) row."""

    xll: float
    yll: float
    cellsize: float
    data: np.ndarray
    nodata: float = -9999.0

    @property
    def nrows(self):
        return self.data.shape[0]

    @property
    def ncols(self):
        return self.data.shape[1]

    @property
    def xmax(self):
        return self.xll + self.ncols * self.cellsize

    @property
    def ymax(self):
        return self.yll + self.nrows * self.cellsize

    def contains_disk(self, x, y, radius):
        return (x - radius >= self.xll and x + radius <= self.xmax
                and y - radius >= self.yll and y + radius <= self.ymax)

    def cell_index(self, x, y):
        if not (self.xll <= x <= self.xmax and self.yll <= y <= self.ymax):
            raise ValueError(f"point ({x}, {y}) outside raster extent")
        col = min(int((x - self.xll) / self.cellsize), self.ncols - 1)
        row_up = min(int((y - self.yll) / self.cellsize), self.nrows - 1)
        return self.nrows - 1 - row_up, col

    def sample(self, x, y):
        i, j = self.cell_index(x, y)
        return float(self.data[i, j])

    def buffer_values(self, x, y, radius):
        """Values of cells whose centers lie within `radius` of (x, y)."""
        if not self.contains_disk(x, y, radius):
            raise ValueError(
                f"buffer of radius {radius} around ({x}, {y}) exits raster extent"
            )
        cs = self.cellsize
        j_lo = max(int((x - radius - self.xll) / cs) - 1, 0)
        j_hi = min(int((x + radius - self.xll) / cs) + 1, self.ncols - 1)
        rup_lo = max(int((y - radius - self.yll) / cs) - 1, 0)
        rup_hi = min(int((y + radius - self.yll) / cs) + 1, self.nrows - 1)
        cols = np.arange(j_lo, j_hi + 1)
        rups = np.arange(rup_lo, rup_hi + 1)
        cx = self.xll + (cols + 0.5) * cs
        cy = self.yll + (rups + 0.5) * cs
        dx2 = (cx - x) ** 2
        dy2 = (cy - y) ** 2
        mask = dy2[:, None] + dx2[None, :] <= radius * radius
        rows = self.nrows - 1 - rups
        window = self.data[np.ix_(rows, cols)]
        vals = window[mask]
        if vals.size == 0:
            raise ValueError("empty buffer: no cell center falls inside the radius")
        return vals

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"ncols {self.ncols}\n")
            fh.write(f"nrows {self.nrows}\n")
            fh.write(f"xllcorner {self.xll!r}\n")
            fh.write(f"yllcorner {self.yll!r}\n")
            fh.write(f"cellsize {self.cellsize!r}\n")
            fh.write(f"NODATA_value {self.nodata!r}\n")
            for row in self.data:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path):
        header = {}
        with open(path, "r", encoding="utf-8") as fh:
            for _ in range(6):
                key, val = fh.readline().split()
                header[key.lower()] = float(val)
            data = np.loadtxt(fh, dtype=float)
        data = np.atleast_2d(data)
        if data.shape != (int(header["nrows"]), int(header["ncols"])):
            raise ValueError(f"raster {path}: matrix shape does not match header")
        return cls(
            xll=header["xllcorner"], yll=header["yllcorner"],
            cellsize=header["cellsize"], data=data,
            nodata=header.get("nodata_value", -9999.0),
        )


@dataclass
class WatercourseLayer:
    """Polylines with per-vertex bed altitude, flattened to segment arrays."""

    x1: np.ndarray
    y1: np.ndarray
    x2: np.ndarray
    y2: np.ndarray
    alt1: np.ndarray
    alt2: np.ndarray

    @classmethod
    def from_polylines(cls, polylines):
        """polylines: iterable of (id, [(x, y, bed_altitude), ...])."""
        x1, y1, x2, y2, a1, a2 = [], [], [], [], [], []
        for pid, vertices in polylines:
            if len(vertices) < 2:
                raise ValueError(f"polyline {pid!r} has fewer than 2 vertices")
            for (xa, ya, aa), (xb, yb, ab) in zip(vertices[:-1], vertices[1:]):
                x1.append(xa); y1.append(ya); a1.append(aa)
                x2.append(xb); y2.append(yb); a2.append(ab)
        if not x1:
            raise ValueError("watercourse layer is empty")
        return cls(*(np.asarray(v, dtype=float) for v in (x1, y1, x2, y2, a1, a2)))

    @property
    def n_segments(self):
        return self.x1.size


def distance_to_watercourse(x, y, layer: WatercourseLayer, building_altitude):
    """Minimum point-to-segment distance and altitude gap to the river bed.

    The bed altitude at the nearest point is linearly interpolated along the
    segment; altitude_diff = building altitude - bed altitude. Ties across
    segments resolve to the first segment in layer order.
    """
    if layer.n_segments == 0:
        raise ValueError("watercourse layer is empty")
    dx = layer.x2 - layer.x1
    dy = layer.y2 - layer.y1
    seg_len2 = dx * dx + dy * dy
    px = x - layer.x1
    py = y - layer.y1
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (px * dx + py * dy) / seg_len2
    t = np.where(seg_len2 == 0.0, 0.0, t)
    t = np.clip(t, 0.0, 1.0)
    qx = layer.x1 + t * dx
    qy = layer.y1 + t * dy
    d2 = (x - qx) ** 2 + (y - qy) ** 2
    best = int(np.argmin(d2))
    bed = layer.alt1[best] + t[best] * (layer.alt2[best] - layer.alt1[best])
    return float(np.sqrt(d2[best])), float(building_altitude - bed)


def count_buildings_radius(index, xy_all, building_idx, radius=50.0):
    """Number of other buildings with center distance <= radius."""
    hits = index.query_ball_point(xy_all[building_idx], r=radius)
    return len(hits) - 1  # the building itself always matches


def build_neighbor_index(x, y):
    return cKDTree(np.column_stack([x, y]))


def max_slope_buffer(x, y, elevation: Raster, radius):
    """Max absolute elevation gap between the building cell and buffer cells."""
    b_elev = elevation.sample(x, y)
    vals = elevation.buffer_values(x, y, radius)
    return float(np.max(np.abs(vals - b_elev)))


def impervious_fraction(x, y, landcover: Raster, radius=200.0):
    """Share of impervious cells (class 1) among buffer cell centers."""
    vals = landcover.buffer_values(x, y, radius)
    return float(np.count_nonzero(vals == 1.0) / vals.size)


def majority_class_buffer(x, y, classes: Raster, radius):
    """Most frequent class code in the buffer; smallest code on ties."""
    vals = classes.buffer_values(x, y, radius).astype(int)
    codes, counts = np.unique(vals, return_counts=True)
    return int(codes[np.argmax(counts)])


TRI_BANDS = {"none": 0, "low": 1, "medium": 1, "high": 2}


def wctrii(tri_class, distance_watercourse, altitude_diff, thresholds=None):
    """Composite exposure category 1..9 = 3*tri_band + proximity_band + 1.

    tri_band: none=0, low/medium=1, high=2. Proximity: below `near_m` = 2,
    up to `far_m` = 1, beyond = 0; a building more than `demote_above_m`
    above the bed moves one proximity band toward far.
    """
    th = dict(WCTRII_DEFAULTS)
    if thresholds:
        th.update(thresholds)
    if tri_class not in TRI_BANDS:
        raise ValueError(f"invalid TRI class {tri_class!r}")
    tri_band = TRI_BANDS[tri_class]
    d = float(distance_watercourse)
    if d < 0:
        raise ValueError("distance must be non-negative")
    if d < th["near_m"]:
        prox = 2
    elif d <= th["far_m"]:
        prox = 1
    else:
        prox = 0
    if altitude_diff > th["demote_above_m"]:
        prox = max(prox - 1, 0)
    return 3 * tri_band + prox + 1

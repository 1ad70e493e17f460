"""Independent straight-line oracles used by the test suite.

These deliberately avoid the library's implementations: direct summation,
dense grids, exhaustive scans, textbook special-function expansions. They
are slow and obvious on purpose.
"""

import math

import numpy as np


# ---------------------------------------------------------------------------
# Chi-square survival function via regularized incomplete gamma
# ---------------------------------------------------------------------------

def _gamma_series(a, x, iters=500, eps=1e-15):
    """Lower regularized incomplete gamma P(a, x) by series expansion."""
    if x <= 0:
        return 0.0
    ap = a
    summ = 1.0 / a
    term = summ
    for _ in range(iters):
        ap += 1.0
        term *= x / ap
        summ += term
        if abs(term) < abs(summ) * eps:
            break
    return summ * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a, x, iters=500, eps=1e-15):
    """Upper regularized incomplete gamma Q(a, x) by continued fraction."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, iters + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_sf(x, df):
    """Survival function of the chi-square distribution."""
    if x <= 0:
        return 1.0
    a = df / 2.0
    x2 = x / 2.0
    if x2 < a + 1.0:
        return 1.0 - _gamma_series(a, x2)
    return _gamma_cf(a, x2)


# ---------------------------------------------------------------------------
# CSI dense threshold grid
# ---------------------------------------------------------------------------

def csi_at_threshold(y, p, t):
    pred = p >= t
    tp = int(np.sum((y == 1) & pred))
    fp = int(np.sum((y == 0) & pred))
    fn = int(np.sum((y == 1) & ~pred))
    denom = tp + fp + fn
    return tp / denom if denom else 0.0


def csi_grid_max(y, p, n_grid=10_001):
    lo = min(p.min(), 0.0)
    hi = max(p.max(), 1.0) + 1e-9
    best = 0.0
    for t in np.linspace(lo, hi, n_grid):
        best = max(best, csi_at_threshold(y, p, t))
    return best


# ---------------------------------------------------------------------------
# Naive 1-D k-means dynamic program (direct interval costs, no prefix sums)
# ---------------------------------------------------------------------------

def kmeans_1d_dp(values, k):
    """Optimal within-cluster SS by a plain quadratic DP on sorted values."""
    xs = np.sort(np.asarray(values, dtype=float))
    n = xs.size

    def cost(i, j):  # cost of xs[i:j]
        seg = xs[i:j]
        return float(np.sum((seg - seg.mean()) ** 2))

    INF = float("inf")
    D = [[INF] * (n + 1) for _ in range(k + 1)]
    D[0][0] = 0.0
    for c in range(1, k + 1):
        for j in range(c, n + 1):
            best = INF
            for i in range(c - 1, j):
                v = D[c - 1][i] + cost(i, j)
                if v < best:
                    best = v
            D[c][j] = best
    return D[k][n]


# ---------------------------------------------------------------------------
# Geometry brute force
# ---------------------------------------------------------------------------

def point_segment_distance(px, py, x1, y1, x2, y2):
    dx = x2 - x1
    dy = y2 - y1
    L2 = dx * dx + dy * dy
    t = 0.0 if L2 == 0.0 else ((px - x1) * dx + (py - y1) * dy) / L2
    t = min(max(t, 0.0), 1.0)
    qx = x1 + t * dx
    qy = y1 + t * dy
    return math.sqrt((px - qx) ** 2 + (py - qy) ** 2), t


def brute_min_distance(px, py, segments):
    """segments: iterable of (x1, y1, x2, y2, a1, a2)."""
    best = None
    for (x1, y1, x2, y2, a1, a2) in segments:
        d, t = point_segment_distance(px, py, x1, y1, x2, y2)
        if best is None or d < best[0]:
            best = (d, a1 + t * (a2 - a1))
    return best


def brute_count_within(px, py, xs, ys, radius, self_index=None):
    n = 0
    for i in range(xs.size):
        if self_index is not None and i == self_index:
            continue
        if (xs[i] - px) ** 2 + (ys[i] - py) ** 2 <= radius * radius:
            n += 1
    return n


def brute_raster_scan(raster, x, y, radius):
    """All in-buffer cell values by scanning the full raster."""
    vals = []
    cs = raster.cellsize
    for i in range(raster.nrows):
        for j in range(raster.ncols):
            cx = raster.xll + (j + 0.5) * cs
            cy = raster.yll + (raster.nrows - 1 - i + 0.5) * cs
            if (cx - x) ** 2 + (cy - y) ** 2 <= radius * radius:
                vals.append(raster.data[i, j])
    return np.array(vals)


# ---------------------------------------------------------------------------
# Rank-based indicator oracle
# ---------------------------------------------------------------------------

def brute_trailing_sum(x, nd):
    """Direct per-day window re-summation."""
    out = np.full(x.size, np.nan)
    for d in range(nd - 1, x.size):
        out[d] = np.sum(x[d - nd + 1:d + 1])
    return out


def rank_prob(history, value):
    """Sort + rank empirical CDF, non-strict."""
    h = np.sort(np.asarray(history, dtype=float))
    return float(np.searchsorted(h, value, side="right") / h.size)

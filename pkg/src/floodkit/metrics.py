"""Evaluation metrics for the occurrence and severity models.

All functions are pure, permutation-invariant over rows, and operate on
plain numpy arrays. Ranking metrics (Gini, CSI sweep) aggregate tied
predictions so results do not depend on input order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import PROB_CLIP

# Metrics where smaller is better; everything else improves upward.
LOWER_IS_BETTER = {"rmse", "deviance", "logloss", "n_params"}


def rmse(y, y_hat):
    """Root mean squared error."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.size == 0:
        raise ValueError("rmse: empty input")
    if y.shape != y_hat.shape:
        raise ValueError("rmse: length mismatch")
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def gini(y, y_hat, exposure=None):
    """Gini index from the prediction-ranked Lorenz curve.

    Rows are ordered by descending prediction; tied predictions are merged
    into a single Lorenz segment so the statistic is deterministic under
    any permutation of the input. The curve tracks cumulative exposure
    share against cumulative observed-loss share and the index is twice
    the trapezoidal area between the curve and the diagonal. A constant
    prediction yields exactly 0.
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError("gini: length mismatch")
    total = y.sum()
    if not total > 0:
        raise ValueError("gini: observed outcomes sum to zero")
    if exposure is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(exposure, dtype=float)

    order = np.argsort(-y_hat, kind="stable")
    ys, ps, ws = y[order], y_hat[order], w[order]

    # Group consecutive equal predictions into single segments.
    boundary = np.flatnonzero(np.diff(ps) != 0) + 1
    grp_y = np.add.reduceat(ys, np.r_[0, boundary])
    grp_w = np.add.reduceat(ws, np.r_[0, boundary])

    P = np.cumsum(grp_w) / grp_w.sum()
    R = np.cumsum(grp_y) / total
    P = np.r_[0.0, P]
    R = np.r_[0.0, R]
    area = float(np.trapezoid(R, P))
    return 2.0 * (area - 0.5)


def logloss(y, p):
    """Mean binary cross-entropy with shared probability clipping."""
    y = np.asarray(y, dtype=float)
    p = np.clip(np.asarray(p, dtype=float), PROB_CLIP, 1.0 - PROB_CLIP)
    if y.size == 0:
        raise ValueError("logloss: empty input")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def csi_sweep(y, p):
    """Maximize the critical success index over decision thresholds.

    Candidate thresholds are the smallest distinct prediction (classify
    everything positive) plus the midpoints between consecutive distinct
    predictions, which covers every achievable confusion matrix. Rows with
    prediction >= threshold are labelled positive. Returns
    (csi_max, threshold, recall, precision) at the maximizing threshold,
    smallest threshold on ties.
    """
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("csi_sweep: no positive outcomes")

    order = np.argsort(p, kind="stable")
    ps, ys = p[order], y[order]
    distinct = np.flatnonzero(np.r_[True, np.diff(ps) != 0])

    # Cumulative positives/counts strictly below each distinct value.
    cum_pos = np.r_[0.0, np.cumsum(ys)]
    below_pos = cum_pos[distinct]
    below_n = distinct.astype(float)

    # Predicted positive iff p >= t: TP/FP counts for a cut below distinct[i].
    tp = n_pos - below_pos
    fp = (len(ys) - below_n) - tp
    fn = below_pos
    csi = tp / (tp + fp + fn)

    vals = ps[distinct]
    thresholds = np.empty_like(vals)
    thresholds[0] = vals[0]
    thresholds[1:] = 0.5 * (vals[:-1] + vals[1:])

    best = int(np.argmax(csi))  # first (= smallest threshold) on ties
    tp_b, fp_b, fn_b = tp[best], fp[best], fn[best]
    recall = tp_b / (tp_b + fn_b)
    precision = tp_b / (tp_b + fp_b) if (tp_b + fp_b) > 0 else 0.0
    return float(csi[best]), float(thresholds[best]), float(recall), float(precision)


def pearson_residuals(family, y, mu_hat):
    """Pearson residuals: (y - mu) scaled by the family's sd proxy."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu_hat, dtype=float)
    if family == "bernoulli_logit":
        if np.any((mu <= 0.0) | (mu >= 1.0)):
            raise ValueError("pearson_residuals: probabilities must lie strictly in (0, 1)")
        return (y - mu) / np.sqrt(mu * (1.0 - mu))
    if family == "gamma_log":
        if np.any(mu <= 0.0):
            raise ValueError("pearson_residuals: gamma means must be positive")
        return (y - mu) / mu
    raise ValueError(f"pearson_residuals: unknown family {family!r}")


@dataclass
class MetricReport:
    """One row of the model comparison tables."""

    model_name: str
    n_params: int
    rmse: float | None = None
    gini: float | None = None
    deviance: float | None = None
    logloss: float | None = None
    csi_max: float | None = None
    csi_threshold: float | None = None
    recall_at_csi: float | None = None
    precision_at_csi: float | None = None
    relative_deltas: dict = field(default_factory=dict)

    _METRICS = (
        "rmse", "gini", "deviance", "logloss",
        "csi_max", "recall_at_csi", "precision_at_csi", "n_params",
    )

    def as_dict(self):
        out = {"model_name": self.model_name}
        for m in self._METRICS:
            out[m] = getattr(self, m)
        out["csi_threshold"] = self.csi_threshold
        for k, v in self.relative_deltas.items():
            out[f"delta_{k}_pct"] = v
        return out

    def deltas_vs(self, baseline: "MetricReport"):
        """Percent improvement per metric relative to a named baseline.

        Positive means better: lower-is-better metrics report the relative
        drop, higher-is-better metrics the relative rise.
        """
        deltas = {}
        for m in self._METRICS:
            new = getattr(self, m)
            base = getattr(baseline, m)
            if new is None or base is None or base == 0:
                continue
            key = "csi" if m == "csi_max" else m
            if m in LOWER_IS_BETTER or m == "n_params":
                deltas[key] = 100.0 * (base - new) / abs(base)
            else:
                deltas[key] = 100.0 * (new - base) / abs(base)
        self.relative_deltas = deltas
        self.relative_deltas["baseline"] = baseline.model_name
        return deltas

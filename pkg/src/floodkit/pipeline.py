"""Evaluation harness: nested layers, cross-validation, importance, residuals.

Occurrence models are Bernoulli-logit with class-balanced weights multiplied
by exposure; severity models are Gamma-log on claims only, unweighted.
Metrics are computed on pooled out-of-fold predictions (per-fold rows are
also emitted). Everything is deterministic given (data, config, seed).
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import glm, metrics
from .data_model import FeatureTable, LAYER_ORDER

log = logging.getLogger(__name__)

SIGNIFICANCE_LOG10 = math.log10(0.05)


def stratified_folds(targets, k=5, seed=0):
    """Deterministic stratified fold assignment for a binary target.

    Positives and negatives are shuffled separately and dealt in one
    round-robin pass, so fold sizes differ by at most one and positive
    counts per fold differ by at most one.
    """
    y = np.asarray(targets)
    n = y.size
    if k < 2:
        raise ValueError("k must be >= 2")
    pos = np.flatnonzero(y > 0)
    neg = np.flatnonzero(y == 0)
    if pos.size < k:
        raise ValueError(f"{pos.size} positives cannot stratify {k} folds")
    rng = np.random.default_rng(seed)
    order = np.r_[rng.permutation(pos), rng.permutation(neg)]
    folds = np.empty(n, dtype=int)
    folds[order] = np.arange(n) % k
    return folds


def plain_folds(n, k=5, seed=0):
    """Shuffled k-fold assignment without stratification."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"{n} rows cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=int)
    folds[rng.permutation(n)] = np.arange(n) % k
    return folds


def _map_ordered(fn, items, threads):
    if threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    workers = threads if threads and threads > 0 else min(4, len(items))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def model_spec_for(task, terms, reference_levels=None):
    if task == "occurrence":
        return glm.ModelSpec(family="bernoulli_logit", terms=list(terms),
                             weight_scheme="class_balanced",
                             reference_levels=reference_levels or {})
    return glm.ModelSpec(family="gamma_log", terms=list(terms),
                         weight_scheme="none",
                         reference_levels=reference_levels or {})


@dataclass
class LayerRun:
    layer: str
    task: str
    fold_models: list
    oof_predictions: np.ndarray
    report: metrics.MetricReport
    full_model: glm.FittedGlm
    fold_reports: list = field(default_factory=list)
    fold_assignment: np.ndarray = None
    flagged: bool = False


def _task_report(name, task, y, p, n_params):
    if task == "occurrence":
        csi, thr, rec, prec = metrics.csi_sweep(y, p)
        return metrics.MetricReport(
            model_name=name, n_params=n_params,
            gini=metrics.gini(y, p),
            logloss=metrics.logloss(y, p),
            deviance=glm.deviance("bernoulli_logit", y, p),
            csi_max=csi, csi_threshold=thr,
            recall_at_csi=rec, precision_at_csi=prec,
        )
    return metrics.MetricReport(
        model_name=name, n_params=n_params,
        rmse=metrics.rmse(y, p),
        gini=metrics.gini(y, p),
        deviance=glm.deviance("gamma_log", y, p),
    )


def run_layer(table: FeatureTable, layer, task, terms, k=5, seed=0, threads=1):
    """Cross-validated fits for one layer plus a full-data refit.

    The dummy layer (severity only) has no covariates: it is scored on its
    constant full-data training mean, so its Gini is identically zero.
    Non-convergent folds flag the run but metrics are still reported.
    """
    frame = table.frame
    y = frame[table.target].to_numpy(dtype=float)
    spec = model_spec_for(task, terms)
    if task == "occurrence":
        folds = stratified_folds(y, k=k, seed=seed)
        base_weights = table.exposure()
    else:
        folds = plain_folds(len(frame), k=k, seed=seed)
        base_weights = np.ones(len(frame))

    def fit_fold(f):
        train = folds != f
        fit, _ = glm.fit_model(
            table, spec, frame=frame[train],
            weights=base_weights[train], on_singular="lstsq")
        test_frame = frame[~train]
        return fit, fit.predict(table, frame=test_frame)

    results = _map_ordered(fit_fold, list(range(k)), threads)
    oof = np.empty(len(frame))
    fold_models = []
    fold_reports = []
    flagged = False
    for f, (fit, preds) in enumerate(results):
        mask = folds == f
        oof[mask] = preds
        fold_models.append(fit)
        if not fit.converged:
            flagged = True
            log.warning("layer %s/%s fold %d flagged non-convergent",
                        task, layer, f)
        fold_reports.append(
            _task_report(f"{layer}[fold{f}]", task, y[mask], preds, fit.n_params))

    full_fit, _ = glm.fit_model(table, spec, frame=frame,
                                weights=base_weights, on_singular="lstsq")
    if layer == "dummy":
        oof = full_fit.predict(table, frame=frame)
    report = _task_report(layer, task, y, oof,
                          0 if layer == "dummy" else full_fit.n_params)
    return LayerRun(layer=layer, task=task, fold_models=fold_models,
                    oof_predictions=oof, report=report, full_model=full_fit,
                    fold_reports=fold_reports, fold_assignment=folds,
                    flagged=flagged)


def run_all_layers(tables, task, terms_by_layer, k=5, seed=0, threads=1,
                   include_dummy=None):
    """Run every nested layer; relative deltas are against the ins layer.

    `tables` maps layer name -> FeatureTable (each layer sees its own column
    set). The dummy benchmark (training-mean, no covariates) is included for
    the severity task only.
    """
    if include_dummy is None:
        include_dummy = task == "severity"
    runs = {}
    order = list(LAYER_ORDER)
    for layer in order:
        runs[layer] = run_layer(tables[layer], layer, task,
                                terms_by_layer[layer], k=k, seed=seed,
                                threads=threads)
    if include_dummy:
        runs["dummy"] = run_layer(tables["ins"], "dummy", task, [], k=k,
                                  seed=seed, threads=threads)
        order = ["dummy"] + order
    baseline = runs["ins"].report
    for layer in order:
        if layer != "ins":
            runs[layer].report.deltas_vs(baseline)
    return runs, order


def reports_frame(runs, order):
    rows = [runs[layer].report.as_dict() for layer in order]
    frame = pd.DataFrame(rows)
    return frame


def fold_reports_frame(runs, order):
    rows = []
    for layer in order:
        for rep in runs[layer].fold_reports:
            rows.append(rep.as_dict())
    return pd.DataFrame(rows)


def importance_ranking(table: FeatureTable, task, terms, seed=0, threads=1):
    """One likelihood-ratio test per term against the full model.

    Terms whose removal cannot be tested (refit failure or no identifiable
    columns) are reported as untestable. Output is sorted by ascending
    log10 p-value with the 5% significance line attached.
    """
    frame = table.frame
    spec = model_spec_for(task, terms)
    weights = table.exposure() if task == "occurrence" else np.ones(len(frame))
    full_fit, full_design = glm.fit_model(table, spec, frame=frame,
                                          weights=weights, on_singular="lstsq")
    if not full_fit.converged:
        raise ValueError("importance ranking requires a converged full model")

    def test_term(term):
        rest_terms = [t for t in terms if t != term]
        rest_spec = model_spec_for(task, rest_terms,
                                   reference_levels=spec.reference_levels)
        try:
            rest_fit, _ = glm.fit_model(table, rest_spec, frame=frame,
                                        weights=weights)
            stat, df, log10_p = glm.likelihood_ratio_test(full_fit, rest_fit)
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("term %s untestable: %s", term, exc)
            return term, np.nan, 0, np.nan, True
        if df == 0:
            return term, stat, df, np.nan, True
        return term, stat, df, log10_p, False

    rows = _map_ordered(test_term, list(terms), threads)
    frame_out = pd.DataFrame(
        rows, columns=["term", "statistic", "df", "log10_p", "untestable"])
    frame_out["signif_log10"] = SIGNIFICANCE_LOG10
    frame_out = frame_out.sort_values(
        ["untestable", "log10_p", "term"], kind="stable").reset_index(drop=True)
    return frame_out


def grouped_observed_vs_predicted(table: FeatureTable, predictions, group_var,
                                  n_bins=10):
    """Exposure totals and exposure-weighted observed/predicted means by group.

    Numeric groupers are quantile-binned into n_bins; `a:b` products of two
    numeric columns are supported. Empty groups are omitted.
    """
    frame = table.frame
    y = frame[table.target].to_numpy(dtype=float)
    p = np.asarray(predictions, dtype=float)
    expo = table.exposure()

    if ":" in group_var:
        a, b = group_var.split(":")
        values = frame[a].to_numpy(dtype=float) * frame[b].to_numpy(dtype=float)
        name = group_var
    else:
        name = group_var
        if group_var in table.levels:
            values = frame[group_var].to_numpy()
            groups = values
            return _group_table(groups, y, p, expo, name)
        values = frame[group_var].to_numpy(dtype=float)

    edges = np.unique(np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1)))
    if edges.size < 2:
        groups = np.full(values.size, f"[{edges[0]!r}]")
        return _group_table(groups, y, p, expo, name)
    codes = np.clip(np.searchsorted(edges, values, side="right") - 1,
                    0, edges.size - 2)
    labels = np.array([f"q{i + 1:02d}" for i in range(edges.size - 1)])
    return _group_table(labels[codes], y, p, expo, name)


def _group_table(groups, y, p, expo, name):
    frame = pd.DataFrame({"group": groups, "y": y, "p": p, "exposure": expo})
    out = []
    for g, sub in frame.groupby("group", sort=True):
        wsum = sub["exposure"].sum()
        if wsum <= 0 or not len(sub):
            log.warning("group %r empty; omitted", g)
            continue
        out.append({
            "group_var": name,
            "group": g,
            "exposure": wsum,
            "observed_mean": float(np.average(sub["y"], weights=sub["exposure"])),
            "predicted_mean": float(np.average(sub["p"], weights=sub["exposure"])),
        })
    return pd.DataFrame(out)


def residual_map(table: FeatureTable, predictions, family):
    """Median Pearson residual and row count per municipality."""
    frame = table.frame
    y = frame[table.target].to_numpy(dtype=float)
    resid = metrics.pearson_residuals(family, y, np.asarray(predictions))
    mframe = pd.DataFrame({
        "municipality_code": frame["municipality_code"].to_numpy(),
        "resid": resid,
    })
    rows = []
    for code, sub in mframe.groupby("municipality_code", sort=True):
        rows.append({
            "municipality_code": code,
            "median_pearson_residual": float(sub["resid"].median()),
            "n_rows": int(len(sub)),
        })
    return pd.DataFrame(rows)


def write_residual_geojson(map_frame, buildings_frame, path):
    """Point-geometry GeoJSON at municipality centroids (mean lat/lon)."""
    cent = buildings_frame.groupby("municipality_code")[["lat", "lon"]].mean()
    features = []
    for row in map_frame.itertuples(index=False):
        if row.municipality_code not in cent.index:
            continue
        lat = float(cent.loc[row.municipality_code, "lat"])
        lon = float(cent.loc[row.municipality_code, "lon"])
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": {
                "municipality_code": row.municipality_code,
                "median_pearson_residual": row.median_pearson_residual,
                "n_rows": row.n_rows,
            },
        })
    payload = {"type": "FeatureCollection", "features": features}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def pure_premium(occurrence_prob, severity_mean):
    """Expected annual loss: occurrence probability times expected severity."""
    return np.asarray(occurrence_prob, dtype=float) * np.asarray(
        severity_mean, dtype=float)

"""Weighted GLM fitting: design matrices, IRLS, deviance, nested-model tests.

Two families are supported: Bernoulli with logit link (claim occurrence)
and Gamma with log link (claim severity). Fitting is plain iteratively
reweighted least squares with step-halving; no regularization. Observation
weights (class re-weighting, exposure) multiply the IRLS working weights.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.stats import chi2

from . import PROB_CLIP

log = logging.getLogger(__name__)

FAMILIES = ("bernoulli_logit", "gamma_log")


def class_weights(targets):
    """Balanced class weights (w0, w1) with n0*w0 = n1*w1 = n/2."""
    y = np.asarray(targets)
    n = y.size
    n1 = int(np.count_nonzero(y))
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        raise ValueError("class_weights: both classes must be present")
    return n / (2.0 * n0), n / (2.0 * n1)


@dataclass
class ModelSpec:
    """Family, term list and weighting scheme for one model layer.

    Terms are feature-table column names; a pairwise interaction is written
    "a:b". Categorical reference levels default to the most frequent level
    unless pinned in `reference_levels`.
    """

    family: str
    terms: list
    weight_scheme: str = "none"  # none | class_balanced
    reference_levels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.weight_scheme not in ("none", "class_balanced"):
            raise ValueError(f"unknown weight scheme {self.weight_scheme!r}")
        for t in self.terms:
            if t.count(":") > 1:
                raise ValueError(f"interaction {t!r} must reference exactly two terms")


@dataclass
class DesignMatrix:
    X: np.ndarray
    column_names: list
    row_weights: np.ndarray
    term_columns: dict           # term -> list of column indexes (post-pruning)
    levels: dict                 # categorical column -> level list (training order)
    reference_levels: dict       # categorical column -> reference level used
    pruned: list = field(default_factory=list)

    @property
    def n_rows(self):
        return self.X.shape[0]

    @property
    def n_cols(self):
        return self.X.shape[1]


def _encode_term(frame, term, levels, references):
    """Columns and names for one main effect on a given frame."""
    if term in levels:
        lvls = levels[term]
        ref = references[term]
        col = frame[term].to_numpy()
        known = set(lvls)
        seen = set(np.unique(col).tolist())
        unseen = seen - known
        if unseen:
            raise ValueError(
                f"unseen level(s) {sorted(unseen)} for categorical {term!r}"
            )
        cols, names = [], []
        for lvl in lvls:
            if lvl == ref:
                continue
            cols.append((col == lvl).astype(float))
            names.append(f"{term}[{lvl}]")
        return cols, names
    values = frame[term].to_numpy(dtype=float)
    return [values], [term]


def build_design(table, spec: ModelSpec, *, frame=None, weights=None,
                 levels=None, references=None, prune=True,
                 on_deficient="raise"):
    """Encode a feature table into a numeric design matrix.

    Intercept first, then per-term one-hot expansions (declared reference
    level dropped), then interactions as elementwise products of the
    parents' encoded columns. With prune=True constant and duplicate columns
    are dropped with a warning and the remaining columns must be linearly
    independent (on_deficient="prune" drops dependent columns instead of
    raising). Scoring paths use prune=False and select columns by name.

    `levels`/`references` override the training-time encoding when scoring
    new data with an already-fitted model.
    """
    frame = table.frame if frame is None else frame
    if levels is None:
        levels = dict(table.levels)
    if references is None:
        references = {}
        for col, lvls in levels.items():
            if col in spec.reference_levels:
                references[col] = spec.reference_levels[col]
            else:
                counts = frame[col].value_counts()
                references[col] = max(lvls, key=lambda l: (counts.get(l, 0), ))
        for col, ref in references.items():
            if ref not in levels[col]:
                raise ValueError(f"reference level {ref!r} unknown for {col!r}")

    n = len(frame)
    columns = [np.ones(n)]
    names = ["intercept"]
    term_names = {}

    for term in spec.terms:
        if ":" in term:
            a, b = term.split(":")
            for parent in (a, b):
                if parent not in frame.columns:
                    raise ValueError(f"interaction parent {parent!r} missing from table")
            cols_a, names_a = _encode_term(frame, a, levels, references)
            cols_b, names_b = _encode_term(frame, b, levels, references)
            enc = []
            for ca, na in zip(cols_a, names_a):
                for cb, nb in zip(cols_b, names_b):
                    columns.append(ca * cb)
                    names.append(f"{na}:{nb}")
                    enc.append(f"{na}:{nb}")
            term_names[term] = enc
        else:
            if term not in frame.columns:
                raise ValueError(f"term {term!r} missing from table")
            cols, enc_names = _encode_term(frame, term, levels, references)
            for c, nm in zip(cols, enc_names):
                columns.append(c)
                names.append(nm)
            term_names[term] = list(enc_names)

    X = np.column_stack(columns)

    pruned = []
    if prune:
        # Constant and exact-duplicate columns first (intercept always kept).
        keep = [0]
        seen_keys = {X[:, 0].tobytes()}
        for j in range(1, X.shape[1]):
            col = X[:, j]
            if np.all(col == col[0]):
                pruned.append(names[j])
                continue
            key = col.tobytes()
            if key in seen_keys:
                pruned.append(names[j])
                continue
            seen_keys.add(key)
            keep.append(j)
        if pruned:
            log.warning("pruned %d degenerate design column(s): %s",
                        len(pruned), pruned)
            X = X[:, keep]
            names = [names[j] for j in keep]

        dependent = _rank_deficient_columns(X)
        if dependent:
            collinear = [names[j] for j in dependent]
            if on_deficient == "prune":
                log.warning("pruned %d collinear design column(s): %s",
                            len(dependent), collinear)
                pruned.extend(collinear)
                keep2 = [j for j in range(X.shape[1]) if j not in set(dependent)]
                X = X[:, keep2]
                names = [names[j] for j in keep2]
            else:
                raise ValueError(
                    f"design matrix is rank deficient; collinear columns: {collinear}"
                )

    name_pos = {nm: j for j, nm in enumerate(names)}
    term_columns = {
        t: [name_pos[nm] for nm in enc if nm in name_pos]
        for t, enc in term_names.items()
    }

    if weights is None:
        weights = np.ones(n)
    return DesignMatrix(
        X=X, column_names=names, row_weights=np.asarray(weights, dtype=float),
        term_columns=term_columns, levels=levels, reference_levels=references,
        pruned=pruned,
    )


def _rank_deficient_columns(X):
    """Indexes of columns outside the leading full-rank pivot set."""
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.count_nonzero(diag > tol))
    if rank >= X.shape[1]:
        return []
    return sorted(int(j) for j in piv[rank:])


def _mu_of_eta(family, eta):
    if family == "bernoulli_logit":
        mu = 1.0 / (1.0 + np.exp(-eta))
        return np.clip(mu, PROB_CLIP, 1.0 - PROB_CLIP)
    return np.exp(np.clip(eta, -700.0, 700.0))


def deviance(family, targets, fitted_means, weights=None):
    """Family deviance; zero iff the fit is exact."""
    y = np.asarray(targets, dtype=float)
    mu = np.asarray(fitted_means, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if family == "bernoulli_logit":
        mu = np.clip(mu, PROB_CLIP, 1.0 - PROB_CLIP)
        return float(-2.0 * np.sum(w * (y * np.log(mu) + (1.0 - y) * np.log1p(-mu))))
    if family == "gamma_log":
        if np.any(mu <= 0.0):
            raise ValueError("gamma deviance: fitted means must be positive")
        if np.any(y <= 0.0):
            raise ValueError("gamma deviance: targets must be positive")
        return float(2.0 * np.sum(w * ((y - mu) / mu - np.log(y / mu))))
    raise ValueError(f"unknown family {family!r}")


def log_likelihood(family, targets, fitted_means, weights=None):
    """Weighted log-likelihood (gamma: unit-dispersion quasi-likelihood)."""
    y = np.asarray(targets, dtype=float)
    mu = np.asarray(fitted_means, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if family == "bernoulli_logit":
        mu = np.clip(mu, PROB_CLIP, 1.0 - PROB_CLIP)
        return float(np.sum(w * (y * np.log(mu) + (1.0 - y) * np.log1p(-mu))))
    if family == "gamma_log":
        return float(np.sum(w * (-y / mu - np.log(mu))))
    raise ValueError(f"unknown family {family!r}")


def log_likelihood_at(design: DesignMatrix, targets, family, beta):
    """Weighted log-likelihood as a function of the coefficient vector."""
    eta = design.X @ np.asarray(beta, dtype=float)
    mu = _mu_of_eta(family, eta)
    return log_likelihood(family, targets, mu, design.row_weights)


@dataclass
class FittedGlm:
    spec: ModelSpec
    beta: np.ndarray
    column_names: list
    deviance: float
    log_likelihood: float
    n_params: int
    converged: bool
    iterations: int
    n_obs: int
    sum_weights: float
    dispersion: float
    beta_se: np.ndarray
    beta_se_robust: np.ndarray
    levels: dict
    reference_levels: dict

    def linear_predictor(self, table, frame=None):
        design = build_design(
            table, self.spec, frame=frame,
            levels=self.levels, references=self.reference_levels, prune=False,
        )
        pos = {nm: j for j, nm in enumerate(design.column_names)}
        missing = [nm for nm in self.column_names if nm not in pos]
        if missing:
            raise ValueError(f"scoring design lacks fitted column(s) {missing}")
        idx = [pos[nm] for nm in self.column_names]
        return design.X[:, idx] @ self.beta

    def predict(self, table, frame=None):
        """Fitted means on a (new) feature table."""
        return _mu_of_eta(self.spec.family, self.linear_predictor(table, frame=frame))

    def to_jsonable(self):
        return {
            "family": self.spec.family,
            "terms": list(self.spec.terms),
            "weight_scheme": self.spec.weight_scheme,
            "reference_levels": dict(self.reference_levels),
            "levels": {k: list(v) for k, v in self.levels.items()},
            "beta": {name: float(b) for name, b in zip(self.column_names, self.beta)},
            "beta_se": {name: float(s) for name, s in zip(self.column_names, self.beta_se)},
            "deviance": self.deviance,
            "log_likelihood": self.log_likelihood,
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "iterations": self.iterations,
            "dispersion": self.dispersion,
        }


def _score_residuals(family, y, mu, w):
    """Per-row d(loglik)/d(eta), i.e. the score before the design projection."""
    if family == "bernoulli_logit":
        return w * (y - mu)
    return w * (y - mu) / mu


def fit_irls(design: DesignMatrix, targets, family, *,
             max_iter=100, tol=1e-8, gtol=1e-7, on_singular="raise"):
    """Fit by iteratively reweighted least squares.

    Stops when the relative deviance change drops below `tol` and the
    score-equation gradient max-abs component is below `gtol`, with
    step-halving whenever a full step would increase the deviance.
    """
    X = design.X
    y = np.asarray(targets, dtype=float)
    w = design.row_weights
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError("targets length does not match design")
    if family == "gamma_log" and np.any(y <= 0.0):
        raise ValueError("gamma targets must be strictly positive")

    if family == "bernoulli_logit":
        mu = np.clip((y + 0.5) / 2.0, PROB_CLIP, 1.0 - PROB_CLIP)
        eta = np.log(mu / (1.0 - mu))
    else:
        mu = (y + y.mean()) / 2.0
        eta = np.log(mu)

    beta = np.zeros(p)
    # The heuristic per-observation initialization only seeds the first
    # working response; the step-halving baseline starts at +inf so the
    # first solve is always accepted.
    dev = np.inf
    converged = False
    singular = False
    it = 0
    for it in range(1, max_iter + 1):
        if family == "bernoulli_logit":
            W = w * mu * (1.0 - mu)
            z = eta + (y - mu) / (mu * (1.0 - mu))
        else:
            W = w
            z = eta + (y - mu) / mu

        XtW = X.T * W
        A = XtW @ X
        b = XtW @ z
        try:
            beta_new = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            if on_singular == "lstsq":
                beta_new = np.linalg.lstsq(A, b, rcond=None)[0]
                singular = True
            else:
                raise ValueError(
                    "IRLS normal equations are singular; "
                    "check for collinear or empty design columns"
                )

        # Step-halving on deviance increase.
        step = beta_new - beta
        factor = 1.0
        for _ in range(30):
            cand = beta + factor * step
            eta_c = X @ cand
            mu_c = _mu_of_eta(family, eta_c)
            dev_c = deviance(family, y, mu_c, w)
            if dev_c <= dev * (1.0 + 1e-12) or factor < 1e-8:
                break
            factor *= 0.5
        beta, eta, mu, dev_new = cand, eta_c, mu_c, dev_c

        grad = X.T @ _score_residuals(family, y, mu, w)
        rel_change = abs(dev - dev_new) / max(abs(dev_new), 1e-12)
        dev = dev_new
        if rel_change < tol and np.max(np.abs(grad)) < gtol:
            converged = True
            break

    if singular:
        converged = False

    # Pearson dispersion (gamma only; logistic uses 1).
    variance = mu * (1.0 - mu) if family == "bernoulli_logit" else mu ** 2
    dof = max(n - p, 1)
    if family == "gamma_log":
        dispersion = float(np.sum(w * (y - mu) ** 2 / variance) / dof)
    else:
        dispersion = 1.0

    if family == "bernoulli_logit":
        W = w * mu * (1.0 - mu)
    else:
        W = w
    A = X.T @ (X * W[:, None])
    try:
        A_inv = np.linalg.inv(A)
        se = np.sqrt(np.maximum(np.diag(A_inv) * dispersion, 0.0))
        s = _score_residuals(family, y, mu, w)
        B = X.T @ (X * (s ** 2)[:, None])
        cov_robust = A_inv @ B @ A_inv
        se_robust = np.sqrt(np.maximum(np.diag(cov_robust), 0.0))
    except np.linalg.LinAlgError:
        se = np.full(p, np.nan)
        se_robust = np.full(p, np.nan)

    return FittedGlm(
        spec=ModelSpec(family=family, terms=list(design.term_columns.keys())),
        beta=beta,
        column_names=list(design.column_names),
        deviance=dev,
        log_likelihood=log_likelihood(family, y, mu, w),
        n_params=p,
        converged=converged,
        iterations=it,
        n_obs=n,
        sum_weights=float(w.sum()),
        dispersion=dispersion,
        beta_se=se,
        beta_se_robust=se_robust,
        levels=design.levels,
        reference_levels=design.reference_levels,
    )


def fit_model(table, spec: ModelSpec, *, frame=None, weights=None, on_singular="raise"):
    """Build the design for `spec` and fit; returns the FittedGlm with its spec."""
    frame = table.frame if frame is None else frame
    y = frame[table.target].to_numpy(dtype=float)
    if weights is None:
        weights = np.ones(len(frame))
    else:
        weights = np.asarray(weights, dtype=float)
    if spec.weight_scheme == "class_balanced":
        w0, w1 = class_weights(y)
        weights = weights * np.where(y > 0, w1, w0)
    design = build_design(
        table, spec, frame=frame, weights=weights,
        on_deficient="prune" if on_singular == "lstsq" else "raise")
    fit = fit_irls(design, y, spec.family, on_singular=on_singular)
    fit.spec = spec
    return fit, design


def likelihood_ratio_test(full: FittedGlm, restricted: FittedGlm):
    """Deviance-difference test for nested fits on identical data.

    Returns (statistic, df, log10_p); the p-value comes from the chi-square
    survival function and is reported on the log10 scale.
    """
    if full.spec.family != restricted.spec.family:
        raise ValueError("LRT requires the same family")
    if not set(restricted.spec.terms) <= set(full.spec.terms):
        raise ValueError("LRT requires nested specs (restricted terms ⊆ full terms)")
    if full.n_obs != restricted.n_obs or not math.isclose(
            full.sum_weights, restricted.sum_weights, rel_tol=1e-9):
        raise ValueError("LRT requires identical data and weights")
    statistic = max(restricted.deviance - full.deviance, 0.0)
    df = full.n_params - restricted.n_params
    if df < 0:
        raise ValueError("restricted model has more parameters than the full model")
    if df == 0:
        return 0.0, 0, 0.0
    log10_p = chi2.logsf(statistic, df) / math.log(10.0)
    return float(statistic), int(df), float(log10_p)

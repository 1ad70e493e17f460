"""Command-line entry point: one JSON config, one subcommand per stage.

Exit codes: 0 success, 1 runtime/data error, 2 usage or config error.
Every subcommand is idempotent; artifacts are byte-identical across reruns
and across --threads settings.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import config as cfg_mod
from . import features as features_mod
from . import glm, pipeline, scenario
from .config import ConfigError, load_run_config
from .data_model import (LAYER_ORDER, IngestError, assemble_features,
                         ingest_portfolio, ingest_rain_grid)

log = logging.getLogger("floodkit")

LAYER_CHOICE = click.Choice(LAYER_ORDER + ["dummy"])
TASK_CHOICE = click.Choice(["occurrence", "severity"])


def _setup_logging(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _summary_block(**kv):
    click.echo("== summary ==")
    for k, v in kv.items():
        click.echo(f"{k}={v}")


def _guarded(fn):
    """Map exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except (IngestError, scenario.ScenarioError, ValueError,
                FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _load_cfg(config_path, threads=None):
    cfg = load_run_config(config_path)
    if threads is not None:
        cfg.threads = threads
    return cfg


@click.group()
@click.option("--verbose", is_flag=True, default=False)
def main(verbose):
    """Building-level flood claim frequency/severity modeling toolkit."""
    _setup_logging(verbose)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=False))
@click.option("--dest", type=click.Path(), default=None,
              help="Scenario directory (default: the config's out_dir).")
@click.option("--profile", type=click.Choice(["ci", "desk_max", "sweep"]),
              default=None, help="Override the scenario profile.")
@_guarded
def simulate(config_path, dest, profile):
    """Generate the synthetic scenario (data, truth tables, run config)."""
    cfg = _load_cfg(config_path)
    scn = cfg.scenario
    if profile:
        scn = cfg_mod._merge(cfg_mod.scenario_defaults(profile),
                             {k: v for k, v in cfg.scenario.items()
                              if k == "seed"})
        scn["profile"] = profile
    dest_dir = Path(dest) if dest else cfg.out_dir
    summary = scenario.generate(scn, dest_dir, cfg.seed)
    _summary_block(
        scenario_dir=dest_dir,
        n_grid_points=summary["realized"]["n_grid_points"],
        n_days=summary["realized"]["n_days"],
        n_policy_years=summary["realized"]["n_policy_years"],
        n_claims=summary["realized"]["n_claims"],
        positive_rate=f"{summary['realized']['positive_rate']:.6f}",
        median_ann_milre_gap=f"{summary['realized']['median_ann_milre_gap']:.4f}",
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@_guarded
def ingest(config_path):
    """Validate all input files and print their summaries."""
    cfg = _load_cfg(config_path)
    grid = ingest_rain_grid(cfg.path("rain_grid"))
    portfolio = ingest_portfolio(
        cfg.path("policies"), cfg.path("claims"), cfg.path("buildings"),
        cfg.path("hazard"), claim_floor_eur=cfg.claim_floor_eur)
    info = grid.summary()
    _summary_block(
        n_grid_points=info["n_points"], date_min=info["date_min"],
        date_max=info["date_max"], n_days=info["n_days"],
        n_gaps=info["n_gaps"],
        n_policy_years=len(portfolio.policy_years),
        n_claims=len(portfolio.claims),
        n_buildings=len(portfolio.buildings),
        positive_rate=f"{portfolio.positive_rate:.6f}",
    )


@main.command(name="features")
@click.option("--config", "config_path", required=True, type=click.Path())
@_guarded
def features_cmd(config_path):
    """Compute indicators.csv, tail_scores.csv and geo_features.csv."""
    cfg = _load_cfg(config_path)
    portfolio, bundle, tail_frame, building_tails, geo_frame = (
        features_mod.run_features(cfg))
    _summary_block(
        out_dir=cfg.out_dir,
        indicator_rows=len(bundle.long_frame),
        tail_points=len(tail_frame),
        geo_rows=len(geo_frame),
    )


def _assemble_all(cfg, layers, task):
    portfolio = ingest_portfolio(
        cfg.path("policies"), cfg.path("claims"), cfg.path("buildings"),
        cfg.path("hazard"), claim_floor_eur=cfg.claim_floor_eur)
    ann, mil, building_tails, geo_frame = features_mod.load_feature_artifacts(
        cfg.out_dir)
    indicators = mil if task == "severity" else ann
    tables = {}
    for layer in layers:
        tables[layer] = assemble_features(
            portfolio, indicators, geo_frame, layer, task,
            tails=building_tails, binned_milre=cfg.milre_binned)
    return portfolio, tables


def _write_model(fit, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit.to_jsonable(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    spec = glm.ModelSpec(
        family=payload["family"], terms=list(payload["terms"]),
        weight_scheme=payload["weight_scheme"],
        reference_levels=payload["reference_levels"],
    )
    names = list(payload["beta"].keys())
    beta = np.array([payload["beta"][nm] for nm in names])
    se = np.array([payload["beta_se"].get(nm, np.nan) for nm in names])
    return glm.FittedGlm(
        spec=spec, beta=beta, column_names=names,
        deviance=payload["deviance"], log_likelihood=payload["log_likelihood"],
        n_params=payload["n_params"], converged=payload["converged"],
        iterations=payload["iterations"], n_obs=payload["n_obs"],
        sum_weights=float(payload.get("sum_weights", payload["n_obs"])),
        dispersion=payload["dispersion"], beta_se=se, beta_se_robust=se,
        levels={k: list(v) for k, v in payload["levels"].items()},
        reference_levels=payload["reference_levels"],
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--task", type=TASK_CHOICE, required=True)
@click.option("--layer", type=LAYER_CHOICE, default="all")
@click.option("--all-layers", is_flag=True, default=False,
              help="Run the four nested layers and report relative deltas.")
@click.option("--strict", is_flag=True, default=False,
              help="Nonzero exit when any fold fails to converge.")
@click.option("--threads", type=int, default=None)
@_guarded
def fit(config_path, task, layer, all_layers, strict, threads):
    """Cross-validated layer fits with the evaluation report."""
    cfg = _load_cfg(config_path, threads=threads)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)

    layers = list(LAYER_ORDER) if all_layers else [layer]
    terms_by_layer = {
        ly: cfg.layer_terms(task, ly) for ly in layers if ly != "dummy"}
    if layer == "dummy" and not all_layers:
        terms_by_layer["dummy"] = []
    portfolio, tables = _assemble_all(
        cfg, [ly if ly != "dummy" else "ins" for ly in layers], task)
    if "dummy" in layers:
        tables["dummy"] = tables["ins"]

    threads_n = cfg.threads if cfg.threads else 1
    flagged = False
    if all_layers:
        runs, order = pipeline.run_all_layers(
            tables, task, terms_by_layer, k=cfg.folds, seed=cfg.seed,
            threads=threads_n)
        frame = pipeline.reports_frame(runs, order)
        frame.to_csv(out / f"metrics_{task}.csv", index=False, lineterminator="\n")
        pipeline.fold_reports_frame(runs, order).to_csv(
            out / f"fold_metrics_{task}.csv", index=False, lineterminator="\n")
        for ly in order:
            _write_model(runs[ly].full_model,
                         models_dir / f"{task}_{ly}.model.json")
            flagged |= runs[ly].flagged
        click.echo(frame.to_string(index=False))
    else:
        run = pipeline.run_layer(tables[layer], layer, task,
                                 terms_by_layer[layer], k=cfg.folds,
                                 seed=cfg.seed, threads=threads_n)
        frame = pd.DataFrame([run.report.as_dict()])
        frame.to_csv(out / f"metrics_{task}_{layer}.csv", index=False,
                     lineterminator="\n")
        _write_model(run.full_model, models_dir / f"{task}_{layer}.model.json")
        flagged = run.flagged
        click.echo(frame.to_string(index=False))

    _summary_block(task=task, layers=",".join(layers),
                   out_dir=out, flagged=flagged)
    if strict and flagged:
        click.echo("error: at least one fold did not converge (--strict)",
                   err=True)
        sys.exit(1)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--task", type=TASK_CHOICE, required=True)
@click.option("--layer", type=LAYER_CHOICE, default="all")
@_guarded
def evaluate(config_path, task, layer):
    """Score a saved model on the assembled table (no refit)."""
    cfg = _load_cfg(config_path)
    out = Path(cfg.out_dir)
    model_path = out / "models" / f"{task}_{layer}.model.json"
    if not model_path.exists():
        raise FileNotFoundError(f"{model_path} not found; run fit first")
    fitmodel = _load_model(model_path)
    _, tables = _assemble_all(cfg, [layer if layer != "dummy" else "ins"], task)
    table = tables[layer if layer != "dummy" else "ins"]
    preds = fitmodel.predict(table)
    y = table.frame[table.target].to_numpy(dtype=float)
    report = pipeline._task_report(f"{layer}[scored]", task, y, preds,
                                   fitmodel.n_params)
    frame = pd.DataFrame([report.as_dict()])
    frame.to_csv(out / f"evaluate_{task}_{layer}.csv", index=False,
                 lineterminator="\n")
    click.echo(frame.to_string(index=False))
    _summary_block(task=task, layer=layer, n_rows=len(table.frame))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--task", type=TASK_CHOICE, required=True)
@click.option("--layer", type=LAYER_CHOICE, default="all")
@click.option("--threads", type=int, default=None)
@_guarded
def importance(config_path, task, layer, threads):
    """Likelihood-ratio importance ranking for one layer's terms."""
    cfg = _load_cfg(config_path, threads=threads)
    out = Path(cfg.out_dir)
    terms = cfg.layer_terms(task, layer)
    _, tables = _assemble_all(cfg, [layer], task)
    frame = pipeline.importance_ranking(
        tables[layer], task, terms, seed=cfg.seed,
        threads=cfg.threads if cfg.threads else 1)
    frame.to_csv(out / f"importance_{task}_{layer}.csv", index=False,
                 lineterminator="\n")
    click.echo(frame.to_string(index=False))
    _summary_block(task=task, layer=layer, n_terms=len(frame))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--task", type=TASK_CHOICE, required=True)
@click.option("--layer", type=LAYER_CHOICE, default="all")
@_guarded
def residuals(config_path, task, layer):
    """Municipality-level median Pearson residual map (CSV + GeoJSON)."""
    cfg = _load_cfg(config_path)
    out = Path(cfg.out_dir)
    terms = cfg.layer_terms(task, layer)
    portfolio, tables = _assemble_all(cfg, [layer], task)
    run = pipeline.run_layer(tables[layer], layer, task, terms,
                             k=cfg.folds, seed=cfg.seed)
    family = "bernoulli_logit" if task == "occurrence" else "gamma_log"
    frame = pipeline.residual_map(tables[layer], run.oof_predictions, family)
    frame.to_csv(out / f"residual_map_{task}_{layer}.csv", index=False,
                 lineterminator="\n")
    pipeline.write_residual_geojson(
        frame, portfolio.buildings_frame,
        out / f"residual_map_{task}_{layer}.geojson")
    _summary_block(task=task, layer=layer, n_municipalities=len(frame))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--threads", type=int, default=None)
@_guarded
def report(config_path, threads):
    """Full comparison: all layers, both tasks, importance and residuals."""
    cfg = _load_cfg(config_path, threads=threads)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(exist_ok=True)
    threads_n = cfg.threads if cfg.threads else 1

    for task in ("occurrence", "severity"):
        terms_by_layer = {ly: cfg.layer_terms(task, ly) for ly in LAYER_ORDER}
        portfolio, tables = _assemble_all(cfg, LAYER_ORDER, task)
        runs, order = pipeline.run_all_layers(
            tables, task, terms_by_layer, k=cfg.folds, seed=cfg.seed,
            threads=threads_n)
        frame = pipeline.reports_frame(runs, order)
        frame.to_csv(out / f"metrics_{task}.csv", index=False,
                     lineterminator="\n")
        pipeline.fold_reports_frame(runs, order).to_csv(
            out / f"fold_metrics_{task}.csv", index=False, lineterminator="\n")
        for ly in order:
            _write_model(runs[ly].full_model,
                         out / "models" / f"{task}_{ly}.model.json")

        imp = pipeline.importance_ranking(
            tables["all"], task, terms_by_layer["all"], seed=cfg.seed,
            threads=threads_n)
        imp.to_csv(out / f"importance_{task}_all.csv", index=False,
                   lineterminator="\n")

        family = "bernoulli_logit" if task == "occurrence" else "gamma_log"
        for ly in LAYER_ORDER:
            rm = pipeline.residual_map(tables[ly], runs[ly].oof_predictions,
                                       family)
            rm.to_csv(out / f"residual_map_{task}_{ly}.csv", index=False,
                      lineterminator="\n")
            pipeline.write_residual_geojson(
                rm, portfolio.buildings_frame,
                out / f"residual_map_{task}_{ly}.geojson")

        group_var = ("nb_building_50m" if task == "occurrence"
                     else "mov_assets:milre")
        grouped = pipeline.grouped_observed_vs_predicted(
            tables["all"], runs["all"].oof_predictions, group_var)
        grouped.to_csv(out / f"grouped_{task}.csv", index=False,
                       lineterminator="\n")

        click.echo(f"--- {task} ---")
        click.echo(frame.to_string(index=False))

    _summary_block(out_dir=out, tasks="occurrence,severity")


if __name__ == "__main__":
    main()

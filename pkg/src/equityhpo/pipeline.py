"""Experiment runner: one cell per (experiment, feature set, regularizer).

Layout of a run directory::

    config.json                 resolved configuration (every default echoed)
    metadata.json               timestamps and wall times (the only non-deterministic file)
    eval_summary.csv            raw aggregate metrics, one row per cell
    ranks_<features>_<reg>.csv  feature ranks, rows = features, columns = Exp4..Exp1
    stability_<features>_<reg>.json
    cells/<exp>-<features>-<reg>/
        study.jsonl  eval.json  eval.csv  trajectory.csv  forecast.csv
        model.json   shap_importance.csv  shap_rank.csv
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import attribution, hpo, nn
from . import evaluation as ev
from .config import RunConfig
from .dataset import SplitDataset, make_supervised, split
from .errors import ConfigError, EquityHPOError
from .fundamentals import build_fundamentals
from .market_data import (MonthlySeries, bars_to_series, format_ym, log_returns, parse_gw_csv,
                          parse_ohlcv_csv)
from .technical import full_technical_set

RETRAIN_STREAM = 3


def cell_name(exp: str, features: str, regularizer: str) -> str:
    return f"{exp}-{features}-{regularizer}"


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(ev._jsonable(obj), sort_keys=True, indent=1) + "\n")


# -- inputs ------------------------------------------------------------------

@dataclass(frozen=True)
class Inputs:
    prices: MonthlySeries
    volumes: MonthlySeries
    returns: MonthlySeries
    features: dict  # name -> unsupervised FeatureMatrix


def load_inputs(cfg: RunConfig, feature_sets: Sequence[str] | None = None) -> Inputs:
    bars = parse_ohlcv_csv(cfg.ohlcv_path, cfg.ohlcv_columns or None)
    prices, volumes = bars_to_series(bars)
    feats = {}
    for name in feature_sets or cfg.features:
        if name == "technical":
            feats[name] = full_technical_set(prices, volumes)
        else:
            raw = parse_gw_csv(cfg.fundamentals_path, cfg.gw_columns or None)
            feats[name] = build_fundamentals(raw, infl_lag=cfg.infl_lag).to_matrix()
    return Inputs(prices, volumes, log_returns(prices), feats)


def cell_split(cfg: RunConfig, inputs: Inputs, exp: str, features: str) -> SplitDataset:
    data = make_supervised(inputs.features[features], inputs.returns)
    return split(data, cfg.window(exp))


def write_features(cfg: RunConfig, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    inputs = load_inputs(cfg)
    paths = []
    for name, fm in inputs.features.items():
        path = out / f"features_{name}.csv"
        fm.to_csv(path)
        paths.append(path)
    return paths


# -- one cell ----------------------------------------------------------------

@dataclass
class CellResult:
    name: str
    ok: bool
    error: str | None = None
    aggregate: dict = field(default_factory=dict)
    importance: list | None = None
    wall_time: float = 0.0


def study_seeds(cfg: RunConfig) -> list[int]:
    return [hpo.derive_seed(cfg.seed, k) for k in range(cfg.seeds)]


def _seed_models(cfg: RunConfig, sp: SplitDataset, regularizer: str, log_path: Path):
    """Per-seed (best trial record, trained state) plus the studies that produced them."""
    space = cfg.search_space(regularizer)
    kw = dict(regularizer=regularizer, n_epochs=cfg.epochs, log_path=log_path)
    seeds = study_seeds(cfg)
    if cfg.per_seed_hpo:
        studies = [hpo.run_study(sp, space, cfg.sampler, cfg.budget, seed=s, **kw) for s in seeds]
        return [(st.best, st.best_state) for st in studies], studies
    study = hpo.run_study(sp, space, cfg.sampler, cfg.budget, seed=seeds[0], **kw)
    objective = hpo.train_objective(sp)
    models = []
    for k in range(cfg.seeds):
        rec, state = objective(study.best.config, hpo.derive_seed(seeds[0], k, RETRAIN_STREAM))
        rec.trial_index, rec.study_seed = study.best.trial_index, seeds[0]
        models.append((rec, state))
    return models, [study]


def _trajectory(studies: Sequence[hpo.Study]) -> list[list]:
    """Per-evaluation validation/test MSE and best-so-far validation MSE, mean and sd over studies."""
    def band(mat):
        mat = np.asarray(mat, dtype=float)
        with np.errstate(invalid="ignore"):
            mean = mat.mean(axis=0)
            sd = mat.std(axis=0, ddof=1) if len(mat) > 1 else np.zeros(mat.shape[1])
        return mean, sd

    val = [[t.validation_mse for t in st.trials] for st in studies]
    test = [[t.test_mse for t in st.trials] for st in studies]
    best = [np.minimum.accumulate(v) for v in val]
    cols = [*band(val), *band(test), *band(best)]
    return [[i + 1, *(c[i] for c in cols)] for i in range(len(val[0]))]


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def run_cell(cfg: RunConfig, exp: str, features: str, regularizer: str, out: Path,
             inputs: Inputs | None = None, cache: dict | None = None) -> CellResult:
    """Search, train, evaluate and attribute one cell; never raises for model errors.

    ``cache`` maps feature-set name to loaded :class:`Inputs` so a run loads
    each data file once, while a broken file still only fails its own cells.
    """
    name = cell_name(exp, features, regularizer)
    cell_dir = Path(out) / "cells" / name
    cell_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        if inputs is None:
            cache = {} if cache is None else cache
            if features not in cache:
                cache[features] = load_inputs(cfg, [features])
            inputs = cache[features]
        sp = cell_split(cfg, inputs, exp, features)
        models, studies = _seed_models(cfg, sp, regularizer, cell_dir / "study.jsonl")
        live = [(rec, st) for rec, st in models if st is not None]
        if not live:
            raise EquityHPOError("every seed diverged")
        origin = sp.window.oos_start if cfg.benchmark_origin == "oos_start" else None
        bench = ev.benchmark_for_targets(inputs.returns, ev.target_dates(sp.test.dates), origin)
        per_seed, test_preds = [], []
        for k, (rec, state) in enumerate(live):
            preds = [nn.predict(state, part.values) for part in (sp.train, sp.validation, sp.test)]
            m = ev.seed_metrics(preds[0], sp.train.target, preds[1], sp.validation.target,
                                preds[2], sp.test.target, bench)
            m.update(seed_index=k, study_seed=rec.study_seed, best_trial=rec.trial_index,
                     train_seed=rec.seed, best_epoch=rec.best_epoch, config=rec.config.to_dict())
            per_seed.append(m)
            test_preds.append(preds[2])
        report = ev.EvalReport(exp, f"{features}/{regularizer}", per_seed, extra={
            "boundaries": sp.boundaries(),
            "benchmark_origin": cfg.benchmark_origin,
            "n_diverged_seeds": len(models) - len(live),
            "sampler": cfg.sampler, "budget": cfg.budget, "epochs": cfg.epochs,
            "per_seed_hpo": cfg.per_seed_hpo,
        })
        (cell_dir / "eval.json").write_text(report.to_json() + "\n")
        ev.write_table_csv([(exp, report.variant, report.aggregate)], cell_dir / "eval.csv")
        _write_rows(cell_dir / "trajectory.csv",
                    ["evaluation", "val_mse_mean", "val_mse_sd", "test_mse_mean", "test_mse_sd",
                     "best_val_mse_mean", "best_val_mse_sd"], _trajectory(studies))
        in_sample_mean = float(np.mean(sp.in_sample.target))
        _write_rows(cell_dir / "forecast.csv",
                    ["target_month", "actual", "predicted_mean", "historical_mean", "in_sample_mean"],
                    [[format_ym(d), a, p, b, in_sample_mean] for d, a, p, b in zip(
                        ev.target_dates(sp.test.dates), sp.test.target,
                        np.mean(test_preds, axis=0), bench)])
        # attribution model: the seed with the lowest validation MSE
        pick = min(range(len(live)), key=lambda k: (per_seed[k]["mse_val"], k))
        rec, state = live[pick]
        model_doc = {**state.to_dict(), "scaler": sp.scaler.to_dict(), "columns": list(sp.train.columns),
                     "seed_index": pick, "validation_mse": per_seed[pick]["mse_val"]}
        _dump(model_doc, cell_dir / "model.json")
        importance = None
        if cfg.shap.enabled:
            importance = attribute_cell(cfg, sp, state, cell_dir)
        return CellResult(name, True, aggregate=report.aggregate, importance=importance,
                          wall_time=time.perf_counter() - t0)
    except Exception as exc:  # noqa: BLE001 - one failing cell must not sink the run
        (cell_dir / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
        return CellResult(name, False, error=f"{type(exc).__name__}: {exc}",
                          wall_time=time.perf_counter() - t0)


# -- attribution -------------------------------------------------------------

def attribute_cell(cfg: RunConfig, sp: SplitDataset, state: nn.NetworkState, cell_dir: Path) -> list:
    """Mean |SHAP| of ``state`` over the configured rows; writes importance and rank CSVs."""
    opts = cfg.shap
    background = attribution.evenly_spaced(sp.train.values, opts.background)
    rows = sp.test.values if opts.rows == "test" else sp.in_sample.values
    cols = list(sp.train.columns)
    sm = attribution.shap_matrix(lambda z: nn.predict(state, z), rows, background, cols,
                                 exact=opts.exact, n_coalitions=opts.n_coalitions,
                                 seed=hpo.derive_seed(cfg.seed, 0, 4))
    importance = np.abs(sm.values).mean(axis=0)
    ranks = attribution.rank_features(importance, cols)
    _write_rows(cell_dir / "shap_importance.csv", ["feature", "mean_abs_shap"],
                [[c, float(v)] for c, v in zip(cols, importance)])
    _write_rows(cell_dir / "shap_rank.csv", ["feature", "rank"],
                sorted(ranks.items(), key=lambda kv: kv[1]))
    return [float(v) for v in importance]


def load_model(cell_dir: Path) -> nn.NetworkState:
    with open(Path(cell_dir) / "model.json") as fh:
        return nn.NetworkState.from_dict(json.load(fh))


def rerun_shap(cfg: RunConfig, out: Path) -> list[CellResult]:
    """Recompute attributions for every finished cell from its saved model."""
    out = Path(out)
    results = []
    inputs = None
    for exp, feat, reg in cfg.cells():
        name = cell_name(exp, feat, reg)
        cell_dir = out / "cells" / name
        if not (cell_dir / "model.json").exists():
            results.append(CellResult(name, False, error="no saved model"))
            continue
        inputs = inputs or load_inputs(cfg)
        sp = cell_split(cfg, inputs, exp, feat)
        imp = attribute_cell(cfg, sp, load_model(cell_dir), cell_dir)
        results.append(CellResult(name, True, importance=imp))
    write_rank_tables(cfg, out)
    return results


def write_rank_tables(cfg: RunConfig, out: Path) -> None:
    """Cross-experiment rank tables and stability reports for each (features, regularizer)."""
    out = Path(out)
    for feat in cfg.features:
        for reg in cfg.regularizers:
            tables = {}
            for exp in cfg.experiments:
                path = out / "cells" / cell_name(exp, feat, reg) / "shap_rank.csv"
                if path.exists():
                    with open(path, newline="") as fh:
                        tables[exp] = {r["feature"]: int(r["rank"]) for r in csv.DictReader(fh)}
            if not tables:
                continue
            attribution.write_rank_table(tables, out / f"ranks_{feat}_{reg}.csv")
            if len(tables) >= 2:
                report = attribution.rank_stability(tables)
                _dump(report.to_dict(), out / f"stability_{feat}_{reg}.json")


# -- whole run ---------------------------------------------------------------

def _run_cell_job(args) -> CellResult:
    cfg, exp, feat, reg, out = args
    return run_cell(cfg, exp, feat, reg, out)


def _check_out_dir(cfg: RunConfig, out: Path) -> None:
    path = out / "config.json"
    if path.exists():
        previous = json.loads(path.read_text())
        if previous != ev._jsonable(cfg.to_dict()):
            raise ConfigError(f"{out} holds a run with a different configuration; use a fresh --out")


def run_all(cfg: RunConfig, out: Path | None = None) -> list[CellResult]:
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _check_out_dir(cfg, out)
    _dump(cfg.to_dict(), out / "config.json")
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    cells = cfg.cells()
    if cfg.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_cell_job, [(cfg, *c, out) for c in cells]))
    else:
        cache: dict = {}
        results = [run_cell(cfg, *c, out, cache=cache) for c in cells]
    rows = [(r.name.split("-")[0], r.name.split("-", 1)[1].replace("-", "/"), r.aggregate) for r in results if r.ok]
    ev.write_table_csv(rows, out / "eval_summary.csv")
    write_rank_tables(cfg, out)
    _dump({
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "wall_time": time.perf_counter() - t0,
        "cells": {r.name: {"ok": r.ok, "error": r.error, "wall_time": r.wall_time} for r in results},
    }, out / "metadata.json")
    return results


# -- report ------------------------------------------------------------------

def build_report(out: Path) -> dict:
    """Collect every cell's eval.json into one summary; absent cells become gaps."""
    out = Path(out)
    expected = []
    if (out / "config.json").exists():
        conf = json.loads((out / "config.json").read_text())
        expected = [cell_name(e, f, r) for e in conf["experiments"]
                    for f in conf["features"] for r in conf["regularizers"]]
    found = sorted(p.parent.name for p in (out / "cells").glob("*/eval.json")) if (out / "cells").is_dir() else []
    names = expected + [n for n in found if n not in expected]
    rows, gaps = [], []
    for name in names:
        path = out / "cells" / name / "eval.json"
        if not path.exists():
            gaps.append(name)
            continue
        doc = json.loads(path.read_text())
        agg = ev.aggregate(doc["per_seed"])
        rows.append({"cell": name, "experiment": doc["experiment"], "variant": doc["variant"],
                     "aggregate": agg, "display": ev.display_row(agg)})
    return {"rows": rows, "gaps": gaps}


def write_report(out: Path) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(out)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "variant", *ev.METRICS, "n_seeds"])
        for row in report["rows"]:
            w.writerow([row["experiment"], row["variant"],
                        *(row["display"][m] for m in ev.METRICS), row["aggregate"]["n_seeds"]])
    _dump({**report, "scaling": {"metrics": ev.METRIC_DISPLAY_FACTOR, "sd": ev.SD_DISPLAY_FACTOR}},
          out / "report.json")
    return report

"""Forecast evaluation against the expanding historical-mean benchmark.

All stored numbers are raw.  Only :func:`display_table` applies the report
scalings (metrics x 1e2, standard deviations x 1e5).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateError, DomainError
from .market_data import MonthlySeries, ym_add

METRICS = ("mse_train", "mse_val", "mse_test", "r2_is", "r2_os")
METRIC_DISPLAY_FACTOR = 1e2
SD_DISPLAY_FACTOR = 1e5
RIDGE_FALLBACK = 1e-8


def mse(predicted, actual) -> float:
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape:
        raise DomainError(f"length mismatch: {p.shape} vs {a.shape}")
    if p.size == 0:
        raise DomainError("mse of an empty sequence")
    return float(np.mean((a - p) ** 2))


def historical_mean_forecast(actuals, history=()) -> np.ndarray:
    """Expanding mean of everything observed strictly before each forecast month.

    ``history`` holds the returns preceding the first forecast month; entry
    ``t`` of the result uses ``history`` plus ``actuals[:t]``.
    """
    hist = np.asarray(history, dtype=float)
    act = np.asarray(actuals, dtype=float)
    if len(hist) == 0:
        raise DomainError("the historical mean needs at least one earlier observation")
    sums = hist.sum() + np.concatenate([[0.0], np.cumsum(act[:-1])])
    counts = len(hist) + np.arange(len(act))
    return sums / counts


def benchmark_for_targets(returns: MonthlySeries, target_dates: Sequence[int],
                          origin: int | None = None) -> np.ndarray:
    """Historical mean of ``returns`` from ``origin`` through the month before each target date."""
    origin = returns.start if origin is None else origin
    dates = np.asarray(returns.dates)
    vals = returns.values
    out = np.empty(len(target_dates))
    csum = np.concatenate([[0.0], np.cumsum(vals)])
    i0 = int(np.searchsorted(dates, origin))
    for k, d in enumerate(target_dates):
        j = int(np.searchsorted(dates, d))  # rows strictly before d
        n = j - i0
        if n < 1:
            raise DomainError(f"no history before {d} for the historical mean")
        out[k] = (csum[j] - csum[i0]) / n
    return out


@dataclass(frozen=True)
class ForecastSeries:
    dates: Sequence[int]
    predicted: np.ndarray
    actual: np.ndarray
    benchmark: np.ndarray

    def __post_init__(self):
        n = len(self.dates)
        for name in ("predicted", "actual", "benchmark"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if len(arr) != n:
                raise DomainError(f"{name} has length {len(arr)}, expected {n}")
            object.__setattr__(self, name, arr)


def r2_os(forecast: ForecastSeries) -> float:
    """1 - sum (r - r_hat)^2 / sum (r - r_bar)^2."""
    r = forecast.actual
    num = float(np.sum((r - forecast.predicted) ** 2))
    den = float(np.sum((r - forecast.benchmark) ** 2))
    if den == 0:
        raise DegenerateError("benchmark forecast error is zero")
    return 1.0 - num / den


def r2_is(predicted, actual) -> float:
    """1 - SSE/SST with SST about the sample mean of ``actual``."""
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if a.size == 0:
        raise DomainError("r2_is of an empty sample")
    sst = float(np.sum((a - a.mean()) ** 2))
    if sst == 0:
        raise DegenerateError("in-sample returns have zero variance")
    return 1.0 - float(np.sum((a - p) ** 2)) / sst


# -- linear baseline ---------------------------------------------------------

@dataclass(frozen=True)
class OLSModel:
    alpha: float
    beta: np.ndarray
    ridge: float = 0.0

    def predict(self, x) -> np.ndarray:
        return self.alpha + np.asarray(x, dtype=float) @ self.beta


def ols_baseline(x, y, ridge_fallback: bool = True) -> OLSModel:
    """Least-squares fit of y = alpha + x beta.

    A rank-deficient design gets a tiny ridge penalty on the slopes when
    ``ridge_fallback`` is set; otherwise it raises.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    design = np.column_stack([np.ones(len(x)), x])
    rank = np.linalg.matrix_rank(design)
    if rank == design.shape[1]:
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        return OLSModel(float(coef[0]), coef[1:])
    if not ridge_fallback:
        raise DomainError(f"design matrix is rank deficient ({rank} < {design.shape[1]})")
    # Centering keeps the intercept unpenalized.
    xm, ym = x.mean(axis=0), y.mean()
    xc = x - xm
    p = x.shape[1]
    beta = np.linalg.solve(xc.T @ xc + RIDGE_FALLBACK * np.eye(p), xc.T @ (y - ym))
    return OLSModel(float(ym - xm @ beta), beta, RIDGE_FALLBACK)


# -- reports -----------------------------------------------------------------

@dataclass
class EvalReport:
    experiment: str
    variant: str
    per_seed: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def aggregate(self) -> dict:
        return aggregate(self.per_seed)

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "variant": self.variant,
                "per_seed": self.per_seed, "aggregate": self.aggregate, **self.extra}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=1)


def aggregate(per_seed: Sequence[dict]) -> dict:
    """Mean and sample standard deviation of each metric over seeds.

    A single seed gets ``sd = 0`` and ``single_seed = True``.
    """
    if not per_seed:
        raise DomainError("aggregate needs at least one seed")
    out: dict = {"n_seeds": len(per_seed), "single_seed": len(per_seed) == 1}
    for m in METRICS:
        vals = np.array([float(s[m]) for s in per_seed])
        out[f"{m}_mean"] = float(vals.mean())
        out[f"{m}_sd"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return out


def display_row(agg: dict) -> dict:
    """Scaled strings for one report row: metric x 1e2 and (sd x 1e5)."""
    row = {}
    for m in METRICS:
        mean = agg[f"{m}_mean"] * METRIC_DISPLAY_FACTOR
        sd = agg[f"{m}_sd"] * SD_DISPLAY_FACTOR
        row[m] = f"{mean:.3f} (±{sd:.3f})"
    return row


def write_table_csv(rows: Sequence[tuple[str, str, dict]], path, scaled: bool = False) -> None:
    """Rows of (experiment, variant, aggregate) shaped like the comparison tables."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["experiment", "variant"]
        for m in METRICS:
            header += [m, f"{m}_sd"]
        w.writerow(header + ["n_seeds"])
        for exp, variant, agg in rows:
            vals = []
            for m in METRICS:
                mean, sd = agg[f"{m}_mean"], agg[f"{m}_sd"]
                if scaled:
                    vals += [f"{mean * METRIC_DISPLAY_FACTOR:.3f}", f"{sd * SD_DISPLAY_FACTOR:.3f}"]
                else:
                    vals += [repr(float(mean)), repr(float(sd))]
            w.writerow([exp, variant, *vals, agg["n_seeds"]])


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.integer):
        return int(x)
    return x


def seed_metrics(pred_train, y_train, pred_val, y_val, pred_test, y_test, bench_test) -> dict:
    """The five table metrics for one trained model."""
    pred_is = np.concatenate([pred_train, pred_val])
    y_is = np.concatenate([y_train, y_val])
    return {
        "mse_train": mse(pred_train, y_train),
        "mse_val": mse(pred_val, y_val),
        "mse_test": mse(pred_test, y_test),
        "r2_is": r2_is(pred_is, y_is),
        "r2_os": r2_os(ForecastSeries(range(len(y_test)), pred_test, y_test, bench_test)),
    }


def target_dates(row_dates: Sequence[int]) -> list[int]:
    """Month of the return each row forecasts."""
    return [ym_add(d, 1) for d in row_dates]

"""The 14 Goyal-Welch predictors built from raw dataset columns."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import FeatureMatrix
from .errors import DomainError
from .market_data import MonthlySeries, RawFundamentalsRow, format_ym, ym_add, ym_diff, ym_range

FUNDAMENTAL_COLUMNS = (
    "DP", "DY", "EP", "DE", "SVAR", "BM", "NTIS",
    "TBL", "LTY", "LTR", "TMS", "DFY", "DFR", "INFL",
)


@dataclass(frozen=True)
class FundamentalSet:
    columns: Mapping[str, MonthlySeries]

    def __post_init__(self):
        if tuple(self.columns) != FUNDAMENTAL_COLUMNS:
            raise DomainError(f"expected columns {FUNDAMENTAL_COLUMNS}, got {tuple(self.columns)}")
        spans = {(s.start, len(s)) for s in self.columns.values()}
        if len(spans) != 1:
            raise DomainError("fundamental columns are not aligned")
        for name, s in self.columns.items():
            if np.isnan(s.values).any():
                raise DomainError(f"{name} contains NaN")

    @property
    def start(self) -> int:
        return next(iter(self.columns.values())).start

    @property
    def end(self) -> int:
        return next(iter(self.columns.values())).end

    def __getitem__(self, name: str) -> MonthlySeries:
        return self.columns[name]

    def to_matrix(self) -> FeatureMatrix:
        values = np.column_stack([self.columns[c].values for c in FUNDAMENTAL_COLUMNS])
        return FeatureMatrix(ym_range(self.start, self.end), FUNDAMENTAL_COLUMNS, values)


def resum_12m(flows: Sequence[float]) -> np.ndarray:
    """12-month trailing sums of monthly flows; the first 11 months are dropped."""
    x = np.asarray(flows, dtype=float)
    if len(x) < 12:
        raise DomainError("need at least 12 monthly flows")
    c = np.concatenate([[0.0], np.cumsum(x)])
    return c[12:] - c[:-12]


def _log(values: np.ndarray, name: str, start: int) -> np.ndarray:
    bad = np.flatnonzero(~(values > 0))
    if len(bad):
        raise DomainError(
            f"{name} must be positive for the log transform at {format_ym(ym_add(start, int(bad[0])))}"
        )
    return np.log(values)


def build_fundamentals(raw: Sequence[RawFundamentalsRow], infl_lag: bool = True) -> FundamentalSet:
    """Construct DP, DY, EP, DE, SVAR, BM, NTIS, TBL, LTY, LTR, TMS, DFY, DFR, INFL.

    DY and INFL reference earlier months, so the output loses one leading
    month (two when ``infl_lag`` delays inflation by a further month to
    mimic CPI's publication lag).
    """
    if len(raw) < 3:
        raise DomainError("need at least three months of raw fundamentals")
    start = raw[0].date
    for i, r in enumerate(raw):
        if ym_diff(r.date, start) != i:
            raise DomainError(f"raw rows are not contiguous at {format_ym(r.date)}")

    def col(attr):
        return np.array([getattr(r, attr) for r in raw], dtype=float)

    log_p = _log(col("index_level"), "index_level", start)
    log_d = _log(col("dividends_12m"), "dividends_12m", start)
    log_e = _log(col("earnings_12m"), "earnings_12m", start)
    log_cpi = _log(col("cpi"), "cpi", start)
    infl = np.full(len(raw), math.nan)
    infl[1:] = np.diff(log_cpi)
    if infl_lag:
        infl[1:] = infl[:-1].copy()
    dy = np.full(len(raw), math.nan)
    dy[1:] = log_d[1:] - log_p[:-1]
    lty, tbl = col("lty"), col("tbl")

    full = {
        "DP": log_d - log_p,
        "DY": dy,
        "EP": log_e - log_p,
        "DE": log_d - log_e,
        "SVAR": col("svar"),
        "BM": col("book_to_market"),
        "NTIS": col("ntis"),
        "TBL": tbl,
        "LTY": lty,
        "LTR": col("ltr"),
        "TMS": lty - tbl,
        "DFY": col("baa_yield") - col("aaa_yield"),
        "DFR": col("corp_bond_return") - col("ltr"),
        "INFL": infl,
    }
    skip = 2 if infl_lag else 1
    out_start = ym_add(start, skip)
    return FundamentalSet({k: MonthlySeries(out_start, v[skip:], k) for k, v in full.items()})


def algebraic_identity_check(fs: FundamentalSet, tol: float = 1e-10) -> bool:
    """True iff DE = DP - EP at every date within ``tol``."""
    gap = fs["DE"].values - (fs["DP"].values - fs["EP"].values)
    return bool(np.all(np.abs(gap) <= tol))

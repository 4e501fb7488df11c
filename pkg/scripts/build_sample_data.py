"""Rebuild the bundled sample files under src/equityhpo/data/.

Requires the ``rdatasets`` wheel (``pip install rdatasets``), which ships the
openintro ``sp500_1950_2018`` table: daily S&P 500 OHLCV as downloaded from
Yahoo Finance.  Daily bars are aggregated to calendar months.

The fundamentals file keeps the real index level and realized variance from
the same daily data; every other column is drawn from a seeded AR(1) model
with magnitudes typical of the Goyal-Welch series.  See data/README.md.
"""
from __future__ import annotations

import csv
import lzma
import pickle
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

OUT = Path(__file__).resolve().parents[1] / "src" / "equityhpo" / "data"
START, END = "1950-01", "2017-12"


def load_daily() -> pd.DataFrame:
    blob = resources.files("rdatasets").joinpath(
        "_data/openintro/sp500_1950_2018.pkl.compress"
    ).read_bytes()
    df = pickle.loads(lzma.decompress(blob))
    df["Date"] = pd.to_datetime(df["Date"])
    return df.set_index("Date").sort_index()


def monthly_ohlcv(daily: pd.DataFrame) -> pd.DataFrame:
    g = daily.groupby(daily.index.to_period("M"))
    out = pd.DataFrame({
        "Open": g["Open"].first(),
        "High": g["High"].max(),
        "Low": g["Low"].min(),
        "Close": g["Close"].last(),
        "Adj Close": g["Adj.Close"].last(),
        "Volume": g["Volume"].sum(),
    })
    return out.loc[START:END]


def realized_variance(daily: pd.DataFrame) -> pd.Series:
    r = np.log(daily["Adj.Close"]).diff()
    sv = (r ** 2).groupby(daily.index.to_period("M")).sum()
    return sv.loc[START:END]


def ar1(rng, n, mean, sd, phi, x0=None):
    x = np.empty(n)
    x[0] = mean if x0 is None else x0
    innov = sd * np.sqrt(1 - phi ** 2)
    for t in range(1, n):
        x[t] = mean + phi * (x[t - 1] - mean) + innov * rng.standard_normal()
    return x


def synthetic_fundamentals(monthly: pd.DataFrame, svar: pd.Series) -> pd.DataFrame:
    rng = np.random.default_rng(20171231)
    n = len(monthly)
    index = monthly["Close"].to_numpy()
    log_dp = ar1(rng, n, -3.6, 0.35, 0.995, x0=-3.0)
    log_ep = ar1(rng, n, -2.8, 0.35, 0.99, x0=-2.1)
    tbl = np.clip(ar1(rng, n, 0.045, 0.03, 0.99, x0=0.011), 1e-4, None)
    term = ar1(rng, n, 0.017, 0.012, 0.97)
    lty = np.clip(tbl + term, 5e-4, None)
    aaa = lty + np.abs(ar1(rng, n, 0.008, 0.004, 0.97))
    baa = aaa + np.abs(ar1(rng, n, 0.010, 0.004, 0.97))
    ltr = 0.005 + 0.025 * rng.standard_normal(n)
    infl = ar1(rng, n, 0.003, 0.003, 0.6)
    cpi = 23.5 * np.exp(np.cumsum(infl))
    return pd.DataFrame({
        "yyyymm": [p.year * 100 + p.month for p in monthly.index],
        "Index": index,
        "D12": np.exp(log_dp) * index,
        "E12": np.exp(log_ep) * index,
        "b/m": np.clip(ar1(rng, n, 0.55, 0.2, 0.99), 0.1, None),
        "ntis": ar1(rng, n, 0.015, 0.02, 0.98),
        "tbl": tbl,
        "lty": lty,
        "ltr": ltr,
        "corpr": ltr + 0.003 + 0.01 * rng.standard_normal(n),
        "BAA": baa,
        "AAA": aaa,
        "CPI": cpi,
        "svar": svar.to_numpy(),
    })


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def main() -> None:
    daily = load_daily()
    monthly = monthly_ohlcv(daily)
    assert len(monthly) == 816
    with open(OUT / "sp500_monthly.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Date", "Open", "High", "Low", "Close", "Adj Close", "Volume"])
        for period, row in monthly.iterrows():
            w.writerow([f"{period.year:04d}-{period.month:02d}",
                        *(_fmt(round(row[c], 6)) for c in ["Open", "High", "Low", "Close", "Adj Close"]),
                        int(row["Volume"])])
    gw = synthetic_fundamentals(monthly, realized_variance(daily))
    with open(OUT / "gw_monthly.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(gw.columns))
        for row in gw.itertuples(index=False):
            w.writerow([str(row[0])] + [_fmt(round(v, 10)) for v in row[1:]])


if __name__ == "__main__":
    main()

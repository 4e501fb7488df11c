"""Monthly market data: OHLCV and Goyal-Welch CSV parsing, log returns.

Dates are integer year-months (``195001``).  Interior gaps are errors;
nothing is interpolated.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, DomainError, SchemaError

OHLCV_COLUMNS = ("Date", "Open", "High", "Low", "Close", "Adj Close", "Volume")

# field name on RawFundamentalsRow -> column header in the GW file
GW_COLUMN_MAP: dict[str, str] = {
    "date": "yyyymm",
    "index_level": "Index",
    "dividends_12m": "D12",
    "earnings_12m": "E12",
    "book_to_market": "b/m",
    "ntis": "ntis",
    "tbl": "tbl",
    "lty": "lty",
    "ltr": "ltr",
    "corp_bond_return": "corpr",
    "baa_yield": "BAA",
    "aaa_yield": "AAA",
    "cpi": "CPI",
    "svar": "svar",
}

_POSITIVE_GW = ("index_level", "dividends_12m", "earnings_12m")


# -- year-month arithmetic ---------------------------------------------------

def ym_to_index(ym: int) -> int:
    """Months since year 0; makes differences between year-months trivial."""
    year, month = divmod(int(ym), 100)
    if not 1 <= month <= 12:
        raise DataError(f"invalid year-month {ym}")
    return year * 12 + month - 1


def index_to_ym(idx: int) -> int:
    year, month0 = divmod(int(idx), 12)
    return year * 100 + month0 + 1


def ym_add(ym: int, months: int) -> int:
    return index_to_ym(ym_to_index(ym) + months)


def ym_diff(a: int, b: int) -> int:
    """Number of months from ``b`` to ``a``."""
    return ym_to_index(a) - ym_to_index(b)


def ym_range(start: int, end: int) -> list[int]:
    return [index_to_ym(i) for i in range(ym_to_index(start), ym_to_index(end) + 1)]


def format_ym(ym: int) -> str:
    return f"{ym // 100:04d}-{ym % 100:02d}"


def parse_date(text: str) -> int:
    """Accept ``YYYY-MM-DD``, ``YYYY-MM`` or ``YYYYMM``."""
    s = text.strip()
    try:
        if "-" in s:
            parts = s.split("-")
            ym = int(parts[0]) * 100 + int(parts[1])
        else:
            ym = int(s)
    except (ValueError, IndexError):
        raise DataError(f"unparsable date {text!r}") from None
    ym_to_index(ym)
    return ym


# -- containers --------------------------------------------------------------

@dataclass(frozen=True)
class MonthlySeries:
    """Gap-free monthly values starting at ``start``."""

    start: int
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or len(values) < 1:
            raise DomainError("MonthlySeries needs a non-empty 1-d value sequence")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        ym_to_index(self.start)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end(self) -> int:
        return ym_add(self.start, len(self.values) - 1)

    @property
    def dates(self) -> list[int]:
        return ym_range(self.start, self.end)

    def at(self, ym: int) -> float:
        i = ym_diff(ym, self.start)
        if not 0 <= i < len(self.values):
            raise KeyError(ym)
        return float(self.values[i])

    def slice(self, start: int, end: int) -> "MonthlySeries":
        i, j = ym_diff(start, self.start), ym_diff(end, self.start)
        if i < 0 or j >= len(self.values) or j < i:
            raise DomainError(
                f"{self.name or 'series'}: range {start}-{end} outside {self.start}-{self.end}"
            )
        return MonthlySeries(start, self.values[i:j + 1], self.name)

    def scaled(self, c: float) -> "MonthlySeries":
        return MonthlySeries(self.start, self.values * c, self.name)


@dataclass(frozen=True)
class PriceBar:
    date: int
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float

    def __post_init__(self):
        if not self.adj_close > 0:
            raise DataError(f"{self.date}: adjusted close must be positive")
        if self.volume < 0:
            raise DataError(f"{self.date}: negative volume")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise DataError(f"{self.date}: high/low inconsistent with open/close")


@dataclass(frozen=True)
class RawFundamentalsRow:
    date: int
    index_level: float
    dividends_12m: float
    earnings_12m: float
    book_to_market: float
    ntis: float
    tbl: float
    lty: float
    ltr: float
    corp_bond_return: float
    baa_yield: float
    aaa_yield: float
    cpi: float
    svar: float


# -- parsing -----------------------------------------------------------------

def _float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataError(f"row {row}: unparsable number {text!r} in column {column!r}") from None
    if math.isnan(value):
        raise DataError(f"row {row}: missing value in column {column!r}")
    return value


def _read_rows(path, required: Sequence[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        reader.fieldnames = header
        return list(reader)


def _check_contiguous(dates: Sequence[int]) -> None:
    for prev, cur in zip(dates, dates[1:]):
        gap = ym_diff(cur, prev)
        if gap <= 0:
            raise DataError(f"non-monotone or duplicated month at {format_ym(cur)}")
        if gap > 1:
            raise DataError(
                f"missing month {format_ym(ym_add(prev, 1))} (between {format_ym(prev)} "
                f"and {format_ym(cur)})"
            )


_BLANK = {"", "null", "nan", "na"}


def _is_blank(row: Mapping[str, str], names: Mapping[str, str]) -> bool:
    return any((row.get(names[c]) or "").strip().lower() in _BLANK for c in OHLCV_COLUMNS[1:])


def parse_ohlcv_csv(path, columns: Mapping[str, str] | None = None) -> list[PriceBar]:
    """Parse a monthly OHLCV file into date-ordered :class:`PriceBar` records.

    ``columns`` maps canonical header names (``OHLCV_COLUMNS``) to the names
    used in the file, for sources with different spellings.  Leading and
    trailing rows with empty values are trimmed; an empty interior row is an
    error.
    """
    names = {c: c for c in OHLCV_COLUMNS}
    names.update(columns or {})
    rows = _read_rows(path, [names[c] for c in OHLCV_COLUMNS])
    filled = [i for i, row in enumerate(rows) if not _is_blank(row, names)]
    lo, hi = (filled[0], filled[-1] + 1) if filled else (0, 0)
    bars = []
    for i, row in enumerate(rows[lo:hi], start=lo + 1):
        date = parse_date(row[names["Date"]])
        vals = [_float(row[names[c]], i, names[c]) for c in OHLCV_COLUMNS[1:]]
        try:
            bars.append(PriceBar(date, *vals))
        except DataError as exc:
            raise DataError(f"row {i}: {exc}") from None
    if not bars:
        raise DataError(f"{path}: no data rows")
    _check_contiguous([b.date for b in bars])
    return bars


def parse_gw_csv(path, columns: Mapping[str, str] | None = None,
                 start: int | None = None, end: int | None = None) -> list[RawFundamentalsRow]:
    """Parse a Goyal-Welch style monthly file.

    Rows outside ``[start, end]`` are discarded before the contiguity check,
    so leading/trailing history beyond the requested span is harmless.
    """
    names = dict(GW_COLUMN_MAP)
    names.update(columns or {})
    rows = _read_rows(path, list(names.values()))
    out = []
    for i, row in enumerate(rows, start=1):
        date = parse_date(row[names["date"]])
        if (start is not None and date < start) or (end is not None and date > end):
            continue
        fields = {k: _float(row[v], i, v) for k, v in names.items() if k != "date"}
        for key in _POSITIVE_GW:
            if fields[key] <= 0:
                raise DataError(
                    f"row {i} ({format_ym(date)}): {names[key]} must be positive for the log transform"
                )
        out.append(RawFundamentalsRow(date=date, **fields))
    if not out:
        raise DataError(f"{path}: no data rows in requested span")
    _check_contiguous([r.date for r in out])
    return out


def write_ohlcv_csv(bars: Iterable[PriceBar], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OHLCV_COLUMNS)
        for b in bars:
            w.writerow([format_ym(b.date), repr(b.open), repr(b.high), repr(b.low),
                        repr(b.close), repr(b.adj_close), repr(b.volume)])


def bars_to_series(bars: Sequence[PriceBar]) -> tuple[MonthlySeries, MonthlySeries]:
    """Adjusted close and volume as monthly series."""
    start = bars[0].date
    prices = MonthlySeries(start, [b.adj_close for b in bars], "adj_close")
    volumes = MonthlySeries(start, [b.volume for b in bars], "volume")
    return prices, volumes


def log_returns(prices: MonthlySeries) -> MonthlySeries:
    """ln(P_t / P_{t-1}), dated at t (so the output starts one month later)."""
    p = prices.values
    if len(p) < 2:
        raise DomainError("log_returns needs at least two prices")
    if np.any(p <= 0):
        bad = int(np.argmax(p <= 0))
        raise DomainError(f"non-positive price at {format_ym(ym_add(prices.start, bad))}")
    return MonthlySeries(ym_add(prices.start, 1), np.diff(np.log(p)), "log_return")


def bundled_path(name: str) -> Path:
    """Path of a file shipped in the package ``data`` directory."""
    return Path(__file__).resolve().parent / "data" / name


SP500_SAMPLE = "sp500_monthly.csv"
GW_SAMPLE = "gw_monthly.csv"

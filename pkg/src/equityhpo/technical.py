"""Binary technical trading signals: momentum, MA crossover, on-balance volume.

Every signal is +1 (buy) or -1 (sell); ties resolve to +1.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import FeatureMatrix
from .errors import AlignmentError, DomainError, SpecError
from .market_data import MonthlySeries, ym_add, ym_diff, ym_range

MOM_LOOKBACKS = (1, 3, 6, 9, 12)
SHORT_WINDOWS = (1, 2, 3)
LONG_WINDOWS = (9, 12)


@dataclass(frozen=True)
class IndicatorSpec:
    kind: str  # MOM, MA or VOL
    m: int = 0
    s: int = 0
    l: int = 0

    def __post_init__(self):
        if self.kind == "MOM":
            if self.m < 1:
                raise SpecError(f"momentum look-back must be >= 1, got {self.m}")
        elif self.kind in ("MA", "VOL"):
            if not 1 <= self.s < self.l:
                raise SpecError(f"{self.kind} needs 1 <= s < l, got s={self.s}, l={self.l}")
        else:
            raise SpecError(f"unknown indicator kind {self.kind!r}")

    @property
    def label(self) -> str:
        """Canonical column label, e.g. ``MOM12M`` or ``MA112``."""
        if self.kind == "MOM":
            return f"MOM{self.m}M"
        return f"{self.kind}{self.s}{self.l}"

    @property
    def long_label(self) -> str:
        if self.kind == "MOM":
            return f"MOM({self.m}M)"
        return f"{self.kind}({self.s}M-{self.l}M)"

    @property
    def lookback(self) -> int:
        """Months of history consumed before the first signal."""
        if self.kind == "MOM":
            return self.m
        if self.kind == "MA":
            return self.l - 1
        return self.l  # one month for OBV's first difference


TECHNICAL_SPECS: tuple[IndicatorSpec, ...] = (
    *(IndicatorSpec("MOM", m=m) for m in MOM_LOOKBACKS),
    *(IndicatorSpec("MA", s=s, l=l) for s in SHORT_WINDOWS for l in LONG_WINDOWS),
    *(IndicatorSpec("VOL", s=s, l=l) for s in SHORT_WINDOWS for l in LONG_WINDOWS),
)
TECHNICAL_COLUMNS: tuple[str, ...] = tuple(spec.label for spec in TECHNICAL_SPECS)


@dataclass(frozen=True)
class SignalSeries:
    start: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int8)
        if not np.all((values == 1) | (values == -1)):
            raise DomainError("signals must be exactly +1 or -1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end(self) -> int:
        return ym_add(self.start, len(self.values) - 1)


def _to_signal(buy: np.ndarray) -> np.ndarray:
    return np.where(buy, 1, -1).astype(np.int8)


def momentum(prices: MonthlySeries, m: int) -> SignalSeries:
    """+1 where P_t >= P_{t-m}."""
    IndicatorSpec("MOM", m=m)
    p = prices.values
    if len(p) <= m:
        raise DomainError(f"momentum({m}) needs more than {m} prices, got {len(p)}")
    return SignalSeries(ym_add(prices.start, m), _to_signal(p[m:] >= p[:-m]))


def sma(series: MonthlySeries, j: int) -> MonthlySeries:
    """Trailing j-month simple moving average, dated at the window's last month."""
    if j < 1:
        raise DomainError(f"window must be >= 1, got {j}")
    x = series.values
    if len(x) < j:
        raise DomainError(f"window {j} exceeds series length {len(x)}")
    means = sliding_window_view(x, j).sum(axis=1) / j
    return MonthlySeries(ym_add(series.start, j - 1), means, series.name)


def _crossover(x: np.ndarray, s: int, l: int) -> np.ndarray:
    """+1 where the trailing s-mean of ``x`` is >= its trailing l-mean.

    Values are aligned to the first index where the long window is full.
    Near-ties are settled exactly with rational arithmetic so equal means
    (e.g. a constant input) never flip on rounding.
    """
    short = sliding_window_view(x, s).sum(axis=1)[l - s:] / s
    long_ = sliding_window_view(x, l).sum(axis=1) / l
    diff = short - long_
    # rounding error scales with the largest term in the window, not with the means
    tol = 1e-9 * sliding_window_view(np.abs(x), l).max(axis=1)
    buy = diff >= 0
    for i in np.flatnonzero(np.abs(diff) <= tol):
        t = i + l - 1
        s_sum = sum(Fraction(float(v)) for v in x[t - s + 1:t + 1])
        l_sum = sum(Fraction(float(v)) for v in x[t - l + 1:t + 1])
        buy[i] = s_sum * l >= l_sum * s
    return _to_signal(buy)


def ma_signal(prices: MonthlySeries, s: int, l: int) -> SignalSeries:
    IndicatorSpec("MA", s=s, l=l)
    if len(prices) < l:
        raise DomainError(f"MA({s},{l}) needs at least {l} prices, got {len(prices)}")
    return SignalSeries(ym_add(prices.start, l - 1), _crossover(prices.values, s, l))


def _check_aligned(prices: MonthlySeries, volumes: MonthlySeries) -> None:
    if prices.start != volumes.start or len(prices) != len(volumes):
        raise AlignmentError(
            f"prices ({prices.start}, n={len(prices)}) and volumes "
            f"({volumes.start}, n={len(volumes)}) are not aligned"
        )


def obv(prices: MonthlySeries, volumes: MonthlySeries) -> MonthlySeries:
    """On-balance volume: running sum of VOL_k * D_k, D_k = +1 iff P_k >= P_{k-1}.

    The first month only anchors the first price change, so the output starts
    one month after the input.
    """
    _check_aligned(prices, volumes)
    if len(prices) < 2:
        raise DomainError("OBV needs at least two months")
    p = prices.values
    direction = np.where(p[1:] >= p[:-1], 1.0, -1.0)
    return MonthlySeries(ym_add(prices.start, 1), np.cumsum(volumes.values[1:] * direction), "obv")


def vol_signal(prices: MonthlySeries, volumes: MonthlySeries, s: int, l: int) -> SignalSeries:
    IndicatorSpec("VOL", s=s, l=l)
    _check_aligned(prices, volumes)
    if len(prices) < l + 1:
        raise DomainError(f"VOL({s},{l}) needs at least {l + 1} months, got {len(prices)}")
    ob = obv(prices, volumes)
    return SignalSeries(ym_add(ob.start, l - 1), _crossover(ob.values, s, l))


def compute_signal(spec: IndicatorSpec, prices: MonthlySeries, volumes: MonthlySeries) -> SignalSeries:
    if spec.kind == "MOM":
        return momentum(prices, spec.m)
    if spec.kind == "MA":
        return ma_signal(prices, spec.s, spec.l)
    return vol_signal(prices, volumes, spec.s, spec.l)


def full_technical_set(prices: MonthlySeries, volumes: MonthlySeries) -> FeatureMatrix:
    """All 17 signals as a feature matrix, rows from the latest common start.

    Column order: MOM(1,3,6,9,12M), MA(s-l) for s in 1..3 and l in (9, 12),
    then VOL in the same (s, l) order.
    """
    _check_aligned(prices, volumes)
    need = max(spec.lookback for spec in TECHNICAL_SPECS) + 1
    if len(prices) < need:
        raise DomainError(f"technical set needs at least {need} months, got {len(prices)}")
    signals = [compute_signal(spec, prices, volumes) for spec in TECHNICAL_SPECS]
    start = max(sig.start for sig in signals)
    cols = [sig.values[ym_diff(start, sig.start):].astype(float) for sig in signals]
    return FeatureMatrix(ym_range(start, prices.end), TECHNICAL_COLUMNS, np.column_stack(cols))

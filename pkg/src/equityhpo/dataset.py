"""Supervised examples, experiment windows, chronological splits and scaling."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import AlignmentError, DomainError
from .market_data import MonthlySeries, format_ym, ym_add, ym_diff


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows of predictors x_t, optionally paired with the next-month return."""

    dates: Sequence[int]
    columns: Sequence[str]
    values: np.ndarray
    target: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float, ndmin=2)
        if len(self.dates) == 0:
            values = values.reshape(0, len(self.columns))
        if values.shape != (len(self.dates), len(self.columns)):
            raise DomainError(
                f"values shape {values.shape} does not match {len(self.dates)} dates x "
                f"{len(self.columns)} columns"
            )
        if np.isnan(values).any():
            raise DomainError("feature matrix contains NaN")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", tuple(int(d) for d in self.dates))
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.target is not None:
            target = np.array(self.target, dtype=float).reshape(-1)
            if len(target) != len(self.dates) or np.isnan(target).any():
                raise DomainError("target must have one finite value per row")
            target.setflags(write=False)
            object.__setattr__(self, "target", target)

    def __len__(self) -> int:
        return len(self.dates)

    def rows_between(self, start: int, end: int) -> "FeatureMatrix":
        """Rows with ``start <= date <= end``."""
        d = np.asarray(self.dates)
        mask = (d >= start) & (d <= end)
        return self.take(np.flatnonzero(mask))

    def take(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=int)
        return FeatureMatrix(
            [self.dates[i] for i in idx],
            self.columns,
            self.values[idx].reshape(len(idx), len(self.columns)),
            None if self.target is None else self.target[idx],
        )

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return replace(self, values=values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["date", *self.columns] + (["target"] if self.target is not None else [])
            w.writerow(header)
            for i, d in enumerate(self.dates):
                row = [format_ym(d)] + [_fmt(v) for v in self.values[i]]
                if self.target is not None:
                    row.append(_fmt(self.target[i]))
                w.writerow(row)


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def make_supervised(features: FeatureMatrix, returns: MonthlySeries) -> FeatureMatrix:
    """Pair x_t with r_{t+1}; the last feature month without a following return is dropped."""
    ret_dates = set(returns.dates)
    keep = [i for i, d in enumerate(features.dates) if ym_add(d, 1) in ret_dates]
    if not keep:
        raise AlignmentError("feature and return dates do not overlap")
    target = [returns.at(ym_add(features.dates[i], 1)) for i in keep]
    sub = features.take(keep)
    return replace(sub, target=np.asarray(target))


def join_features(*parts: FeatureMatrix) -> FeatureMatrix:
    """Column-wise union of several matrices over their common dates."""
    common = set(parts[0].dates)
    for p in parts[1:]:
        common &= set(p.dates)
    dates = sorted(common)
    if not dates:
        raise AlignmentError("feature matrices share no dates")
    blocks, cols = [], []
    for p in parts:
        pos = {d: i for i, d in enumerate(p.dates)}
        blocks.append(p.values[[pos[d] for d in dates]])
        cols.extend(p.columns)
    return FeatureMatrix(dates, cols, np.hstack(blocks))


# -- experiment windows ------------------------------------------------------

EXPERIMENT_SPANS: dict[str, tuple[int, int]] = {
    "Exp1": (195001, 201712),
    "Exp2": (195001, 201512),
    "Exp3": (195001, 200712),
    "Exp4": (195001, 200212),
}
DEFAULT_OOS_FRACTION = 0.2


def default_oos_start(full_start: int, full_end: int, fraction: float = DEFAULT_OOS_FRACTION) -> int:
    """First month of the final ``fraction`` of the window (rounded to whole months)."""
    n_months = ym_diff(full_end, full_start) + 1
    n_oos = int(round(fraction * n_months))
    return ym_add(full_start, n_months - n_oos)


@dataclass(frozen=True)
class ExperimentWindow:
    id: str
    full_start: int
    full_end: int
    oos_start: int

    def __post_init__(self):
        if not self.full_start < self.oos_start <= self.full_end:
            raise DomainError(
                f"{self.id}: need full_start < oos_start <= full_end, got "
                f"{self.full_start}, {self.oos_start}, {self.full_end}"
            )

    @classmethod
    def standard(cls, exp_id: str, oos_start: int | None = None) -> "ExperimentWindow":
        try:
            start, end = EXPERIMENT_SPANS[exp_id]
        except KeyError:
            raise DomainError(f"unknown experiment {exp_id!r}") from None
        return cls(exp_id, start, end, oos_start or default_oos_start(start, end))

    def to_dict(self) -> dict:
        return {"id": self.id, "full_start": self.full_start, "full_end": self.full_end,
                "oos_start": self.oos_start}


# -- scaling -----------------------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    """Per-feature z-score; constant columns are centered with unit scale."""

    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.constant is None:
            object.__setattr__(self, "constant", np.zeros(len(self.mean), dtype=bool))

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "scale": [float(v) for v in self.scale],
                "constant": [bool(v) for v in self.constant]}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float),
                   np.asarray(d["constant"], dtype=bool))


def fit_scaler(train: FeatureMatrix) -> Scaler:
    if len(train) == 0:
        raise DomainError("cannot fit a scaler on an empty training set")
    mean = train.values.mean(axis=0)
    sd = train.values.std(axis=0)
    constant = sd == 0
    return Scaler(mean, np.where(constant, 1.0, sd), constant)


def apply_scaler(scaler: Scaler, rows: np.ndarray) -> np.ndarray:
    return (np.asarray(rows, dtype=float) - scaler.mean) / scaler.scale


# -- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitDataset:
    """Scaled train/validation/test segments of one experiment window."""

    train: FeatureMatrix
    validation: FeatureMatrix
    test: FeatureMatrix
    scaler: Scaler
    window: ExperimentWindow | None = None

    @property
    def in_sample(self) -> FeatureMatrix:
        return FeatureMatrix(
            self.train.dates + self.validation.dates,
            self.train.columns,
            np.vstack([self.train.values, self.validation.values]),
            np.concatenate([self.train.target, self.validation.target]),
        )

    @property
    def input_width(self) -> int:
        return len(self.train.columns)

    def boundaries(self) -> dict:
        def span(fm):
            return [fm.dates[0], fm.dates[-1]] if len(fm) else None
        return {"train": span(self.train), "validation": span(self.validation),
                "test": span(self.test), "window": self.window.to_dict() if self.window else None}

    def without_test(self) -> "SplitDataset":
        empty = self.test.take([])
        return replace(self, test=empty)


def halve(in_sample: FeatureMatrix) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Chronological 50/50 split; an odd extra row goes to train."""
    n = len(in_sample)
    n_train = (n + 1) // 2
    return in_sample.take(range(n_train)), in_sample.take(range(n_train, n))


def split(data: FeatureMatrix, window: ExperimentWindow, scale: bool = True) -> SplitDataset:
    """Carve a window into train | validation | test, scaling with train statistics.

    In-sample rows are dated in ``[full_start, oos_start)``; test rows in
    ``[oos_start, full_end]``.  Nothing is shuffled.
    """
    if data.target is None:
        raise DomainError("split needs a supervised feature matrix")
    if not data.dates or data.dates[0] >= window.oos_start or data.dates[-1] < window.oos_start:
        raise DomainError(
            f"{window.id}: data rows {data.dates[:1]}..{data.dates[-1:]} do not cover "
            f"oos start {window.oos_start}"
        )
    in_sample = data.rows_between(window.full_start, ym_add(window.oos_start, -1))
    test = data.rows_between(window.oos_start, window.full_end)
    if len(in_sample) < 2:
        raise DomainError(f"{window.id}: fewer than two in-sample rows")
    train, validation = halve(in_sample)
    scaler = fit_scaler(train)
    if not scale:
        scaler = Scaler(np.zeros(train.values.shape[1]), np.ones(train.values.shape[1]),
                        np.zeros(train.values.shape[1], dtype=bool))
    return SplitDataset(
        train.with_values(apply_scaler(scaler, train.values)),
        validation.with_values(apply_scaler(scaler, validation.values)),
        test.with_values(apply_scaler(scaler, test.values)),
        scaler,
        window,
    )

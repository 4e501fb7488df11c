"""Shapley-value feature attribution and rank stability across experiments.

The value of a coalition S for instance x is the mean model output over a
background sample after overwriting the columns in S with x's values.  Exact
values enumerate all 2^p coalitions; the sampled estimator solves the Kernel
SHAP weighted least-squares problem with efficiency imposed as a hard
constraint.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DomainError

log = logging.getLogger(__name__)

Model = Callable[[np.ndarray], np.ndarray]

MAX_EXACT_FEATURES = 20
DEFAULT_EXACT_LIMIT = 15
DEFAULT_COALITIONS = 4096
DEFAULT_BACKGROUND = 100
_CHUNK_ROWS = 400_000


def evenly_spaced(rows: np.ndarray, n: int) -> np.ndarray:
    """At most ``n`` rows picked at evenly spaced positions (time order kept)."""
    rows = np.asarray(rows, dtype=float)
    if len(rows) <= n:
        return rows
    idx = np.unique(np.linspace(0, len(rows) - 1, n).round().astype(int))
    return rows[idx]


def _coalition_values(model: Model, x: np.ndarray, background: np.ndarray,
                      masks: np.ndarray) -> np.ndarray:
    """v(S) for each boolean row of ``masks`` (True = feature taken from x)."""
    n_bg, p = background.shape
    out = np.empty(len(masks))
    per = max(1, _CHUNK_ROWS // n_bg)
    for a in range(0, len(masks), per):
        m = masks[a:a + per]
        data = np.where(m[:, None, :], x[None, None, :], background[None, :, :])
        preds = np.asarray(model(data.reshape(-1, p)), dtype=float).reshape(len(m), n_bg)
        out[a:a + per] = preds.mean(axis=1)
    return out


def _all_masks(p: int) -> np.ndarray:
    codes = np.arange(1 << p)
    return ((codes[:, None] >> np.arange(p)) & 1).astype(bool)


def shap_exact(model: Model, instance, background) -> tuple[np.ndarray, float]:
    """Exact Shapley values and base value E[f(background)].

    phi_i = sum over S not containing i of |S|!(p-|S|-1)!/p! (v(S+i) - v(S)).
    """
    x = np.asarray(instance, dtype=float).ravel()
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    p = len(x)
    if p > MAX_EXACT_FEATURES:
        raise DomainError(f"{p} features is too many for exact enumeration; use shap_sampled")
    masks = _all_masks(p)
    v = _coalition_values(model, x, bg, masks)
    sizes = masks.sum(axis=1)
    w = np.array([math.factorial(k) * math.factorial(p - k - 1) / math.factorial(p)
                  for k in range(p)])
    codes = np.arange(1 << p)
    phi = np.empty(p)
    for i in range(p):
        without = codes[~masks[:, i]]
        phi[i] = float(np.sum(w[sizes[without]] * (v[without | (1 << i)] - v[without])))
    return phi, float(v[0])


def _kernel_weight(p: int, k: int) -> float:
    return (p - 1) / (math.comb(p, k) * k * (p - k))


def _sample_masks(p: int, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Coalition masks and WLS weights.

    If ``n`` covers every proper non-empty coalition they are enumerated with
    exact kernel weights.  Otherwise sizes are drawn in proportion to their
    total kernel weight and each draw is paired with its complement, all
    with equal weight.
    """
    total = (1 << p) - 2
    if n >= total:
        masks = _all_masks(p)[1:-1]
        sizes = masks.sum(axis=1)
        return masks, np.array([_kernel_weight(p, int(k)) for k in sizes])
    ks = np.arange(1, p)
    size_w = np.array([(p - 1) / (k * (p - k)) for k in ks])
    size_w /= size_w.sum()
    half = (n + 1) // 2
    masks = np.zeros((2 * half, p), dtype=bool)
    sizes = rng.choice(ks, size=half, p=size_w)
    for j, k in enumerate(sizes):
        members = rng.choice(p, size=int(k), replace=False)
        masks[2 * j, members] = True
        masks[2 * j + 1] = ~masks[2 * j]
    masks = masks[:n]
    return masks, np.ones(len(masks))


def shap_sampled(model: Model, instance, background, n_coalitions: int = DEFAULT_COALITIONS,
                 rng: np.random.Generator | None = None) -> tuple[np.ndarray, float]:
    """Kernel SHAP estimate with sum(phi) + base = f(x) imposed exactly."""
    x = np.asarray(instance, dtype=float).ravel()
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    p = len(x)
    if n_coalitions < 2 * p:
        raise DomainError(f"n_coalitions must be >= 2p = {2 * p}, got {n_coalitions}")
    rng = rng if rng is not None else np.random.default_rng(0)
    ends = np.zeros((2, p), dtype=bool)
    ends[1] = True
    v_empty, v_full = _coalition_values(model, x, bg, ends)
    if p == 1:
        return np.array([v_full - v_empty]), float(v_empty)
    masks, w = _sample_masks(p, n_coalitions, rng)
    y = _coalition_values(model, x, bg, masks) - v_empty
    z = masks.astype(float)
    total = v_full - v_empty
    # eliminate phi_p = total - sum(phi_1..p-1)
    a = z[:, :-1] - z[:, -1:]
    b = y - z[:, -1] * total
    aw = a * w[:, None]
    lhs = a.T @ aw
    rhs = aw.T @ b
    if np.linalg.matrix_rank(lhs) < p - 1:
        raise DomainError("singular Kernel SHAP system; increase n_coalitions")
    head = np.linalg.solve(lhs, rhs)
    phi = np.append(head, total - head.sum())
    return phi, float(v_empty)


@dataclass
class ShapMatrix:
    values: np.ndarray  # rows x features
    base_value: float
    columns: Sequence[str]


def shap_matrix(model: Model, rows, background, columns: Sequence[str], exact: bool | None = None,
                n_coalitions: int = DEFAULT_COALITIONS, seed: int = 0,
                exact_limit: int = DEFAULT_EXACT_LIMIT) -> ShapMatrix:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    p = rows.shape[1]
    exact = p <= exact_limit if exact is None else exact
    rng = np.random.default_rng(seed)
    phis, base = [], 0.0
    for r in rows:
        if exact:
            phi, base = shap_exact(model, r, background)
        else:
            phi, base = shap_sampled(model, r, background, n_coalitions, rng)
        phis.append(phi)
    return ShapMatrix(np.array(phis).reshape(len(rows), p), base, tuple(columns))


def mean_abs_shap(model: Model, rows, background, **kw) -> np.ndarray:
    """Per-feature mean of |phi| over ``rows``."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if len(rows) == 0:
        raise DomainError("mean_abs_shap needs at least one row")
    sm = shap_matrix(model, rows, background, columns=[str(i) for i in range(rows.shape[1])], **kw)
    return np.abs(sm.values).mean(axis=0)


# -- rankings ----------------------------------------------------------------

def rank_features(importance: Sequence[float], columns: Sequence[str]) -> dict[str, int]:
    """Rank 1 = largest importance; ties broken by column order."""
    imp = np.asarray(importance, dtype=float)
    order = sorted(range(len(imp)), key=lambda i: (-imp[i], i))
    return {columns[i]: r + 1 for r, i in enumerate(order)}


@dataclass
class FeatureStability:
    feature: str
    ranks: dict[str, int]
    min_rank: int
    max_rank: int
    top_half: bool
    bottom_half: bool


@dataclass
class StabilityReport:
    features: list[FeatureStability]
    half: int

    @property
    def top_persistent(self) -> list[str]:
        return [f.feature for f in self.features if f.top_half]

    @property
    def bottom_persistent(self) -> list[str]:
        return [f.feature for f in self.features if f.bottom_half]

    def to_dict(self) -> dict:
        return {
            "half": self.half,
            "top_persistent": self.top_persistent,
            "bottom_persistent": self.bottom_persistent,
            "n_top_persistent": len(self.top_persistent),
            "n_bottom_persistent": len(self.bottom_persistent),
            "features": [f.__dict__ for f in self.features],
        }


def rank_stability(tables: Mapping[str, Mapping[str, int]], strict: bool = False) -> StabilityReport:
    """Which features stay in the top or bottom half in every experiment.

    The top half is ranks 1..floor(n/2); with 17 features that is ranks 1-8,
    and the bottom half is ranks 9-17.  Published tables sometimes repeat a
    rank, so duplicates only log a warning unless ``strict`` is set.
    """
    if len(tables) < 2:
        raise DomainError("rank stability needs at least two experiments")
    feature_sets = {frozenset(t) for t in tables.values()}
    if len(feature_sets) != 1:
        raise DomainError("experiments rank different feature sets")
    features = list(next(iter(tables.values())))
    n = len(features)
    for exp, t in tables.items():
        vals = list(t.values())
        if any(int(r) != r or not 1 <= r <= n for r in vals):
            raise DomainError(f"{exp}: ranks must be integers in 1..{n}")
        if sorted(vals) != list(range(1, n + 1)):
            if strict:
                raise DomainError(f"{exp}: ranks are not a permutation of 1..{n}")
            log.warning("%s: ranks are not a permutation of 1..%d", exp, n)
    half = n // 2
    out = []
    for f in features:
        ranks = {exp: int(t[f]) for exp, t in tables.items()}
        vals = list(ranks.values())
        out.append(FeatureStability(f, ranks, min(vals), max(vals),
                                    all(r <= half for r in vals), all(r > half for r in vals)))
    return StabilityReport(out, half)


def write_rank_table(tables: Mapping[str, Mapping[str, int]], path,
                     order: Sequence[str] | None = None) -> None:
    """Features as rows, experiments as columns (latest experiment id last)."""
    exps = list(order or sorted(tables, reverse=True))
    features = list(next(iter(tables.values())))
    first = exps[0]
    features.sort(key=lambda f: tables[first][f])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", *exps])
        for f in features:
            w.writerow([f, *(tables[e][f] for e in exps)])


def read_rank_table(path) -> dict[str, dict[str, int]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        exps = header[1:]
        tables: dict[str, dict[str, int]] = {e: {} for e in exps}
        for row in reader:
            for e, r in zip(exps, row[1:]):
                tables[e][row[0]] = int(r)
    return tables


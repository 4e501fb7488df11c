"""Categorical hyperparameter search: random search, TPE and simulated annealing.

Every trial gets its own seeds derived from ``(study seed, trial index)``, so
a study can be resumed from its JSON-lines log and replays bit-identically.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import nn
from .dataset import SplitDataset
from .errors import SpecError, TrainingDiverged

SAMPLERS = ("tpe", "sa", "rs")

DEFAULT_SPACE: dict[str, tuple] = {
    "n_hidden_layers": (2, 3),
    "n_units": (2, 4, 8, 16),
    "init_sd": (0.025, 0.05, 0.075),
    "dropout_rate": (0.25, 0.5, 0.75),
    "batch_size": (28, 64, 128),
    "optimizer": ("RMSProp", "ADAM", "SGD"),
    "activation": ("tanh", "ReLU", "sigmoid"),
    "learning_rate": (0.001,),
}

N_STARTUP = 10
TPE_GAMMA, TPE_CANDIDATES, TPE_PRIOR_WEIGHT = 0.25, 24, 1.0
SA_COOLING = 0.95


class SearchSpace:
    """Ordered map of hyperparameter name to its finite set of choices."""

    def __init__(self, dims: Mapping[str, Sequence]):
        self.dims = {k: tuple(v) for k, v in dims.items()}
        for k, v in self.dims.items():
            if not v:
                raise SpecError(f"dimension {k!r} has no choices")
            if len(set(v)) != len(v):
                raise SpecError(f"dimension {k!r} has duplicate choices")
            if k not in nn.HyperConfig.__dataclass_fields__:
                raise SpecError(f"unknown hyperparameter {k!r}")

    @classmethod
    def default(cls, regularizer: str = "dropout") -> "SearchSpace":
        dims = dict(DEFAULT_SPACE)
        if regularizer == "batch_norm":
            del dims["dropout_rate"]
        return cls(dims)

    @classmethod
    def from_file(cls, path, regularizer: str = "dropout") -> "SearchSpace":
        import yaml

        with open(path) as fh:
            dims = yaml.safe_load(fh)
        if regularizer == "batch_norm":
            dims.pop("dropout_rate", None)
        return cls(dims)

    def __iter__(self):
        return iter(self.dims)

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.dims.values())

    def contains(self, values: Mapping) -> bool:
        return all(values.get(k) in v for k, v in self.dims.items())

    def to_config(self, values: Mapping, regularizer: str = "dropout", n_epochs: int = 200) -> nn.HyperConfig:
        kw = dict(values)
        kw.setdefault("regularizer", regularizer)
        kw.setdefault("n_epochs", n_epochs)
        if kw["regularizer"] == "batch_norm":
            kw["dropout_rate"] = None
        return nn.HyperConfig(**kw)

    def values_of(self, config: nn.HyperConfig) -> dict:
        return {k: getattr(config, k) for k in self.dims}

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.dims.items()}


# -- seeds -------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Fold ``keys`` into ``master`` with splitmix64; result fits in 63 bits."""
    h = splitmix64(int(master) & _MASK64)
    for k in keys:
        h = splitmix64(h ^ (int(k) & _MASK64))
    return h >> 1


# stream ids for derive_seed(study_seed, trial_index, stream)
_TRAIN, _SAMPLE, _ACCEPT = 0, 1, 2


# -- records -----------------------------------------------------------------

@dataclass
class TrialRecord:
    trial_index: int
    config: nn.HyperConfig
    seed: int
    validation_mse: float
    test_mse: float = math.nan
    train_mse: float = math.nan
    best_epoch: int = -1
    train_trace: list[float] = field(default_factory=list)
    val_trace: list[float] = field(default_factory=list)
    status: str = "ok"
    study_seed: int = 0
    wall_time: float | None = None
    accepted: bool | None = None

    def to_json(self) -> str:
        d = {
            "trial_index": self.trial_index,
            "study_seed": self.study_seed,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "validation_mse": _num(self.validation_mse),
            "test_mse": _num(self.test_mse),
            "train_mse": _num(self.train_mse),
            "best_epoch": self.best_epoch,
            "status": self.status,
            "accepted": self.accepted,
            "train_trace": self.train_trace,
            "val_trace": self.val_trace,
        }
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        d = json.loads(line)
        return cls(
            trial_index=d["trial_index"],
            config=nn.HyperConfig.from_dict(d["config"]),
            seed=d["seed"],
            validation_mse=_unnum(d["validation_mse"]),
            test_mse=_unnum(d["test_mse"]),
            train_mse=_unnum(d["train_mse"]),
            best_epoch=d["best_epoch"],
            train_trace=d["train_trace"],
            val_trace=d["val_trace"],
            status=d["status"],
            study_seed=d["study_seed"],
            accepted=d.get("accepted"),
        )


def _num(x: float):
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _unnum(x) -> float:
    return float(x)


@dataclass
class Study:
    sampler: str
    budget: int
    seed: int
    trials: list[TrialRecord] = field(default_factory=list)
    best_state: nn.NetworkState | None = None

    @property
    def best(self) -> TrialRecord:
        """Trial with the lowest validation MSE (earliest on ties); test MSE is never read."""
        if not self.trials:
            raise ValueError("study has no trials")
        return min(self.trials, key=lambda r: (r.validation_mse, r.trial_index))


# -- samplers ----------------------------------------------------------------

def sample_random(space: SearchSpace, rng: np.random.Generator) -> dict:
    """Each dimension drawn uniformly and independently."""
    return {k: v[int(rng.integers(len(v)))] for k, v in space.dims.items()}


def _smoothed(records: Sequence[TrialRecord], name: str, choices: tuple, prior_weight: float) -> np.ndarray:
    counts = np.full(len(choices), prior_weight, dtype=float)
    pos = {c: i for i, c in enumerate(choices)}
    for r in records:
        j = pos.get(getattr(r.config, name))
        if j is not None:
            counts[j] += 1.0
    return counts / counts.sum()


def split_good_bad(history: Sequence[TrialRecord], gamma: float) -> tuple[list, list]:
    order = sorted(history, key=lambda r: (r.validation_mse, r.trial_index))
    n_good = max(1, math.ceil(gamma * len(order))) if order else 0
    return order[:n_good], order[n_good:]


def sample_tpe(space: SearchSpace, history: Sequence[TrialRecord], rng: np.random.Generator,
               gamma: float = TPE_GAMMA, n_candidates: int = TPE_CANDIDATES,
               prior_weight: float = TPE_PRIOR_WEIGHT) -> dict:
    """Tree-structured Parzen estimator step for a purely categorical space.

    Past trials are split at the ``gamma`` quantile of validation MSE.  Per
    dimension, l(x) and g(x) are category frequencies of the good and bad
    sets with ``prior_weight`` pseudo-counts.  ``n_candidates`` draws from l
    are scored by sum(log l - log g) and the best one is returned.
    """
    good, bad = split_good_bad(history, gamma)
    names = list(space.dims)
    draws = {}
    score = np.zeros(n_candidates)
    for name in names:
        choices = space.dims[name]
        l = _smoothed(good, name, choices, prior_weight)
        g = _smoothed(bad, name, choices, prior_weight)
        idx = np.minimum(np.searchsorted(np.cumsum(l), rng.random(n_candidates), side="right"),
                         len(choices) - 1)
        draws[name] = idx
        score += np.log(l[idx]) - np.log(g[idx])
    best = int(np.argmax(score))
    return {name: space.dims[name][int(draws[name][best])] for name in names}


def sample_sa(space: SearchSpace, current: Mapping, temperature: float,
              rng: np.random.Generator) -> dict:
    """Neighbour of ``current``: one uniformly chosen dimension moved to a different value.

    ``temperature`` only matters for acceptance (:func:`sa_accept`); it is
    validated here so a cooled-out schedule is caught early.
    """
    if not temperature > 0:
        raise SpecError(f"temperature must be positive, got {temperature}")
    movable = [k for k, v in space.dims.items() if len(v) > 1]
    proposal = dict(current)
    if not movable:
        return proposal
    name = movable[int(rng.integers(len(movable)))]
    others = [c for c in space.dims[name] if c != current[name]]
    proposal[name] = others[int(rng.integers(len(others)))]
    return proposal


def sa_accept(delta: float, temperature: float, rng: np.random.Generator) -> bool:
    """Metropolis rule: always accept improvements, else with prob exp(-delta/T)."""
    u = rng.random()
    if math.isnan(delta) or delta <= 0:
        return True
    return bool(u < math.exp(-delta / temperature))


def initial_temperature(losses: Sequence[float]) -> float:
    finite = np.asarray([x for x in losses if math.isfinite(x)], dtype=float)
    sd = float(finite.std(ddof=1)) if len(finite) >= 2 else 0.0
    if sd > 0:
        return sd
    scale = float(np.abs(finite).mean()) if len(finite) else 1.0
    return scale * 0.1 if scale > 0 else 1.0


# -- objective ---------------------------------------------------------------

Objective = Callable[[nn.HyperConfig, int], tuple[TrialRecord, "nn.NetworkState | None"]]


def train_objective(split: SplitDataset) -> Objective:
    """Train on ``split.train``, pick the epoch with lowest validation MSE, score test."""
    xt, yt = split.train.values, split.train.target
    xv, yv = split.validation.values, split.validation.target

    def run(config: nn.HyperConfig, seed: int):
        state = nn.init(config, split.input_width, seed)
        try:
            res = nn.train(state, xt, yt, xv, yv)
        except TrainingDiverged as exc:
            rec = TrialRecord(-1, config, seed, math.inf, status=f"diverged@{exc.epoch}")
            return rec, None
        test_mse = math.nan
        if len(split.test):
            test_mse = nn.mse_loss(nn.predict(res.state, split.test.values), split.test.target)
        rec = TrialRecord(-1, config, seed, res.best_val_mse, test_mse,
                          res.train_mse[res.best_epoch], res.best_epoch,
                          res.train_mse, res.val_mse)
        return rec, res.state

    return run


# -- study loop --------------------------------------------------------------

def _load_log(path: Path | None, study_seed: int) -> dict[int, TrialRecord]:
    done: dict[int, TrialRecord] = {}
    if path is None or not path.exists():
        return done
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = TrialRecord.from_json(line)
            except (ValueError, KeyError):
                break  # torn final line from a crash
            if rec.study_seed == study_seed:
                done[rec.trial_index] = rec
    return done


def run_study(split: SplitDataset | None, space: SearchSpace, sampler: str = "tpe",
              budget: int = 50, seed: int = 0, regularizer: str = "dropout",
              n_epochs: int = 200, log_path=None, objective: Objective | None = None,
              n_startup: int = N_STARTUP, tpe_params: Mapping | None = None,
              cooling: float = SA_COOLING, keep_best_state: bool = True) -> Study:
    """Run ``budget`` trials and keep the one with the lowest validation MSE.

    When ``log_path`` names an existing JSON-lines log, trials recorded
    there for this ``seed`` are reused instead of retrained.  Diverged
    trials score +inf and the study carries on.
    """
    if sampler not in SAMPLERS:
        raise SpecError(f"sampler must be one of {SAMPLERS}, got {sampler!r}")
    if budget < 1:
        raise SpecError("budget must be >= 1")
    if objective is None:
        objective = train_objective(split)
    log_path = Path(log_path) if log_path is not None else None
    done = _load_log(log_path, seed)
    tpe_params = dict(tpe_params or {})
    study = Study(sampler, budget, seed)
    best_loss, best_index = math.inf, None
    temperature, current = None, None
    log = open(log_path, "a") if log_path is not None else None
    try:
        for i in range(budget):
            rng = np.random.default_rng(derive_seed(seed, i, _SAMPLE))
            if sampler == "rs" or i < n_startup:
                values = sample_random(space, rng)
            elif sampler == "tpe":
                values = sample_tpe(space, study.trials, rng, **tpe_params)
            else:
                if temperature is None:
                    temperature = initial_temperature([r.validation_mse for r in study.trials])
                    current = study.best
                values = sample_sa(space, space.values_of(current.config), temperature, rng)
            config = space.to_config(values, regularizer, n_epochs)
            train_seed = derive_seed(seed, i, _TRAIN)
            state = None
            if i in done:
                rec = done[i]
            else:
                t0 = time.perf_counter()
                rec, state = objective(config, train_seed)
                rec.trial_index, rec.study_seed = i, seed
                rec.wall_time = time.perf_counter() - t0
            if sampler == "sa" and temperature is not None:
                delta = rec.validation_mse - current.validation_mse
                if math.isinf(current.validation_mse):
                    delta = -math.inf
                rec.accepted = sa_accept(delta, temperature, np.random.default_rng(
                    derive_seed(seed, i, _ACCEPT)))
                if rec.accepted:
                    current = rec
                temperature *= cooling
            if i not in done and log is not None:
                log.write(rec.to_json() + "\n")
                log.flush()
            study.trials.append(rec)
            if rec.validation_mse < best_loss:
                best_loss, best_index = rec.validation_mse, i
                study.best_state = state
    finally:
        if log is not None:
            log.close()
    if keep_best_state and study.best_state is None and best_index is not None:
        rec = study.trials[best_index]
        _, study.best_state = objective(rec.config, rec.seed)
    return study


def run_studies(split: SplitDataset, space: SearchSpace, sampler: str, budget: int,
                seeds: Sequence[int], **kw) -> list[Study]:
    """One independent study per seed."""
    return [run_study(split, space, sampler, budget, seed=s, **kw) for s in seeds]

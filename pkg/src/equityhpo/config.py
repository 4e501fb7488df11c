"""Run configuration: a YAML (or JSON) file plus command-line overrides.

Schema (every key optional)::

    data:
      ohlcv: path            # default: bundled sp500_monthly.csv
      fundamentals: path     # default: bundled gw_monthly.csv
      ohlcv_columns: {}      # canonical header -> header in file
      gw_columns: {}         # RawFundamentalsRow field -> header in file
    features: [technical, fundamental]
    regularizers: [dropout, batch_norm]
    experiments: [Exp1, Exp2, Exp3, Exp4]
    oos_start: {Exp1: 200406}   # default: final 20% of each window
    sampler: tpe                # tpe | sa | rs
    budget: 50
    seeds: 5
    seed: 0                     # master seed
    epochs: 200
    per_seed_hpo: true          # false: one search, best config retrained per seed
    space: null                 # YAML file name -> list of choices
    infl_lag: true
    benchmark_origin: data_start   # or oos_start
    shap: {enabled: true, background: 100, n_coalitions: 4096, exact: null, rows: test}
    jobs: 1
    out: results
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import hpo, nn
from .dataset import EXPERIMENT_SPANS, ExperimentWindow
from .errors import ConfigError, EquityHPOError
from .market_data import GW_SAMPLE, SP500_SAMPLE, bundled_path

FEATURE_SETS = ("technical", "fundamental")


@dataclass
class ShapOptions:
    enabled: bool = True
    background: int = 100
    n_coalitions: int = 4096
    exact: bool | None = None
    rows: str = "test"


@dataclass
class RunConfig:
    ohlcv: str | None = None
    fundamentals: str | None = None
    ohlcv_columns: dict = field(default_factory=dict)
    gw_columns: dict = field(default_factory=dict)
    features: list = field(default_factory=lambda: ["technical"])
    regularizers: list = field(default_factory=lambda: ["dropout"])
    experiments: list = field(default_factory=lambda: ["Exp1"])
    oos_start: dict = field(default_factory=dict)
    sampler: str = "tpe"
    budget: int = 50
    seeds: int = 5
    seed: int = 0
    epochs: int = 200
    per_seed_hpo: bool = True
    space: str | None = None
    infl_lag: bool = True
    benchmark_origin: str = "data_start"
    shap: ShapOptions = field(default_factory=ShapOptions)
    jobs: int = 1
    out: str = "results"

    @property
    def ohlcv_path(self) -> Path:
        return Path(self.ohlcv) if self.ohlcv else bundled_path(SP500_SAMPLE)

    @property
    def fundamentals_path(self) -> Path:
        return Path(self.fundamentals) if self.fundamentals else bundled_path(GW_SAMPLE)

    def window(self, exp_id: str) -> ExperimentWindow:
        return ExperimentWindow.standard(exp_id, self.oos_start.get(exp_id))

    def search_space(self, regularizer: str) -> hpo.SearchSpace:
        if self.space:
            return hpo.SearchSpace.from_file(self.space, regularizer)
        return hpo.SearchSpace.default(regularizer)

    def cells(self) -> list[tuple[str, str, str]]:
        return [(e, f, r) for e in self.experiments for f in self.features for r in self.regularizers]

    def validate(self) -> "RunConfig":
        def bad(msg):
            raise ConfigError(msg)

        for f in self.features:
            if f not in FEATURE_SETS:
                bad(f"unknown feature set {f!r}; choose from {FEATURE_SETS}")
        for r in self.regularizers:
            if r not in nn.REGULARIZERS:
                bad(f"unknown regularizer {r!r}; choose from {nn.REGULARIZERS}")
        for e in self.experiments:
            if e not in EXPERIMENT_SPANS:
                bad(f"unknown experiment {e!r}; choose from {tuple(EXPERIMENT_SPANS)}")
        for e in self.oos_start:
            if e not in EXPERIMENT_SPANS:
                bad(f"oos_start given for unknown experiment {e!r}")
        if self.sampler not in hpo.SAMPLERS:
            bad(f"sampler must be one of {hpo.SAMPLERS}")
        if self.budget < 1 or self.seeds < 1 or self.epochs < 1 or self.jobs < 1:
            bad("budget, seeds, epochs and jobs must be positive")
        if self.benchmark_origin not in ("data_start", "oos_start"):
            bad("benchmark_origin must be 'data_start' or 'oos_start'")
        if self.shap.rows not in ("test", "in_sample"):
            bad("shap.rows must be 'test' or 'in_sample'")
        if self.shap.background < 1 or self.shap.n_coalitions < 2:
            bad("shap.background and shap.n_coalitions must be positive")
        try:
            for e in self.experiments:
                self.window(e)
            for r in self.regularizers:
                space = self.search_space(r)
                for name, choices in space.dims.items():
                    for c in choices:
                        space.to_config({name: c}, r, self.epochs)
        except EquityHPOError as exc:
            raise ConfigError(str(exc)) from None
        except (OSError, TypeError) as exc:
            raise ConfigError(f"search space: {exc}") from None
        if "fundamental" in self.features and not self.fundamentals_path.exists():
            bad(f"fundamentals file not found: {self.fundamentals_path}")
        if not self.ohlcv_path.exists():
            bad(f"OHLCV file not found: {self.ohlcv_path}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ohlcv"] = self.ohlcv or f"<bundled>/{SP500_SAMPLE}"
        d["fundamentals"] = self.fundamentals or f"<bundled>/{GW_SAMPLE}"
        d["windows"] = {e: self.window(e).to_dict() for e in self.experiments}
        del d["jobs"], d["out"]
        return d


_NESTED = {"data": ("ohlcv", "fundamentals", "ohlcv_columns", "gw_columns")}


def config_from_mapping(raw: Mapping[str, Any] | None) -> RunConfig:
    raw = dict(raw or {})
    flat: dict[str, Any] = {}
    data = raw.pop("data", None) or {}
    for k, v in data.items():
        if k not in _NESTED["data"]:
            raise ConfigError(f"unknown data key {k!r}")
        flat[k] = v
    shap = raw.pop("shap", None) or {}
    known = {f.name for f in fields(RunConfig)}
    for k, v in raw.items():
        if k not in known:
            raise ConfigError(f"unknown config key {k!r}")
        flat[k] = v
    try:
        cfg = RunConfig(**flat, shap=ShapOptions(**shap))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.oos_start = {k: int(v) for k, v in (cfg.oos_start or {}).items()}
    for key in ("features", "regularizers", "experiments"):
        v = getattr(cfg, key)
        if isinstance(v, str):
            setattr(cfg, key, [v])
    return cfg


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
    cfg = config_from_mapping(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()

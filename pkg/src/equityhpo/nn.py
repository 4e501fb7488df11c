"""Feedforward regression network with dropout or batch normalization.

Forward and backward passes are written out by hand in numpy.  Hidden layers
are ``dense -> [batch norm] -> activation -> [dropout]``; the output layer is
a single linear unit trained on mean squared error.

Dropout is inverted (survivors scaled by ``1/(1-p)`` during training), so
inference needs no rescaling.  Batch norm normalizes the pre-activation and
keeps running statistics for inference; the dense layer feeding a batch-norm
layer carries no bias because ``beta`` already plays that role.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, SpecError, TrainingDiverged

ACTIVATIONS = ("tanh", "ReLU", "sigmoid")
OPTIMIZERS = ("SGD", "RMSProp", "ADAM")
REGULARIZERS = ("dropout", "batch_norm")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
RMSPROP_DECAY, RMSPROP_EPS = 0.9, 1e-8

MODEL_SCHEMA = "equityhpo.network/1"


@dataclass(frozen=True)
class HyperConfig:
    n_hidden_layers: int = 2
    n_units: int = 8
    init_sd: float = 0.05
    dropout_rate: float | None = 0.5
    batch_size: int = 64
    optimizer: str = "ADAM"
    activation: str = "tanh"
    learning_rate: float = 0.001
    n_epochs: int = 200
    regularizer: str = "dropout"

    def __post_init__(self):
        if self.n_hidden_layers < 1 or self.n_units < 1 or self.batch_size < 1:
            raise SpecError("layer count, unit count and batch size must be positive")
        if self.n_epochs < 1:
            raise SpecError("n_epochs must be a positive integer")
        if self.init_sd < 0 or self.learning_rate < 0:
            raise SpecError("init_sd and learning_rate must be non-negative")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.optimizer not in OPTIMIZERS:
            raise SpecError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.regularizer not in REGULARIZERS:
            raise SpecError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.regularizer == "dropout":
            if self.dropout_rate is None or not 0 <= self.dropout_rate < 1:
                raise SpecError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        elif self.dropout_rate is not None:
            object.__setattr__(self, "dropout_rate", None)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperConfig":
        return cls(**d)


# -- state -------------------------------------------------------------------

@dataclass
class NetworkState:
    config: HyperConfig
    input_width: int
    params: dict[str, np.ndarray]
    running_mean: list[np.ndarray] = field(default_factory=list)
    running_var: list[np.ndarray] = field(default_factory=list)
    opt_state: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    seed: int = 0
    training: bool = False

    @property
    def uses_bn(self) -> bool:
        return self.config.regularizer == "batch_norm"

    def layer_shapes(self) -> list[tuple[int, int]]:
        n = self.config.n_hidden_layers
        return [self.params[f"W{i}"].shape for i in range(1, n + 1)] + [self.params["W_out"].shape]

    def copy(self) -> "NetworkState":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "config": self.config.to_dict(),
            "input_width": self.input_width,
            "seed": self.seed,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "running_mean": [v.tolist() for v in self.running_mean],
            "running_var": [v.tolist() for v in self.running_var],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkState":
        if d.get("schema") != MODEL_SCHEMA:
            raise SpecError(f"unsupported model schema {d.get('schema')!r}")
        state = cls(
            HyperConfig.from_dict(d["config"]),
            int(d["input_width"]),
            {k: np.asarray(v, dtype=float) for k, v in d["params"].items()},
            [np.asarray(v, dtype=float) for v in d["running_mean"]],
            [np.asarray(v, dtype=float) for v in d["running_var"]],
            seed=int(d["seed"]),
        )
        state.opt_state = _zero_buffers(state)
        return state

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _zero_buffers(state: NetworkState) -> dict[str, np.ndarray]:
    opt = state.config.optimizer
    if opt == "SGD":
        return {}
    if opt == "RMSProp":
        return {f"s:{k}": np.zeros_like(v) for k, v in state.params.items()}
    bufs = {f"m:{k}": np.zeros_like(v) for k, v in state.params.items()}
    bufs.update({f"v:{k}": np.zeros_like(v) for k, v in state.params.items()})
    return bufs


def init(config: HyperConfig, input_width: int, seed: int) -> NetworkState:
    """Weights ~ N(0, init_sd^2) from a seeded generator, zero biases, gamma=1, beta=0."""
    if input_width < 1:
        raise DomainError("input_width must be >= 1")
    rng = np.random.default_rng([seed, 0])
    params: dict[str, np.ndarray] = {}
    running_mean, running_var = [], []
    width = input_width
    bn = config.regularizer == "batch_norm"
    for i in range(1, config.n_hidden_layers + 1):
        params[f"W{i}"] = rng.normal(0.0, config.init_sd, size=(width, config.n_units))
        if bn:
            params[f"gamma{i}"] = np.ones(config.n_units)
            params[f"beta{i}"] = np.zeros(config.n_units)
            running_mean.append(np.zeros(config.n_units))
            running_var.append(np.ones(config.n_units))
        else:
            params[f"b{i}"] = np.zeros(config.n_units)
        width = config.n_units
    params["W_out"] = rng.normal(0.0, config.init_sd, size=(width, 1))
    params["b_out"] = np.zeros(1)
    state = NetworkState(config, input_width, params, running_mean, running_var, seed=seed)
    state.opt_state = _zero_buffers(state)
    return state


# -- activations -------------------------------------------------------------

def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(x)
    if name == "ReLU":
        return np.maximum(x, 0.0)
    return 0.5 * (1.0 + np.tanh(0.5 * x))  # overflow-free logistic


def _act_grad(name: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Derivative given pre-activation ``x`` and output ``y``."""
    if name == "tanh":
        return 1.0 - y * y
    if name == "ReLU":
        return (x > 0).astype(float)
    return y * (1.0 - y)


# -- forward / backward ------------------------------------------------------

@dataclass
class LayerCache:
    h_in: np.ndarray
    pre: np.ndarray  # input to the nonlinearity
    out: np.ndarray  # nonlinearity output, before dropout
    xhat: np.ndarray | None = None
    inv_std: np.ndarray | None = None
    batch_mean: np.ndarray | None = None
    batch_var: np.ndarray | None = None
    mask: np.ndarray | None = None


@dataclass
class ForwardCache:
    layers: list[LayerCache]
    h_last: np.ndarray
    pred: np.ndarray


def forward(state: NetworkState, batch: np.ndarray, mode: str = "infer",
            rng: np.random.Generator | None = None,
            masks: Sequence[np.ndarray] | None = None) -> tuple[np.ndarray, ForwardCache | None]:
    """Predictions for ``batch``; in train mode also returns the backprop cache.

    Train mode draws dropout masks from ``rng`` unless ``masks`` (already
    scaled by ``1/(1-p)``) are supplied, and normalizes with batch
    statistics.  Infer mode uses no masks and the running statistics.
    """
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != state.input_width:
        raise DomainError(f"batch width {x.shape[-1]} != input width {state.input_width}")
    cfg = state.config
    train = mode == "train"
    if mode not in ("train", "infer"):
        raise DomainError(f"mode must be 'train' or 'infer', got {mode!r}")
    bn = state.uses_bn
    if train and bn and len(x) < 2:
        raise DomainError("batch normalization needs at least two rows in train mode")
    p = cfg.dropout_rate or 0.0
    layers: list[LayerCache] = []
    h = x
    P = state.params
    for i in range(1, cfg.n_hidden_layers + 1):
        z = h @ P[f"W{i}"]
        if bn:
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
            else:
                mu, var = state.running_mean[i - 1], state.running_var[i - 1]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (z - mu) * inv_std
            pre = P[f"gamma{i}"] * xhat + P[f"beta{i}"]
        else:
            pre = z + P[f"b{i}"]
        out = _act(cfg.activation, pre)
        if train:
            cache = LayerCache(h, pre, out)
            if bn:
                cache.xhat, cache.inv_std, cache.batch_mean, cache.batch_var = xhat, inv_std, mu, var
            h = out
            if p > 0:
                if masks is not None:
                    mask = masks[i - 1]
                else:
                    mask = (rng.random(out.shape) >= p) / (1.0 - p)
                cache.mask = mask
                h = out * mask
            layers.append(cache)
        else:
            h = out
    pred = (h @ P["W_out"])[:, 0] + P["b_out"][0]
    if not train:
        return pred, None
    return pred, ForwardCache(layers, h, pred)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    d = np.asarray(pred) - np.asarray(target)
    return float(np.mean(d * d))


def backward(state: NetworkState, cache: ForwardCache, targets: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of the mean squared error with respect to every parameter."""
    cfg = state.config
    P = state.params
    n = len(cache.pred)
    dout = (2.0 / n) * (cache.pred - np.asarray(targets, dtype=float))[:, None]
    grads = {"W_out": cache.h_last.T @ dout, "b_out": dout.sum(axis=0)}
    dh = dout @ P["W_out"].T
    for i in range(cfg.n_hidden_layers, 0, -1):
        c = cache.layers[i - 1]
        if c.mask is not None:
            dh = dh * c.mask
        dpre = dh * _act_grad(cfg.activation, c.pre, c.out)
        if state.uses_bn:
            grads[f"gamma{i}"] = (dpre * c.xhat).sum(axis=0)
            grads[f"beta{i}"] = dpre.sum(axis=0)
            dxhat = dpre * P[f"gamma{i}"]
            dz = (c.inv_std / n) * (
                n * dxhat - dxhat.sum(axis=0) - c.xhat * (dxhat * c.xhat).sum(axis=0)
            )
        else:
            dz = dpre
            grads[f"b{i}"] = dz.sum(axis=0)
        grads[f"W{i}"] = c.h_in.T @ dz
        if i > 1:
            dh = dz @ P[f"W{i}"].T
    return grads


def update_running_stats(state: NetworkState, cache: ForwardCache) -> None:
    if not state.uses_bn:
        return
    for i, c in enumerate(cache.layers):
        state.running_mean[i] = BN_MOMENTUM * state.running_mean[i] + (1 - BN_MOMENTUM) * c.batch_mean
        state.running_var[i] = BN_MOMENTUM * state.running_var[i] + (1 - BN_MOMENTUM) * c.batch_var


def optimizer_step(state: NetworkState, grads: dict[str, np.ndarray]) -> NetworkState:
    """Apply one SGD (no momentum), RMSProp or ADAM update in place."""
    cfg = state.config
    lr = cfg.learning_rate
    state.step += 1
    t = state.step
    S = state.opt_state
    for k, g in grads.items():
        w = state.params[k]
        if cfg.optimizer == "SGD":
            w -= lr * g
        elif cfg.optimizer == "RMSProp":
            s = S[f"s:{k}"]
            s *= RMSPROP_DECAY
            s += (1 - RMSPROP_DECAY) * g * g
            w -= lr * g / (np.sqrt(s) + RMSPROP_EPS)
        else:
            m, v = S[f"m:{k}"], S[f"v:{k}"]
            m *= ADAM_BETA1
            m += (1 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1 - ADAM_BETA2) * g * g
            m_hat = m / (1 - ADAM_BETA1 ** t)
            v_hat = v / (1 - ADAM_BETA2 ** t)
            w -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return state


def predict(state: NetworkState, rows: np.ndarray) -> np.ndarray:
    return forward(state, rows, "infer")[0]


# -- training ----------------------------------------------------------------

@dataclass
class TrainResult:
    state: NetworkState
    train_mse: list[float]
    val_mse: list[float]
    best_epoch: int  # 0-based index into the traces

    @property
    def best_val_mse(self) -> float:
        return self.val_mse[self.best_epoch]


def minibatches(n: int, batch_size: int, min_size: int = 1) -> list[slice]:
    """Contiguous, unshuffled slices; a final batch smaller than ``min_size``
    is merged into its predecessor."""
    bounds = list(range(0, n, batch_size)) + [n]
    slices = [slice(a, b) for a, b in zip(bounds, bounds[1:])]
    if len(slices) > 1 and slices[-1].stop - slices[-1].start < min_size:
        last = slices.pop()
        slices[-1] = slice(slices[-1].start, last.stop)
    return slices


def train(state: NetworkState, x_train: np.ndarray, y_train: np.ndarray,
          x_val: np.ndarray, y_val: np.ndarray, n_epochs: int | None = None) -> TrainResult:
    """Train for ``n_epochs`` and return the snapshot with the lowest validation MSE.

    Raises :class:`TrainingDiverged` carrying the epoch index when a loss
    becomes non-finite.
    """
    cfg = state.config
    n_epochs = cfg.n_epochs if n_epochs is None else n_epochs
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    if len(x_train) == 0 or len(x_val) == 0:
        raise DomainError("training and validation sets must be non-empty")
    rng = np.random.default_rng([state.seed, 1])
    batches = minibatches(len(x_train), cfg.batch_size, 2 if state.uses_bn else 1)
    train_trace, val_trace = [], []
    best, best_epoch = None, -1
    state.training = True
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for epoch in range(n_epochs):
            for sl in batches:
                pred, cache = forward(state, x_train[sl], "train", rng)
                grads = backward(state, cache, y_train[sl])
                optimizer_step(state, grads)
                update_running_stats(state, cache)
            tr = mse_loss(predict(state, x_train), y_train)
            va = mse_loss(predict(state, x_val), y_val)
            if not (np.isfinite(tr) and np.isfinite(va)):
                state.training = False
                raise TrainingDiverged(epoch)
            train_trace.append(tr)
            val_trace.append(va)
            if best is None or va < val_trace[best_epoch]:
                best_epoch = epoch
                best = (copy.deepcopy(state.params), [m.copy() for m in state.running_mean],
                        [v.copy() for v in state.running_var])
    state.training = False
    snap = NetworkState(cfg, state.input_width, best[0], best[1], best[2],
                        copy.deepcopy(state.opt_state), state.step, state.seed)
    return TrainResult(snap, train_trace, val_trace, best_epoch)

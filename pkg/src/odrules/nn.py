"""Feed-forward ReLU regressor with hand-written backprop and Adam updates."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .data import Dataset
from .errors import DataError, TrainingDivergedError

DEFAULT_HIDDEN = (64, 32)
# wide, mostly-zero inputs (rule indicator blocks) train through a CSR matrix
SPARSE_MIN_WIDTH = 128
SPARSE_MAX_DENSITY = 0.1


@dataclass(eq=False)
class MlpModel:
    """Weights are stored (out, in). Predictions are ``net(x) * target_scale + target_mean``."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    target_mean: float = 0.0
    target_scale: float = 1.0
    hidden_activation: str = "relu"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if self.layer_dims[-1] != 1:
            raise DataError("final layer must have width 1")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise DataError("parameter count does not match layer_dims")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_dims[l + 1], self.layer_dims[l]):
                raise DataError(f"weight {l} has shape {W.shape}")
            if b.shape != (self.layer_dims[l + 1],):
                raise DataError(f"bias {l} has shape {b.shape}")
        if self.hidden_activation not in ("relu", "identity"):
            raise DataError(f"unknown activation {self.hidden_activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> MlpModel:
        return MlpModel(self.layer_dims, [W.copy() for W in self.weights],
                        [b.copy() for b in self.biases], self.target_mean,
                        self.target_scale, self.hidden_activation)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "hidden_activation": self.hidden_activation,
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> MlpModel:
        dims = d["layer_dims"]
        weights = [np.asarray(W, dtype=float).reshape(dims[l + 1], dims[l])
                   for l, W in enumerate(d["weights"])]
        return cls(tuple(dims), weights, [np.asarray(b, dtype=float) for b in d["biases"]],
                   float(d["target_mean"]), float(d["target_scale"]), d["hidden_activation"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> MlpModel:
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: not a valid model checkpoint ({e})") from None


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    adaptive_moment_decays: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    early_stop_patience: int | None = 20
    validation_fraction: float = 0.1
    target_standardize: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise DataError("learning_rate must be >= 0")
        b1, b2 = self.adaptive_moment_decays
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise DataError("moment decays must lie in (0, 1)")
        if not 0 <= self.validation_fraction < 1:
            raise DataError("validation_fraction must lie in [0, 1)")


@dataclass
class TrainHistory:
    # train_loss[e] is the size-weighted mean minibatch loss seen during epoch e,
    # in standardized-target units when target_standardize is on.
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_loss: float = math.nan
    best_epoch: int = -1
    stopped_early: bool = False


def init_mlp(input_dim: int, hidden_dims: Sequence[int] = DEFAULT_HIDDEN, seed: int = 0) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    dims = (int(input_dim), *(int(h) for h in hidden_dims), 1)
    if min(dims) < 1:
        raise DataError(f"layer widths must be >= 1, got {list(dims)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases)


def _act(model: MlpModel, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if model.hidden_activation == "relu" else z


def _forward(model: MlpModel, X: np.ndarray):
    """Raw network output (n,) plus the per-layer (input, pre-activation) cache."""
    cache = []
    a = X
    last = len(model.weights) - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W.T + b
        cache.append((a, z))
        a = z if l == last else _act(model, z)
    return a[:, 0], cache


def pre_activations(model: MlpModel, X) -> list[np.ndarray]:
    """Hidden-layer pre-activations; used to keep gradient checks away from ReLU kinks."""
    _, cache = _forward(model, np.atleast_2d(np.asarray(X, dtype=float)))
    return [z for _, z in cache[:-1]]


def forward(model: MlpModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.input_dim,):
        raise DataError(f"input has {x.size} values, model expects {model.input_dim}")
    out, _ = _forward(model, x[None, :])
    return float(out[0])


def loss_and_gradients(model: MlpModel, X, y) -> tuple[float, list[np.ndarray]]:
    """Mean squared error over the batch and its gradients, ordered like ``model.params()``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("batch must be a non-empty 2-D array")
    if X.shape[1] != model.input_dim or y.size != X.shape[0]:
        raise DataError(f"batch shape {X.shape} / {y.shape} does not fit model {model.layer_dims}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("batch contains non-finite values")
    return _loss_grad(model, X, y)


def _loss_grad(model: MlpModel, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    out, cache = _forward(model, X)
    r = out - y
    loss = float(np.mean(r * r))
    n_layers = len(model.weights)
    dW: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    db: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    delta = (2.0 / y.size) * r[:, None]
    for l in range(n_layers - 1, -1, -1):
        a_in, _ = cache[l]
        dW[l] = (a_in.T @ delta).T if sp.issparse(a_in) else delta.T @ a_in
        db[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ model.weights[l]
            if model.hidden_activation == "relu":
                delta = delta * (cache[l - 1][1] > 0)
    return loss, dW + db


def _mse(model: MlpModel, X: np.ndarray, y: np.ndarray) -> float:
    out, _ = _forward(model, X)
    return float(np.mean((out - y) ** 2))


def train(model: MlpModel, train: Dataset, cfg: TrainConfig = TrainConfig()) -> tuple[MlpModel, TrainHistory]:
    """Mini-batch Adam on MSE. Returns a new model; the input model is untouched.

    A ``validation_fraction`` slice is held out for early stopping, and the
    parameters from the best validation epoch are restored.
    """
    if train.n_rows == 0:
        raise DataError("cannot train on an empty dataset")
    if train.n_cols != model.input_dim:
        raise DataError(f"dataset has {train.n_cols} features, model expects {model.input_dim}")
    X = np.asarray(train.features, dtype=float)
    y = np.asarray(train.target, dtype=float)
    if np.isnan(X).any():
        raise DataError("training features contain missing cells")
    if X.shape[1] >= SPARSE_MIN_WIDTH and np.count_nonzero(X) <= SPARSE_MAX_DENSITY * X.size:
        X = sp.csr_array(X)

    m = model.copy()
    if cfg.target_standardize:
        mu, sd = float(y.mean()), float(y.std())
        m.target_mean, m.target_scale = mu, (sd if sd > 0 else 1.0)
    else:
        m.target_mean, m.target_scale = 0.0, 1.0
    yt = (y - m.target_mean) / m.target_scale

    rng = np.random.default_rng(cfg.seed)
    n_val = int(cfg.validation_fraction * len(y)) if cfg.validation_fraction > 0 else 0
    if n_val >= 1 and len(y) - n_val >= 1:
        perm = rng.permutation(len(y))
        val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        Xv, yv = X[val_idx], yt[val_idx]
        X, yt = X[tr_idx], yt[tr_idx]
    else:
        Xv = yv = None

    # parameters live in one flat buffer so each Adam step is a few vector ops
    flat = np.concatenate([p.ravel() for p in m.params()])
    views, offset = [], 0
    for p in m.params():
        views.append(flat[offset:offset + p.size].reshape(p.shape))
        offset += p.size
    k = len(m.weights)
    m.weights, m.biases = views[:k], views[k:]
    mom1 = np.zeros_like(flat)
    mom2 = np.zeros_like(flat)
    b1, b2 = cfg.adaptive_moment_decays
    lr, eps = cfg.learning_rate, cfg.epsilon
    hist = TrainHistory(initial_loss=_mse(m, X, yt))
    best_val, best_flat, since_best = math.inf, None, 0
    step = 0
    n = len(yt)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sse = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = _loss_grad(m, X[idx], yt[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}; "
                    f"try a smaller learning rate (now {lr})"
                )
            sse += loss * idx.size
            g = np.concatenate([gi.ravel() for gi in grads])
            step += 1
            mom1 *= b1
            mom1 += (1.0 - b1) * g
            mom2 *= b2
            mom2 += (1.0 - b2) * (g * g)
            flat -= (lr / (1.0 - b1 ** step)) * mom1 / (np.sqrt(mom2 / (1.0 - b2 ** step)) + eps)
        hist.train_loss.append(sse / n)
        if Xv is None:
            continue
        vl = _mse(m, Xv, yv)
        hist.val_loss.append(vl)
        if vl < best_val:
            best_val, since_best, hist.best_epoch = vl, 0, epoch
            best_flat = flat.copy()
        else:
            since_best += 1
            if cfg.early_stop_patience is not None and since_best >= cfg.early_stop_patience:
                hist.stopped_early = True
                break

    if best_flat is not None:
        flat[...] = best_flat
    return m, hist


def predict_batch(model: MlpModel, ds: Dataset | np.ndarray) -> np.ndarray:
    X = ds.features if isinstance(ds, Dataset) else np.asarray(ds, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DataError(f"expected (n, {model.input_dim}) features, got {X.shape}")
    if X.shape[0] == 0:
        return np.empty(0)
    out, _ = _forward(model, X)
    return out * model.target_scale + model.target_mean

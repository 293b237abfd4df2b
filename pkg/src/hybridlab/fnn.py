"""Feedforward network: ReLU hidden layers, linear output, MSE training.

The functional core (``forward``, ``mse_loss``, ``backward``, ``train``) works
on an :class:`FnnModel`. :class:`FNNRegressor` wraps it in the scikit-learn
estimator protocol.

Inputs are z-scored with statistics frozen at fit time. Targets may also be
standardized; the model then maps back to target units in ``forward`` so all
losses and gradients are reported in the units of ``y``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import TrainingError


@dataclass
class FnnModel:
    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    target_mean: np.ndarray = None
    target_std: np.ndarray = None
    feature_names: Optional[List[str]] = None

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        n_out = self.layer_sizes[-1]
        self.norm_mean = np.asarray(self.norm_mean, dtype=float)
        self.norm_std = np.asarray(self.norm_std, dtype=float)
        self.target_mean = np.zeros(n_out) if self.target_mean is None else np.asarray(self.target_mean, dtype=float)
        self.target_std = np.ones(n_out) if self.target_std is None else np.asarray(self.target_std, dtype=float)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("need one weight matrix and bias vector per layer transition")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer {i}: expected W{shape} and b({shape[0]},), "
                                 f"got W{w.shape} and b{b.shape}")
        if self.norm_mean.shape != (self.n_inputs,) or self.norm_std.shape != (self.n_inputs,):
            raise ValueError("normalization stats must match the input dimension")
        if np.any(self.norm_std <= 0) or np.any(self.target_std <= 0):
            raise ValueError("standard deviations must be positive")
        if self.feature_names is not None and len(self.feature_names) != self.n_inputs:
            raise ValueError("feature_names length must equal the input dimension")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def norm_stats(self):
        return self.norm_mean, self.norm_std

    def copy(self) -> "FnnModel":
        return FnnModel(list(self.layer_sizes), [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.norm_mean.copy(), self.norm_std.copy(),
                        self.target_mean.copy(), self.target_std.copy(),
                        None if self.feature_names is None else list(self.feature_names))

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "norm_stats": {"mean": self.norm_mean.tolist(), "std": self.norm_std.tolist()},
            "target_stats": {"mean": self.target_mean.tolist(), "std": self.target_std.tolist()},
            "feature_names": self.feature_names,
        }

    @classmethod
    def from_dict(cls, d) -> "FnnModel":
        ts = d.get("target_stats") or {}
        return cls(d["layer_sizes"], d["weights"], d["biases"], d["norm_stats"]["mean"],
                   d["norm_stats"]["std"], ts.get("mean"), ts.get("std"), d.get("feature_names"))

    @classmethod
    def zeros(cls, layer_sizes, feature_names=None) -> "FnnModel":
        sizes = list(layer_sizes)
        return cls(sizes, [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(o) for o in sizes[1:]], np.zeros(sizes[0]), np.ones(sizes[0]),
                   feature_names=feature_names)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 2000
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int = 50
    optimizer: str = "adam"
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must lie in [0, 0.5]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    def to_dict(self):
        return asdict(self)


def init_model(layer_sizes: Sequence[int], seed=0, norm_stats=None, target_stats=None,
               feature_names=None) -> FnnModel:
    """He-uniform weights (limit sqrt(6/fan_in)) and zero biases."""
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError("layer_sizes needs an input and an output size, all >= 1")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    mean, std = norm_stats if norm_stats is not None else (np.zeros(sizes[0]), np.ones(sizes[0]))
    tmean, tstd = target_stats if target_stats is not None else (None, None)
    return FnnModel(sizes, weights, biases, mean, std, tmean, tstd, feature_names)


def compute_stats(X) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column mean and std; constant columns get std 1."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    return mean, std


def normalize(stats, x):
    mean, std = stats
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != np.shape(mean)[0]:
        raise ValueError(f"feature dimension {x.shape[-1]} does not match stats dimension {np.shape(mean)[0]}")
    return (x - mean) / std


def _as_batch(model, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ValueError(f"expected inputs with {model.n_inputs} features, got shape {x.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("inputs must be finite")
    return X, single


def _forward_pass(model, X):
    """Activations per layer (row-major batch) and hidden pre-activations."""
    a = normalize(model.norm_stats, X)
    acts, pre = [a], []
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W.T + b
        if i < last:
            pre.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        else:
            out = z
    return acts, pre, out


def forward(model: FnnModel, x) -> np.ndarray:
    """Network output for one input vector or a batch of row vectors."""
    X, single = _as_batch(model, x)
    _, _, out = _forward_pass(model, X)
    y = model.target_mean + model.target_std * out
    return y[0] if single else y


def _targets(model, Y, n):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None] if model.n_outputs == 1 or Y.size != model.n_outputs else Y[None, :]
    if Y.shape != (n, model.n_outputs):
        raise ValueError(f"targets must have shape ({n}, {model.n_outputs}), got {Y.shape}")
    return Y


def mse_loss(model: FnnModel, X, Y) -> float:
    """Mean over samples of the squared Euclidean output error."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    Y = _targets(model, Y, X.shape[0])
    resid = Y - forward(model, X)
    return float(np.mean(np.sum(resid ** 2, axis=1)))


def backward(model: FnnModel, X, Y):
    """Exact gradient of :func:`mse_loss`; ReLU'(0) is taken as 0.

    Returns ``(dW, db)`` lists aligned with ``model.weights``/``model.biases``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    X, _ = _as_batch(model, X)
    Y = _targets(model, Y, X.shape[0])
    acts, pre, out = _forward_pass(model, X)
    n = X.shape[0]
    pred = model.target_mean + model.target_std * out
    delta = (-2.0 / n) * (Y - pred) * model.target_std
    L = len(model.weights)
    dW, db = [None] * L, [None] * L
    for i in range(L - 1, -1, -1):
        dW[i] = delta.T @ acts[i]
        db[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * (pre[i - 1] > 0.0)
    return dW, db


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def split_indices(n: int, validation_fraction: float, seed) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded random train/validation split of ``range(n)``."""
    n_val = int(round(validation_fraction * n))
    if n_val == 0:
        return np.arange(n), np.arange(0)
    perm = np.random.default_rng([int(seed), 7919]).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


@dataclass
class History:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_loss: float = float("inf")
    stopped_early: bool = False

    def to_dict(self):
        return asdict(self)


def train(model: FnnModel, X, Y, cfg: TrainConfig, validation=None):
    """Mini-batch training; returns ``(best_model, history)``.

    ``model`` must already carry normalization statistics computed from the
    training data. When ``validation`` is ``None`` and
    ``cfg.validation_fraction > 0`` a seeded split is carved out of ``X``.
    The returned model is the one with the lowest validation loss (training
    loss when there is no validation data). ``model`` itself is not mutated.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training inputs must be a nonempty 2-D array")
    Y = _targets(model, Y, X.shape[0])
    if validation is None and cfg.validation_fraction > 0:
        tr, va = split_indices(X.shape[0], cfg.validation_fraction, cfg.seed)
        X, Y, validation = X[tr], Y[tr], (X[va], Y[va])
    if validation is not None:
        Xv = np.asarray(validation[0], dtype=float)
        Yv = _targets(model, validation[1], Xv.shape[0])
        if Xv.shape[0] == 0:
            validation = None

    work = model.copy()
    best = model.copy()
    history = History()
    if cfg.epochs == 0:
        return best, history

    params = work.weights + work.biases
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    nw = len(work.weights)
    since_best = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                dW, db = backward(work, X[idx], Y[idx])
            if cfg.weight_decay:
                dW = [g + cfg.weight_decay * W for g, W in zip(dW, work.weights)]
            opt.step(params, dW + db)
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            train_loss = mse_loss(work, X, Y)
            val_loss = mse_loss(work, Xv, Yv) if validation is not None else train_loss
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(f"training diverged at epoch {epoch} (non-finite loss)",
                                epoch=epoch, last_good=best)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        if val_loss < history.best_loss:
            history.best_loss, history.best_epoch = val_loss, epoch
            best.weights = [w.copy() for w in work.weights[:nw]]
            best.biases = [b.copy() for b in work.biases[:nw]]
            since_best = 0
        else:
            since_best += 1
            if cfg.patience and since_best >= cfg.patience:
                history.stopped_early = True
                break
    return best, history


class FNNRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn regressor backed by :func:`train`.

    Parameters mirror :class:`TrainConfig` plus the hidden architecture.
    Fitted attributes: ``model_``, ``history_``, ``n_features_in_``.
    """

    def __init__(self, hidden_layer_sizes=(32, 32), learning_rate=1e-3, batch_size=64, epochs=2000,
                 patience=50, validation_fraction=0.1, optimizer="adam", standardize_targets=True,
                 weight_decay=0.0, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.optimizer = optimizer
        self.standardize_targets = standardize_targets
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           epochs=self.epochs, seed=int(self.random_state or 0),
                           validation_fraction=self.validation_fraction, patience=self.patience,
                           optimizer=self.optimizer, weight_decay=self.weight_decay)

    def fit(self, X, y, feature_names=None):
        X, y = check_X_y(X, y, y_numeric=True, multi_output=True)
        cfg = self._config()
        Y = y[:, None] if y.ndim == 1 else y
        self._single_output = y.ndim == 1
        tr, va = split_indices(X.shape[0], cfg.validation_fraction, cfg.seed)
        Xt, Yt = X[tr], Y[tr]
        tstats = compute_stats(Yt) if self.standardize_targets else None
        sizes = [X.shape[1], *self.hidden_layer_sizes, Y.shape[1]]
        model = init_model(sizes, seed=cfg.seed, norm_stats=compute_stats(Xt),
                           target_stats=tstats, feature_names=feature_names)
        validation = (X[va], Y[va]) if va.size else None
        self.model_, self.history_ = train(model, Xt, Yt, cfg, validation=validation)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        y = forward(self.model_, X)
        return y[:, 0] if getattr(self, "_single_output", True) else y

"""HYBRID-1 / HYBRID-2 composition of a physical model with an FNN.

HYBRID-1 learns the residual ``V_true - V_phy`` and adds it back to the
physical voltage; HYBRID-2 learns the terminal voltage directly. In both the
network sees the physical model's state at the same step as the target plus
the applied current (and SoH for aging-aware models).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import physics
from .core import KELVIN, Dataset, SimTrace, atomic_write_text, common_prefix, rer, rmse
from .exceptions import ConfigError, DataError, WiringError
from .fnn import FNNRegressor, FnnModel, forward

SCHEMA_VERSION = 1
FRAMEWORKS = ("hybrid-1", "hybrid-2")
ALLOWED_FEATURES = {
    "spmt": ("soc_bulk", "soc_surf", "temperature", "current", "soh"),
    "ndc": ("V_b", "V_s", "V_1", "temperature", "current", "soh"),
}
DEFAULT_FEATURES = {
    "spmt": ("soc_bulk", "soc_surf", "temperature", "current"),
    "ndc": ("V_b", "V_s", "V_1", "temperature", "current"),
}


@dataclass(frozen=True)
class FeatureSpec:
    physical_model: str
    framework: str = "hybrid-1"
    features: Optional[Sequence[str]] = None
    aging_aware: bool = False

    def __post_init__(self):
        if self.physical_model not in ALLOWED_FEATURES:
            raise ConfigError(f"physical_model must be one of {tuple(ALLOWED_FEATURES)}")
        if self.framework not in FRAMEWORKS:
            raise ConfigError(f"framework must be one of {FRAMEWORKS}")
        names = list(DEFAULT_FEATURES[self.physical_model] if self.features is None else self.features)
        if self.aging_aware and "soh" not in names:
            names.append("soh")
        allowed = ALLOWED_FEATURES[self.physical_model]
        bad = [n for n in names if n not in allowed]
        if bad:
            raise ConfigError(f"features {bad} not available for {self.physical_model}; allowed: {allowed}")
        if len(set(names)) != len(names):
            raise ConfigError("duplicate feature names")
        if "current" not in names:
            raise ConfigError("feature list must include 'current'")
        if "soh" in names and not self.aging_aware:
            raise ConfigError("'soh' is only a feature of aging-aware models")
        object.__setattr__(self, "features", tuple(names))

    @property
    def names(self) -> tuple:
        return self.features

    def to_dict(self):
        return {"physical_model": self.physical_model, "framework": self.framework,
                "features": list(self.features), "aging_aware": self.aging_aware}

    @classmethod
    def from_dict(cls, d):
        return cls(d["physical_model"], d.get("framework", "hybrid-1"), d.get("features"),
                   bool(d.get("aging_aware", False)))


def assemble_features(spec: FeatureSpec, record: Mapping[str, float], current: float,
                      soh: Optional[float] = None, temperature: Optional[float] = None) -> np.ndarray:
    """Feature vector in ``spec`` order.

    ``temperature`` (K), when given, overrides any ``record['temperature']``;
    NDC records carry no temperature of their own.
    """
    out = np.empty(len(spec.features))
    for i, name in enumerate(spec.features):
        if name == "current":
            value = current
        elif name == "soh":
            value = soh
        elif name == "temperature" and temperature is not None:
            value = temperature
        else:
            value = record.get(name)
        if value is None:
            raise WiringError(f"feature {name!r} is missing", feature=name)
        out[i] = value
    return out


def feature_matrix(spec: FeatureSpec, trace: SimTrace, temperature=None, soh=None,
                   n: Optional[int] = None) -> np.ndarray:
    """Row-per-step version of :func:`assemble_features` over a trace prefix.

    ``temperature`` (K) and ``soh`` may be scalars or per-step arrays.
    """
    n = len(trace) if n is None else n
    X = np.empty((n, len(spec.features)))
    for i, name in enumerate(spec.features):
        if name == "current":
            col = trace.current[:n]
        elif name == "soh":
            col = soh
        elif name == "temperature" and temperature is not None:
            col = temperature
        else:
            col = trace.features.get(name)
        if col is None:
            raise WiringError(f"feature {name!r} is missing", feature=name)
        col = np.asarray(col, dtype=float)
        if col.ndim == 0:
            X[:, i] = col
        elif col.ndim == 1 and col.size >= n:
            X[:, i] = col[:n]
        else:
            raise WiringError(f"feature {name!r} has {col.size} values, need {n}", feature=name)
    return X


def _dataset_temperature_k(spec: FeatureSpec, dataset: Optional[Dataset]):
    """Per-step temperature feature source, or None when the trace provides it."""
    if "temperature" not in spec.features or spec.physical_model == "spmt":
        return None
    if dataset is None or dataset.temperature is None:
        raise WiringError("feature 'temperature' needs a dataset temperature column", feature="temperature")
    return dataset.temperature + KELVIN


def _dataset_soh(spec: FeatureSpec, dataset: Optional[Dataset], soh=None):
    if "soh" not in spec.features:
        return None
    if soh is not None:
        return soh
    if dataset is not None and dataset.soh is not None:
        return dataset.soh
    raise WiringError("feature 'soh' is required by an aging-aware model", feature="soh")


def build_training_pairs(spec: FeatureSpec, trace: SimTrace, dataset: Dataset, soh=None):
    """Inputs and targets over the aligned prefix of ``trace`` and ``dataset``.

    HYBRID-1 targets are ``V_true - V_phy``; HYBRID-2 targets are ``V_true``.
    """
    n = common_prefix(trace, dataset)
    if n == 0:
        raise DataError(f"no aligned samples between trace and dataset {dataset.label!r}")
    temp = _dataset_temperature_k(spec, dataset)
    X = feature_matrix(spec, trace, None if temp is None else temp[:n],
                       _soh_prefix(_dataset_soh(spec, dataset, soh), n), n)
    v_true = dataset.voltage[:n]
    y = v_true - trace.voltage[:n] if spec.framework == "hybrid-1" else v_true.copy()
    return X, y


def _soh_prefix(soh, n):
    if soh is None or np.ndim(soh) == 0:
        return soh
    return np.asarray(soh, dtype=float)[:n]


@dataclass(frozen=True)
class HybridModel:
    spec: FeatureSpec
    physical_params: physics.PhysicalParams
    fnn: FnnModel
    metadata: Dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.fnn.n_inputs != len(self.spec.features):
            raise WiringError(f"FNN expects {self.fnn.n_inputs} inputs but the feature spec has "
                              f"{len(self.spec.features)}")
        if self.fnn.n_outputs != 1:
            raise ConfigError("hybrid models need a single-output FNN")
        if physics.model_kind(self.physical_params) != self.spec.physical_model:
            raise ConfigError("physical parameters do not match the feature spec's model")
        if self.fnn.feature_names is not None and tuple(self.fnn.feature_names) != self.spec.features:
            raise WiringError(f"FNN feature order {self.fnn.feature_names} differs from spec "
                              f"{list(self.spec.features)}")

    @property
    def framework(self) -> str:
        return self.spec.framework

    def combine(self, v_phy, fnn_out):
        return v_phy + fnn_out if self.spec.framework == "hybrid-1" else fnn_out

    def to_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION}
        d.update(self.fnn.to_dict())
        d["feature_names"] = list(self.spec.features)
        d["framework_tag"] = self.spec.framework
        d["aging_aware"] = self.spec.aging_aware
        d["physical_model"] = self.spec.physical_model
        d["physical_params"] = physics.params_to_dict(self.physical_params)
        d["training"] = self.metadata
        return d

    @classmethod
    def from_dict(cls, d) -> "HybridModel":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported artifact schema_version {d.get('schema_version')!r}")
        try:
            spec = FeatureSpec(d["physical_model"], d["framework_tag"], d["feature_names"],
                               bool(d.get("aging_aware", False)))
            params = physics.params_from_dict(d["physical_model"], d["physical_params"])
            fnn = FnnModel.from_dict(d)
        except KeyError as exc:
            raise DataError(f"artifact is missing field {exc}") from exc
        return cls(spec, params, fnn, d.get("training") or {})

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "HybridModel":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not a valid model artifact ({exc})") from exc
        return cls.from_dict(d)


def predict_voltage(hybrid: HybridModel, record: Mapping[str, float], v_phy: float, current: float,
                    soh: Optional[float] = None, temperature: Optional[float] = None) -> float:
    x = assemble_features(hybrid.spec, record, current, soh, temperature)
    return float(hybrid.combine(v_phy, forward(hybrid.fnn, x)[0]))


def predict_trace(hybrid: HybridModel, trace: SimTrace, temperature=None, soh=None,
                  n: Optional[int] = None) -> np.ndarray:
    """Vectorized :func:`predict_voltage` over the first ``n`` steps of a trace."""
    n = len(trace) if n is None else n
    if n == 0:
        return np.empty(0)
    X = feature_matrix(hybrid.spec, trace, temperature, soh, n)
    return hybrid.combine(trace.voltage[:n], forward(hybrid.fnn, X)[:, 0])


def simulate_for(params, dataset: Dataset, dt: float = 1.0) -> SimTrace:
    """Open-loop physical run under a dataset's current, window disabled."""
    T0 = None if dataset.temperature is None else float(dataset.temperature[0])
    return physics.simulate(params, dataset.to_profile(), dataset.initial_soc, T0, dt=dt,
                            enforce_window=False)


@dataclass
class EvalReport:
    label: str
    rmse_phy: float
    rmse_hybrid: float
    rer: float
    time: np.ndarray
    current: np.ndarray
    v_true: np.ndarray
    v_phy: np.ndarray
    v_hybrid: np.ndarray
    truncated: bool = False
    soh: Optional[float] = None

    @property
    def residual_phy(self):
        return self.v_true - self.v_phy

    @property
    def residual_hybrid(self):
        return self.v_true - self.v_hybrid

    def __len__(self):
        return self.time.size


def evaluate(hybrid: HybridModel, dataset: Dataset, dt: float = 1.0,
             physical_params=None, trace: Optional[SimTrace] = None) -> EvalReport:
    """RMSE of physics and hybrid against ``dataset`` over their common steps.

    The physical model runs open-loop on the dataset's current profile; the
    dataset voltage never feeds back into the state. If the simulation stops
    early the report covers the prefix and is flagged ``truncated``.
    """
    params = hybrid.physical_params if physical_params is None else physical_params
    if trace is None:
        trace = simulate_for(params, dataset, dt)
    n = common_prefix(trace, dataset)
    if n == 0:
        raise DataError(f"no aligned samples for dataset {dataset.label!r}")
    temp = _dataset_temperature_k(hybrid.spec, dataset)
    soh = _soh_prefix(_dataset_soh(hybrid.spec, dataset), n)
    v_hyb = predict_trace(hybrid, trace, None if temp is None else temp[:n], soh, n)
    v_true, v_phy = dataset.voltage[:n], trace.voltage[:n]
    r_phy, r_hyb = rmse(v_true, v_phy), rmse(v_true, v_hyb)
    # a perfect physical model leaves nothing to reduce: RER is reported as NaN
    reduction = rer(r_phy, r_hyb) if r_phy > 0 else float("nan")
    return EvalReport(dataset.label, r_phy, r_hyb, reduction, trace.time[:n].copy(),
                      trace.current[:n].copy(), v_true.copy(), v_phy.copy(), v_hyb,
                      truncated=n < len(dataset), soh=dataset.soh_value)


class HybridRegressor(BaseEstimator):
    """Estimator that fits the FNN part of a hybrid model on datasets.

    ``fit`` and ``predict`` take a :class:`~hybridlab.core.Dataset` or a list
    of them instead of a feature matrix, because the features come from
    running the physical model under each dataset's current.
    """

    def __init__(self, physical_model="ndc", framework="hybrid-1", features=None, aging_aware=False,
                 physical_params=None, dt=1.0, stride=1, hidden_layer_sizes=(32, 32), learning_rate=1e-3,
                 batch_size=64, epochs=2000, patience=50, validation_fraction=0.1,
                 standardize_targets=True, weight_decay=0.0, random_state=0):
        self.physical_model = physical_model
        self.framework = framework
        self.features = features
        self.aging_aware = aging_aware
        self.physical_params = physical_params
        self.dt = dt
        self.stride = stride
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.standardize_targets = standardize_targets
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _spec(self) -> FeatureSpec:
        return FeatureSpec(self.physical_model, self.framework, self.features, self.aging_aware)

    def _params(self):
        if self.physical_params is None:
            return physics.default_params(self.physical_model)
        return self.physical_params

    def _fnn(self) -> FNNRegressor:
        return FNNRegressor(hidden_layer_sizes=tuple(self.hidden_layer_sizes),
                            learning_rate=self.learning_rate, batch_size=self.batch_size,
                            epochs=self.epochs, patience=self.patience,
                            validation_fraction=self.validation_fraction,
                            standardize_targets=self.standardize_targets,
                            weight_decay=self.weight_decay, random_state=self.random_state)

    def training_pairs(self, datasets, traces=None):
        spec, params = self._spec(), self._params()
        datasets = _as_list(datasets)
        traces = traces or [simulate_for(params, ds, self.dt) for ds in datasets]
        Xs, ys = [], []
        for ds, tr in zip(datasets, traces):
            X, y = build_training_pairs(spec, tr, ds)
            Xs.append(X[::self.stride])
            ys.append(y[::self.stride])
        return np.vstack(Xs), np.concatenate(ys)

    def fit(self, datasets, y=None, traces=None):
        spec, params = self._spec(), self._params()
        X, targets = self.training_pairs(datasets, traces)
        reg = self._fnn().fit(X, targets, feature_names=list(spec.features))
        hist = reg.history_
        meta = {"seed": int(self.random_state or 0), "config": reg._config().to_dict(),
                "hidden_layer_sizes": list(self.hidden_layer_sizes),
                "standardize_targets": bool(self.standardize_targets), "stride": int(self.stride),
                "n_samples": int(X.shape[0]), "best_epoch": hist.best_epoch,
                "epochs_run": len(hist.train_loss),
                "final_train_loss": hist.train_loss[-1] if hist.train_loss else None,
                "final_val_loss": hist.val_loss[-1] if hist.val_loss else None,
                "best_loss": hist.best_loss if hist.train_loss else None}
        self.model_ = HybridModel(spec, params, reg.model_, meta)
        self.history_ = hist
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, datasets):
        model = self.model_
        out = []
        for ds in _as_list(datasets):
            tr = simulate_for(model.physical_params, ds, self.dt)
            out.append(predict_trace(model, tr, _dataset_temperature_k(model.spec, ds),
                                     _dataset_soh(model.spec, ds), common_prefix(tr, ds)))
        return out if isinstance(datasets, (list, tuple)) else out[0]

    def evaluate(self, datasets) -> List[EvalReport]:
        return [evaluate(self.model_, ds, self.dt) for ds in _as_list(datasets)]


def _as_list(datasets):
    return list(datasets) if isinstance(datasets, (list, tuple)) else [datasets]

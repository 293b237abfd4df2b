"""Run configuration: one JSON document driving generate/train/eval.

Sections::

    model       {"type": "spmt" | "ndc", "params": {overrides}}
    truth       TruthSpec fields; {"defaults": true} starts from the default truth
    training    {"framework", "features", "aging_aware", "stride", "fnn": {...}}
    experiment  {"dt", "seed", "initial_soc", "initial_temperature_c", "soh_grid",
                 "profiles": [...]}
    output      {"dir", "plots"}

A profile entry is either ``{"kind": "constant", "c_rate": 1.0}`` or
``{"kind": "cycle", "cycle": "udds_like" | path, "c_rate": peak, "repeat": n}``
plus ``name``, ``role`` (train | test) and optional ``duration`` and
``initial_soc``. Cycle paths are relative to the config file; the output
directory is relative to the working directory.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from . import physics
from .core import CurrentProfile
from .datagen import BUNDLED_CYCLES, TruthSpec, bundled_cycle, load_drive_cycle
from .exceptions import ConfigError, DataError
from .hybrid import FeatureSpec, HybridRegressor

ROLES = ("train", "test")
FNN_KEYS = ("hidden_layer_sizes", "learning_rate", "batch_size", "epochs", "patience",
            "validation_fraction", "standardize_targets", "weight_decay")
_SECTIONS = ("model", "truth", "training", "experiment", "output")


@dataclass(frozen=True)
class ProfileSpec:
    name: str
    kind: str
    c_rate: float
    role: str = "train"
    duration: Optional[float] = None
    cycle: Optional[str] = None
    repeat: int = 1
    initial_soc: Optional[float] = None

    def __post_init__(self):
        if not self.name or not re.fullmatch(r"[A-Za-z0-9_.+-]+", self.name):
            raise ConfigError(f"profile name {self.name!r} must be nonempty and filename-safe")
        if self.kind not in ("constant", "cycle"):
            raise ConfigError(f"profile {self.name}: kind must be 'constant' or 'cycle'")
        if self.role not in ROLES:
            raise ConfigError(f"profile {self.name}: role must be one of {ROLES}")
        if not self.c_rate > 0:
            raise ConfigError(f"profile {self.name}: c_rate must be positive")
        if self.kind == "cycle" and not self.cycle:
            raise ConfigError(f"profile {self.name}: cycle profiles need 'cycle'")
        if self.repeat < 1:
            raise ConfigError(f"profile {self.name}: repeat must be >= 1")
        if self.duration is not None and not self.duration > 0:
            raise ConfigError(f"profile {self.name}: duration must be positive")
        if self.initial_soc is not None and not 0.0 <= self.initial_soc <= 1.0:
            raise ConfigError(f"profile {self.name}: initial_soc must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad profile entry {d!r}: {exc}") from exc

    def build(self, capacity_ah: float, base_dir: Path) -> CurrentProfile:
        """Concrete current profile; constant runs default to 1.2x their nominal duration."""
        amps = self.c_rate * capacity_ah
        if self.kind == "constant":
            duration = self.duration if self.duration is not None else 1.2 * 3600.0 / self.c_rate
            return CurrentProfile.constant(amps, duration, self.name)
        if self.cycle in BUNDLED_CYCLES:
            cycle = bundled_cycle(self.cycle)
        else:
            cycle = load_drive_cycle(_resolve(base_dir, self.cycle), self.cycle)
        prof = cycle.profile(amps, self.repeat, self.name)
        if self.duration is not None:
            keep = prof.times <= self.duration
            prof = CurrentProfile(prof.times[keep], prof.currents[keep], self.name)
        return prof


def _resolve(base_dir: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base_dir / p


@dataclass
class RunConfig:
    model_type: str
    model_params: dict = field(default_factory=dict)
    truth: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        if self.model_type not in physics.MODEL_KINDS:
            raise ConfigError(f"model.type must be one of {physics.MODEL_KINDS}")
        exp = self.experiment
        if not float(exp.get("dt", 1.0)) > 0:
            raise ConfigError("experiment.dt must be positive")
        if not 0.0 <= float(exp.get("initial_soc", 1.0)) <= 1.0:
            raise ConfigError("experiment.initial_soc must lie in [0, 1]")
        unknown = set(self.training.get("fnn", {})) - set(FNN_KEYS)
        if unknown:
            raise ConfigError(f"unknown training.fnn keys {sorted(unknown)}")
        self.profiles()
        self.truth_spec()
        self.feature_spec()
        for soh in self.soh_grid:
            self.truth_spec().aging.check(soh)

    # -- accessors -------------------------------------------------------
    @property
    def dt(self) -> float:
        return float(self.experiment.get("dt", 1.0))

    @property
    def seed(self) -> int:
        return int(self.experiment.get("seed", 0))

    @property
    def initial_soc(self) -> float:
        return float(self.experiment.get("initial_soc", 1.0))

    @property
    def initial_temperature_c(self) -> float:
        return float(self.experiment.get("initial_temperature_c", 25.0))

    @property
    def soh_grid(self) -> List[float]:
        return [float(s) for s in self.experiment.get("soh_grid", [1.0])]

    @property
    def output_dir(self) -> Path:
        # relative to the working directory, unlike cycle paths
        return Path(self.output.get("dir", "out"))

    @property
    def plots(self) -> bool:
        return bool(self.output.get("plots", True))

    def physical_params(self):
        return physics.params_from_dict(self.model_type, self.model_params)

    def truth_spec(self) -> TruthSpec:
        return TruthSpec.from_dict(self.truth or {"defaults": True}, default_base=self.model_type)

    def feature_spec(self) -> FeatureSpec:
        t = self.training
        return FeatureSpec(self.model_type, t.get("framework", "hybrid-1"), t.get("features"),
                           bool(t.get("aging_aware", False)))

    def profiles(self) -> List[ProfileSpec]:
        entries = self.experiment.get("profiles") or []
        specs = [ProfileSpec.from_dict(e) for e in entries]
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ConfigError("profile names must be unique")
        for s in specs:
            if s.kind == "cycle" and s.cycle not in BUNDLED_CYCLES and not _resolve(self.base_dir, s.cycle).is_file():
                raise ConfigError(f"profile {s.name}: cycle file {s.cycle!r} not found")
        return specs

    def regressor(self, seed: Optional[int] = None) -> HybridRegressor:
        spec = self.feature_spec()
        fnn = dict(self.training.get("fnn", {}))
        if "hidden_layer_sizes" in fnn:
            fnn["hidden_layer_sizes"] = tuple(fnn["hidden_layer_sizes"])
        return HybridRegressor(physical_model=spec.physical_model, framework=spec.framework,
                               features=list(spec.features), aging_aware=spec.aging_aware,
                               physical_params=self.physical_params(), dt=self.dt,
                               stride=int(self.training.get("stride", 1)),
                               random_state=self.seed if seed is None else seed, **fnn)

    def with_overrides(self, seed: Optional[int] = None, dt: Optional[float] = None) -> "RunConfig":
        exp = dict(self.experiment)
        if seed is not None:
            exp["seed"] = int(seed)
        if dt is not None:
            exp["dt"] = float(dt)
        return RunConfig(self.model_type, self.model_params, self.truth, self.training, exp,
                         self.output, self.base_dir)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        model = d.get("model") or {}
        if "type" not in model:
            raise ConfigError("config needs model.type")
        return cls(model["type"], model.get("params") or {}, d.get("truth") or {}, d.get("training") or {},
                   d.get("experiment") or {}, d.get("output") or {},
                   Path(base_dir) if base_dir is not None else Path.cwd())


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    try:
        return RunConfig.from_dict(d, base_dir=path.parent)
    except DataError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

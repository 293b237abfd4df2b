"""Synthetic ground truth, drive cycles and aging series.

The truth model is one of the physical models with perturbed parameters and
extra effects the plain model lacks:

* SPMT truth: parameter multipliers (slower diffusion, thicker film by
  default) and an added SoC-dependent ohmic resistance.
* NDC truth: parameter multipliers, a lumped thermal ODE driven by the
  polarization heat ``I (h(V_s) - V)``, and an Arrhenius-type temperature
  dependence of R0.

Both add zero-mean Gaussian voltage noise. An aging map turns SoH into a
capacity scale and a resistance growth factor.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import physics
from .core import (KELVIN, CurrentProfile, Dataset, grid_currents, read_profile_csv, scale_profile,
                   step_grid)
from .exceptions import ConfigError, DataError, DegenerateProfileError, NumericalError
from .ndc import NdcParams, NdcState, h_of_vs, ndc_voltage, simulate_ndc, step_ndc
from .spmt import GAS_CONSTANT, SpmtParams, simulate_spmt

BUNDLED_CYCLES = ("us06_like", "udds_like", "la92_like", "sc04_like")
_ELECTRODE_ALIASES = {"D_s": "D_s_ref", "k": "k_ref"}


# --------------------------------------------------------------------------- drive cycles

@dataclass(frozen=True)
class DriveCycle:
    """Current shape normalized to unit peak magnitude."""

    name: str
    times: np.ndarray
    shape: np.ndarray
    source: str = ""

    def __post_init__(self):
        peak = float(np.max(np.abs(self.shape))) if len(self.shape) else 0.0
        if peak == 0.0:
            raise DegenerateProfileError(f"drive cycle {self.name!r} has no nonzero current")
        if abs(peak - 1.0) > 1e-12:
            raise ValueError("DriveCycle shape must have unit peak magnitude; use from_profile")

    @classmethod
    def from_profile(cls, profile: CurrentProfile, name: str, source: str = "") -> "DriveCycle":
        unit = scale_profile(profile, 1.0)
        return cls(name, unit.times, unit.currents, source)

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def profile(self, peak_current: float, repeat: int = 1, name: Optional[str] = None) -> CurrentProfile:
        """The cycle scaled to ``peak_current`` and played ``repeat`` times back to back.

        Each repetition starts one sample period after the previous one ends.
        """
        if repeat < 1:
            raise ValueError("repeat must be >= 1")
        base = CurrentProfile(self.times, self.shape, self.name)
        period = self.duration + (float(self.times[-1] - self.times[-2]) if len(self.times) > 1 else 1.0)
        times = np.concatenate([self.times + r * period for r in range(repeat)])
        currents = np.tile(self.shape, repeat)
        return scale_profile(CurrentProfile(times, currents, name or base.name), peak_current)


def load_drive_cycle(path, name: Optional[str] = None) -> DriveCycle:
    """Read a ``time_s,current_a`` CSV and normalize it to unit peak."""
    profile, _ = read_profile_csv(path, name=name)
    return DriveCycle.from_profile(profile, name or Path(path).stem, str(path))


def bundled_cycle_path(name: str):
    if name not in BUNDLED_CYCLES:
        raise ConfigError(f"unknown bundled cycle {name!r}; available: {BUNDLED_CYCLES}")
    return resources.files("hybridlab.data").joinpath("cycles", f"{name}.csv")


def bundled_cycle(name: str) -> DriveCycle:
    with resources.as_file(bundled_cycle_path(name)) as path:
        cycle = load_drive_cycle(path, name)
    return dataclasses.replace(cycle, source=f"bundled:{name}")


# Micro-trip statistics per style: (n_trips, peak speed range m/s, accel range m/s^2,
# cruise range s, idle range s). Loosely modeled on the character of the EPA cycles.
_CYCLE_STYLES = {
    "udds_like": (16, (8.0, 25.0), (0.6, 1.4), (10, 80), (5, 40)),
    "us06_like": (6, (20.0, 36.0), (1.5, 3.5), (20, 120), (2, 15)),
    "la92_like": (12, (10.0, 30.0), (1.0, 2.5), (15, 90), (5, 30)),
    "sc04_like": (8, (10.0, 24.0), (1.0, 2.2), (20, 60), (5, 25)),
}


def synthesize_cycle(style: str, seed: int = 0) -> DriveCycle:
    """Cycle-like current shape built from random micro-trips.

    Speed ramps up, cruises with small fluctuations, brakes and idles; current
    follows the tractive power ``v (m a + drag)`` with braking recovered at 60%.
    This is how the bundled ``*_like`` cycles were produced.
    """
    if style not in _CYCLE_STYLES:
        raise ConfigError(f"unknown cycle style {style!r}")
    n_trips, vmax, acc, cruise, idle = _CYCLE_STYLES[style]
    rng = np.random.default_rng(seed)
    speed = [0.0]
    for _ in range(n_trips):
        top = rng.uniform(*vmax)
        a_up, a_down = rng.uniform(*acc), rng.uniform(*acc)
        speed.extend(np.minimum(top, np.arange(1, math.ceil(top / a_up) + 1) * a_up))
        wiggle = np.cumsum(rng.normal(0.0, 0.3, int(rng.integers(*cruise))))
        speed.extend(np.clip(top + wiggle, 0.5 * top, 1.2 * top))
        last = speed[-1]
        speed.extend(np.maximum(0.0, last - np.arange(1, math.ceil(last / a_down) + 1) * a_down))
        speed.extend([0.0] * int(rng.integers(*idle)))
    v = np.asarray(speed)
    a = np.diff(v, append=0.0)
    power = v * (1500.0 * a + 0.4 * v * v + 150.0)
    power = np.where(power < 0.0, 0.6 * power, power)
    times = np.arange(v.size, dtype=float)
    return DriveCycle.from_profile(CurrentProfile(times, power, style), style, f"synthetic:{style}:{seed}")


# --------------------------------------------------------------------------- truth spec

@dataclass(frozen=True)
class AgingMap:
    """SoH -> (capacity scale = SoH, resistance factor = 1 + growth (1 - SoH))."""

    resistance_growth: float = 2.5
    soh_min: float = 0.81

    def __post_init__(self):
        if self.resistance_growth < 0:
            raise ConfigError("resistance_growth must be >= 0 for a monotone aging map")
        if not 0.0 < self.soh_min <= 1.0:
            raise ConfigError("soh_min must lie in (0, 1]")

    def check(self, soh: float) -> None:
        if not self.soh_min - 1e-12 <= soh <= 1.0:
            raise ConfigError(f"SoH {soh} outside the aging map domain [{self.soh_min}, 1]")

    def capacity_scale(self, soh: float) -> float:
        self.check(soh)
        return float(soh)

    def resistance_factor(self, soh: float) -> float:
        self.check(soh)
        return 1.0 + self.resistance_growth * (1.0 - soh)


@dataclass(frozen=True)
class NdcThermal:
    """Lumped thermal attachment for the NDC truth.

    ``C dT/dt = I (h(V_s) - V) - h_conv (T - T_amb)``, and R0 is scaled by
    ``exp(E / R_gas (1/T - 1/T_ref))`` so that it drops as the cell warms.
    """

    heat_capacity: float = 45.0          # J/K
    h_conv: float = 0.25                 # W/K
    r0_activation_energy: float = 20000.0  # J/mol
    T_ref_c: float = 25.0
    T_amb_c: Optional[float] = None      # None: initial temperature

    def __post_init__(self):
        if not (self.heat_capacity > 0 and self.h_conv > 0):
            raise ConfigError("thermal heat_capacity and h_conv must be positive")

    def r0_scale(self, T_k: float) -> float:
        if self.r0_activation_energy == 0.0:
            return 1.0
        return math.exp(self.r0_activation_energy / GAS_CONSTANT * (1.0 / T_k - 1.0 / (self.T_ref_c + KELVIN)))


@dataclass(frozen=True)
class TruthSpec:
    base: str
    multipliers: Dict[str, float] = field(default_factory=dict)
    extra_resistance: Optional[Tuple[float, ...]] = None   # SPMT only: R0(SoC)-shaped coefficients, ohms
    thermal: Optional[NdcThermal] = None                   # NDC only
    noise_std: float = 0.001
    aging: AgingMap = field(default_factory=AgingMap)

    def __post_init__(self):
        if self.base not in physics.MODEL_KINDS:
            raise ConfigError(f"truth base must be one of {physics.MODEL_KINDS}")
        if not self.noise_std >= 0:
            raise ConfigError("noise_std must be >= 0")
        object.__setattr__(self, "multipliers", {k: float(v) for k, v in dict(self.multipliers).items()})
        for key, value in self.multipliers.items():
            if not value > 0:
                raise ConfigError(f"multiplier {key!r} must be positive")
        if self.extra_resistance is not None:
            if self.base != "spmt":
                raise ConfigError("extra_resistance applies to SPMT truth only")
            coeffs = tuple(float(g) for g in self.extra_resistance)
            if len(coeffs) != 5:
                raise ConfigError("extra_resistance needs 5 coefficients")
            object.__setattr__(self, "extra_resistance", coeffs)
        if self.thermal is not None and self.base != "ndc":
            raise ConfigError("thermal attachment applies to NDC truth only")

    @classmethod
    def default(cls, base: str) -> "TruthSpec":
        if base == "spmt":
            return cls("spmt", {"D_s": 0.7, "R_f": 1.5}, extra_resistance=(0.004, 0.02, 8.0, 0.002, 10.0))
        return cls("ndc", {"R_b": 1.25, "C_s": 0.85, "R_1": 1.3, "C_1": 0.8}, thermal=NdcThermal())

    @classmethod
    def identity(cls, base: str) -> "TruthSpec":
        """No perturbation and no noise: the truth equals the plain model."""
        return cls(base, noise_std=0.0)

    def to_dict(self) -> dict:
        return {"base": self.base, "multipliers": dict(self.multipliers),
                "extra_resistance": None if self.extra_resistance is None else list(self.extra_resistance),
                "thermal": None if self.thermal is None else dataclasses.asdict(self.thermal),
                "noise_std": self.noise_std, "aging": dataclasses.asdict(self.aging)}

    @classmethod
    def from_dict(cls, d: dict, default_base: Optional[str] = None) -> "TruthSpec":
        d = dict(d or {})
        base = d.pop("base", default_base)
        if base is None:
            raise ConfigError("truth section needs 'base'")
        if d.pop("defaults", False):
            merged = cls.default(base).to_dict()
            merged.pop("base")
            merged.update(d)
            d = merged
        known = {"multipliers", "extra_resistance", "thermal", "noise_std", "aging"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown truth fields {sorted(unknown)}")
        try:
            thermal = NdcThermal(**d["thermal"]) if d.get("thermal") else None
            aging = AgingMap(**d["aging"]) if d.get("aging") else AgingMap()
        except TypeError as exc:
            raise ConfigError(f"bad truth section: {exc}") from exc
        return cls(base, d.get("multipliers") or {}, d.get("extra_resistance"), thermal,
                   float(d.get("noise_std", 0.001)), aging)


# --------------------------------------------------------------------------- parameter perturbation

def apply_multipliers(params, multipliers: Dict[str, float]):
    """Scale named parameters.

    SPMT keys: a cell-level field (``h_cell``), an electrode field applied to
    both electrodes (``R_f``, ``D_s``, ``k``), or one electrode (``pos.R_f``).
    NDC keys: circuit fields, or ``R0`` to scale the whole R0(SoC) curve.
    """
    if not multipliers:
        return params
    if isinstance(params, NdcParams):
        changes = {}
        for key, m in multipliers.items():
            if key == "R0":
                g = params.r0_coeffs
                changes["r0_coeffs"] = (g[0] * m, g[1] * m, g[2], g[3] * m, g[4])
            elif key in ("C_b", "C_s", "C_1", "R_b", "R_s", "R_1"):
                changes[key] = getattr(params, key) * m
            else:
                raise ConfigError(f"unknown NDC multiplier {key!r}")
        return params.with_updates(**changes)

    electrode_fields = {f.name for f in dataclasses.fields(params.pos)} - {"ocp", "dudt"}
    cell_fields = {"A", "c_e0", "rho_cp", "cell_volume", "h_cell"}
    pos, neg, cell = {}, {}, {}
    for key, m in multipliers.items():
        where, _, name = key.rpartition(".")
        name = _ELECTRODE_ALIASES.get(name, name)
        if not where and name in cell_fields:
            cell[name] = getattr(params, name) * m
        elif name in electrode_fields and where in ("", "pos", "neg"):
            for tag, target in (("pos", pos), ("neg", neg)):
                if where in ("", tag):
                    target[name] = getattr(getattr(params, tag), name) * m
        else:
            raise ConfigError(f"unknown SPMT multiplier {key!r}")
    return params.with_updates(pos=dataclasses.replace(params.pos, **pos),
                               neg=dataclasses.replace(params.neg, **neg), **cell)


def aged_params(params, aging: AgingMap, soh: float):
    """Apply capacity fade and resistance growth for ``soh``."""
    if soh == 1.0:
        aging.check(soh)
        return params
    cap, res = aging.capacity_scale(soh), aging.resistance_factor(soh)
    if isinstance(params, NdcParams):
        return apply_multipliers(params, {"C_b": cap, "C_s": cap, "R0": res, "R_b": res, "R_1": res})
    # shrinking electrode thickness removes active material; it also raises the film drop
    return apply_multipliers(params, {"L": cap, "R_f": res})


def truth_params(spec: TruthSpec, params, soh: float = 1.0):
    if physics.model_kind(params) != spec.base:
        raise ConfigError(f"truth base {spec.base!r} does not match {physics.model_kind(params)!r} parameters")
    return aged_params(apply_multipliers(params, spec.multipliers), spec.aging, soh)


# --------------------------------------------------------------------------- truth simulation

def _r0_shape(g, soc):
    return g[0] + g[1] * math.exp(-g[2] * soc) + g[3] * math.exp(-g[4] * (1.0 - soc))


def _simulate_ndc_thermal(params: NdcParams, thermal: NdcThermal, initial_soc, T0_c, profile, dt):
    """NDC run with lumped heating and temperature-dependent R0; returns (time, I, V, T_c)."""
    dt = float(dt)
    grid = step_grid(profile, dt)
    currents = grid_currents(profile, grid)
    n = grid.size
    V, T = np.empty(n), np.empty(n)
    state = NdcState(initial_soc, initial_soc, 0.0)
    T_amb = (T0_c if thermal.T_amb_c is None else thermal.T_amb_c) + KELVIN
    Tk = T0_c + KELVIN
    decay = math.exp(-thermal.h_conv * dt / thermal.heat_capacity)
    count = n
    for k in range(n):
        I = float(currents[k])
        v = ndc_voltage(params, state, I, r0_scale=thermal.r0_scale(Tk))
        if not math.isfinite(v):
            raise NumericalError(f"non-finite truth voltage at t={grid[k]:g} s")
        if not params.v_min <= v <= params.v_max:
            count = k
            break
        V[k], T[k] = v, Tk - KELVIN
        if k + 1 < n:
            # heat held constant over the step: exact solution of the linear ODE
            q = I * (h_of_vs(params, state.V_s) - v)
            T_inf = T_amb + q / thermal.h_conv
            Tk = T_inf + (Tk - T_inf) * decay
            state = step_ndc(params, state, I, dt)
    return grid[:count], currents[:count], V[:count], T[:count]


def generate_truth(spec: TruthSpec, params, profile: CurrentProfile, initial_soc: float = 1.0,
                   initial_temperature_c: float = 25.0, dt: float = 1.0, seed=0, soh: float = 1.0,
                   label: str = "") -> Dataset:
    """Synthetic measurement of ``profile`` on the step grid, ending at voltage cutoff."""
    p = truth_params(spec, params, soh)
    if spec.base == "spmt":
        extra = None
        if spec.extra_resistance is not None:
            g = spec.extra_resistance
            scale = spec.aging.resistance_factor(soh)
            extra = lambda soc, T: scale * _r0_shape(g, min(max(soc, 0.0), 1.0))  # noqa: E731
        tr = simulate_spmt(p, initial_soc, initial_temperature_c + KELVIN, profile, dt=dt,
                           enforce_window=True, on_saturation="stop", extra_resistance=extra)
        t, I, V, T = tr.time, tr.current, tr.voltage, tr.features["temperature"] - KELVIN
    elif spec.thermal is None:
        tr = simulate_ndc(p, initial_soc, profile, dt=dt, enforce_window=True)
        t, I, V = tr.time, tr.current, tr.voltage
        T = np.full(t.size, float(initial_temperature_c))
    else:
        t, I, V, T = _simulate_ndc_thermal(p, spec.thermal, initial_soc, initial_temperature_c, profile, dt)
    if t.size == 0:
        raise DataError(f"truth for {label or profile.name!r} is outside the voltage window at t=0")
    if spec.noise_std > 0:
        V = V + np.random.default_rng(seed).normal(0.0, spec.noise_std, V.size)
    return Dataset(t.copy(), I.copy(), V.copy(), T.copy(), np.full(t.size, float(soh)),
                   cell_capacity_ah=physics.nominal_capacity_ah(params),
                   label=label or profile.name, initial_soc=initial_soc)


def generate_aging_series(spec: TruthSpec, params, soh_grid: Sequence[float],
                          profiles: Sequence[CurrentProfile], initial_soc: float = 1.0,
                          initial_temperature_c: float = 25.0, dt: float = 1.0, seed: int = 0) -> List[Dataset]:
    """One dataset per (SoH, profile), SoH-major.

    Profile ``j`` uses noise seed ``seed + j`` at every SoH, so noise is common
    across the series and differences come from aging alone.
    """
    for soh in soh_grid:
        spec.aging.check(soh)
    out = []
    for soh in soh_grid:
        for j, prof in enumerate(profiles):
            label = f"{prof.name or f'profile{j}'}@soh{soh:g}"
            out.append(generate_truth(spec, params, prof, initial_soc, initial_temperature_c, dt,
                                      seed + j, soh, label))
    return out

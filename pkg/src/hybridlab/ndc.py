"""Nonlinear double-capacitor (NDC) equivalent circuit model.

The bulk/surface capacitor pair (C_b, C_s) linked through R_b + R_s mimics
solid-phase diffusion, an R_1-C_1 pair carries interfacial transients, and
the terminal voltage passes the surface-capacitor voltage through a rational
OCV map h(V_s) minus an SoC-dependent ohmic drop.

Public functions take discharge-positive current. The circuit equations are
written for charge-positive current, so the sign is flipped at the point
where current enters the state update.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .core import CurrentProfile, SimTrace, grid_currents, step_grid
from .exceptions import ConfigError, NumericalError, SingularityError

DEN_EPS = 1e-12


@dataclass(frozen=True)
class NdcParams:
    C_b: float
    C_s: float
    C_1: float
    R_b: float
    R_s: float
    R_1: float
    h_coeffs: Tuple[float, float, float, float, float, float]
    r0_coeffs: Tuple[float, float, float, float, float]
    v_min: float = 3.0
    v_max: float = 4.4

    def __post_init__(self):
        object.__setattr__(self, "h_coeffs", tuple(float(a) for a in self.h_coeffs))
        object.__setattr__(self, "r0_coeffs", tuple(float(g) for g in self.r0_coeffs))
        if len(self.h_coeffs) != 6:
            raise ConfigError("h_coeffs needs 6 values")
        if len(self.r0_coeffs) != 5:
            raise ConfigError("r0_coeffs needs 5 values")
        if not self.C_b > self.C_s > 0:
            raise ConfigError("require C_b > C_s > 0")
        if not self.R_b > self.R_s >= 0:
            raise ConfigError("require R_b > R_s >= 0")
        if not (self.R_1 > 0 and self.C_1 > 0):
            raise ConfigError("R_1 and C_1 must be positive")
        if not self.v_min < self.v_max:
            raise ConfigError("v_min must be below v_max")
        if _denominator_vanishes_on_unit_interval(self.h_coeffs):
            raise ConfigError("h(V_s) denominator vanishes on [0, 1]")
        soc = np.linspace(0.0, 1.0, 1001)
        if np.any(_r0(self.r0_coeffs, soc) <= 0):
            raise ConfigError("R0(SoC) must be positive on [0, 1]")

    @property
    def capacity_ah(self) -> float:
        # state voltages span 0..1 V between empty and full
        return (self.C_b + self.C_s) / 3600.0

    def with_updates(self, **changes) -> "NdcParams":
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["h_coeffs"] = list(self.h_coeffs)
        d["r0_coeffs"] = list(self.r0_coeffs)
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad NDC parameters: {exc}") from exc


@dataclass(frozen=True)
class NdcState:
    V_b: float
    V_s: float
    V_1: float = 0.0

    def as_array(self):
        return np.array([self.V_b, self.V_s, self.V_1])


def _denominator_vanishes_on_unit_interval(a) -> bool:
    roots = np.roots([1.0, a[3], a[4], a[5]])
    real = roots[np.abs(roots.imag) < 1e-9].real
    if np.any((real >= 0.0) & (real <= 1.0)):
        return True
    v = np.linspace(0.0, 1.0, 1001)
    return bool(np.any(np.abs(v ** 3 + a[3] * v ** 2 + a[4] * v + a[5]) < DEN_EPS))


def _r0(g, soc):
    return g[0] + g[1] * np.exp(-g[2] * soc) + g[3] * np.exp(-g[4] * (1.0 - soc))


def state_matrices(p: NdcParams):
    """Continuous-time (A, B) for charge-positive current."""
    rsum = p.R_b + p.R_s
    A = np.array([
        [-1.0 / (p.C_b * rsum), 1.0 / (p.C_b * rsum), 0.0],
        [1.0 / (p.C_s * rsum), -1.0 / (p.C_s * rsum), 0.0],
        [0.0, 0.0, -1.0 / (p.R_1 * p.C_1)],
    ])
    B = np.array([p.R_s / (p.C_b * rsum), p.R_b / (p.C_s * rsum), -1.0 / p.C_1])
    return A, B


@lru_cache(maxsize=256)
def discretize(p: NdcParams, dt: float):
    """Exact zero-order-hold discretization ``x+ = Ad x + Bd u`` (u charge-positive).

    The diffusion block is solved in (total charge, V_b - V_s) coordinates,
    where it decouples into an integrator and a first-order lag.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    Cb, Cs = p.C_b, p.C_s
    Ct = Cb + Cs
    rsum = p.R_b + p.R_s
    lam = (1.0 / Cb + 1.0 / Cs) / rsum
    beta = (p.R_s / Cb - p.R_b / Cs) / rsum
    e = math.exp(-lam * dt)
    g = -math.expm1(-lam * dt) / lam        # (1 - e) / lam
    # q = Cb Vb + Cs Vs ; d = Vb - Vs ; Vb = (q + Cs d)/Ct ; Vs = (q - Cb d)/Ct
    T = np.array([[Cb, Cs], [1.0, -1.0]])
    Tinv = np.array([[1.0, Cs], [1.0, -Cb]]) / Ct
    Ad2 = Tinv @ np.diag([1.0, e]) @ T
    Bd2 = Tinv @ np.array([dt, beta * g])
    tau1 = p.R_1 * p.C_1
    e1 = math.exp(-dt / tau1)
    Ad = np.zeros((3, 3))
    Ad[:2, :2] = Ad2
    Ad[2, 2] = e1
    Bd = np.array([Bd2[0], Bd2[1], -p.R_1 * (-math.expm1(-dt / tau1))])
    Ad.setflags(write=False)
    Bd.setflags(write=False)
    return Ad, Bd


def step_ndc(params: NdcParams, state: NdcState, current: float, dt: float) -> NdcState:
    """Advance one step of length ``dt`` under discharge-positive ``current``."""
    Ad, Bd = discretize(params, float(dt))
    u = -current
    x = (state.V_b, state.V_s, state.V_1)
    return NdcState(
        Ad[0, 0] * x[0] + Ad[0, 1] * x[1] + Bd[0] * u,
        Ad[1, 0] * x[0] + Ad[1, 1] * x[1] + Bd[1] * u,
        Ad[2, 2] * x[2] + Bd[2] * u,
    )


def h_of_vs(params: NdcParams, V_s: float) -> float:
    a = params.h_coeffs
    den = V_s ** 3 + a[3] * V_s ** 2 + a[4] * V_s + a[5]
    if abs(den) < DEN_EPS:
        raise SingularityError(f"h(V_s) denominator vanishes at V_s={V_s!r}")
    return (a[0] * V_s ** 2 + a[1] * V_s + a[2]) / den


def ndc_soc(params: NdcParams, state: NdcState) -> float:
    return (params.C_b * state.V_b + params.C_s * state.V_s) / (params.C_b + params.C_s)


def r0_of_soc(params: NdcParams, soc: float) -> float:
    g = params.r0_coeffs
    return g[0] + g[1] * math.exp(-g[2] * soc) + g[3] * math.exp(-g[4] * (1.0 - soc))


def ndc_voltage(params: NdcParams, state: NdcState, current: float, r0_scale: float = 1.0) -> float:
    r0 = r0_of_soc(params, ndc_soc(params, state)) * r0_scale
    return h_of_vs(params, state.V_s) - state.V_1 - r0 * current


def simulate_ndc(params: NdcParams, initial_soc: float, profile: CurrentProfile, dt: float = 1.0,
                 enforce_window: bool = True, initial_state: Optional[NdcState] = None) -> SimTrace:
    """Open-loop NDC run on the grid ``k*dt``; features are V_b, V_s and V_1."""
    if initial_state is None:
        if not 0.0 <= initial_soc <= 1.0:
            raise ValueError("initial_soc must lie in [0, 1]")
        initial_state = NdcState(initial_soc, initial_soc, 0.0)
    dt = float(dt)
    grid = step_grid(profile, dt)
    currents = grid_currents(profile, grid)
    n = grid.size
    V = np.empty(n)
    X = np.empty((n, 3))
    state = initial_state
    cutoff, cutoff_time, reason, count = False, None, "", n
    for k in range(n):
        I = float(currents[k])
        v = ndc_voltage(params, state, I)
        if not math.isfinite(v):
            raise NumericalError(f"non-finite NDC voltage at t={grid[k]:g} s")
        if enforce_window and not (params.v_min <= v <= params.v_max):
            cutoff, cutoff_time, reason, count = True, float(grid[k]), "voltage window", k
            break
        V[k] = v
        X[k] = (state.V_b, state.V_s, state.V_1)
        if k + 1 < n:
            state = step_ndc(params, state, I, dt)
    return SimTrace(grid[:count], currents[:count], V[:count],
                    {"V_b": X[:count, 0], "V_s": X[:count, 1], "V_1": X[:count, 2]},
                    cutoff=cutoff, cutoff_time=cutoff_time, cutoff_reason=reason)

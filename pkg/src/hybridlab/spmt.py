"""Single particle model with lumped thermal dynamics (SPMT).

Each electrode is one spherical particle. Solid diffusion is discretized with
equal-thickness finite-volume shells and stepped with implicit Euler, so the
total lithium inventory changes by exactly the surface flux every step.
Butler-Volmer kinetics use the closed-form inverse for symmetric transfer
coefficients, and diffusivities and rate constants follow Arrhenius laws of
the lumped cell temperature.

Current is positive on discharge. Temperatures are in kelvin inside this
module.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve_banded

from .core import CurrentProfile, SimTrace, grid_currents, step_grid
from .exceptions import ConfigError, NumericalError, SaturationError

FARADAY = 96485.33212
GAS_CONSTANT = 8.314462618

POS = "pos"
NEG = "neg"
_ELECTRODE_ALIASES = {"+": POS, "pos": POS, "positive": POS, "-": NEG, "neg": NEG, "negative": NEG}


def _electrode(name):
    try:
        return _ELECTRODE_ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown electrode {name!r}; use 'pos' or 'neg'") from None


class Table:
    """Monotone-cubic (PCHIP) interpolant of a tabulated function on [0, 1]."""

    def __init__(self, points: Sequence[Sequence[float]]):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ConfigError("table must be a list of (x, y) pairs with at least 2 rows")
        if not np.all(np.isfinite(pts)):
            raise ConfigError("table values must be finite")
        x, y = pts[:, 0], pts[:, 1]
        if np.any(np.diff(x) <= 0):
            raise ConfigError("table abscissae must be strictly increasing")
        if x[0] > 0.0 or x[-1] < 1.0:
            raise ConfigError("table must cover stoichiometry range [0, 1]")
        self.points = pts
        self._interp = PchipInterpolator(x, y, extrapolate=False)
        self._lo, self._hi = float(x[0]), float(x[-1])

    def __call__(self, x):
        # clip: surface stoichiometry can overshoot [0, 1] by rounding near saturation
        return self._interp(np.clip(x, self._lo, self._hi))

    def scalar(self, x: float) -> float:
        return float(self._interp(min(max(x, self._lo), self._hi)))

    def to_list(self):
        return self.points.tolist()


@dataclass(frozen=True)
class ElectrodeParams:
    D_s_ref: float      # m^2/s at T_ref
    R_s: float          # m
    a_s: float          # 1/m
    L: float            # m
    k_ref: float        # reaction rate constant at T_ref
    c_s_max: float      # mol/m^3
    R_f: float          # ohm m^2
    E_D: float          # J/mol
    E_k: float          # J/mol
    sto_0: float        # stoichiometry at SoC = 0
    sto_100: float      # stoichiometry at SoC = 1
    ocp: Table = field(compare=False, repr=False, default=None)
    dudt: Table = field(compare=False, repr=False, default=None)

    def validate(self, label):
        for name in ("D_s_ref", "R_s", "a_s", "L", "k_ref", "c_s_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{label}.{name} must be positive")
        if self.R_f < 0:
            raise ConfigError(f"{label}.R_f must be nonnegative")
        for name in ("sto_0", "sto_100"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{label}.{name} must lie in [0, 1]")
        if self.ocp is None or self.dudt is None:
            raise ConfigError(f"{label} needs ocp and dudt tables")

    def stoichiometry(self, soc: float) -> float:
        return self.sto_0 + soc * (self.sto_100 - self.sto_0)

    def film_resistance(self, area: float) -> float:
        return self.R_f / (self.a_s * self.L * area)

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k not in ("ocp", "dudt")}
        d["ocp"] = self.ocp.to_list()
        d["dudt"] = self.dudt.to_list()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        try:
            d["ocp"] = Table(d["ocp"])
            d["dudt"] = Table(d["dudt"])
            return cls(**d)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad electrode parameters: {exc}") from exc


@dataclass(frozen=True)
class SpmtParams:
    pos: ElectrodeParams
    neg: ElectrodeParams
    A: float = 0.1               # m^2
    c_e0: float = 1000.0         # mol/m^3
    T_ref: float = 298.15        # K
    T_amb: float = 298.15        # K
    rho_cp: float = 1.2195e6     # J/(m^3 K)
    cell_volume: float = 6.56e-5  # m^3
    h_cell: float = 0.4          # W/K
    alpha: float = 0.5
    n_r: int = 30
    v_min: float = 3.2
    v_max: float = 4.3

    def __post_init__(self):
        self.pos.validate("pos")
        self.neg.validate("neg")
        for name in ("A", "c_e0", "T_ref", "T_amb", "rho_cp", "cell_volume", "h_cell"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.alpha != 0.5:
            raise ConfigError("only symmetric charge transfer (alpha = 0.5) is supported")
        if self.n_r < 3:
            raise ConfigError("n_r must be at least 3")
        if not self.v_min < self.v_max:
            raise ConfigError("v_min must be below v_max")

    def electrode(self, name) -> ElectrodeParams:
        return self.pos if _electrode(name) == POS else self.neg

    @property
    def heat_capacity(self) -> float:
        """Lumped heat capacity of the cell, J/K."""
        return self.rho_cp * self.cell_volume

    @property
    def thermal_time_constant(self) -> float:
        return self.heat_capacity / self.h_cell

    @property
    def film_resistance(self) -> float:
        return self.pos.film_resistance(self.A) + self.neg.film_resistance(self.A)

    def full_stoichiometry_charge(self) -> float:
        """Charge (C) that moves the anode stoichiometry by one unit."""
        n = self.neg
        return FARADAY * self.A * n.L * (n.a_s * n.R_s / 3.0) * n.c_s_max

    @property
    def capacity_ah(self) -> float:
        n = self.neg
        return self.full_stoichiometry_charge() * abs(n.sto_100 - n.sto_0) / 3600.0

    def with_updates(self, **changes) -> "SpmtParams":
        return replace(self, **changes)

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k not in ("pos", "neg")}
        d["pos"] = self.pos.to_dict()
        d["neg"] = self.neg.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        try:
            d["pos"] = ElectrodeParams.from_dict(d["pos"])
            d["neg"] = ElectrodeParams.from_dict(d["neg"])
            return cls(**d)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad SPMT parameters: {exc}") from exc


@dataclass
class SpmtState:
    c_pos: np.ndarray
    c_neg: np.ndarray
    temperature: float

    def copy(self):
        return SpmtState(self.c_pos.copy(), self.c_neg.copy(), self.temperature)


@dataclass(frozen=True)
class SpmtOutputs:
    voltage: float
    soc_bulk: float
    soc_surf: float
    temperature: float
    eta_pos: float
    eta_neg: float
    c_ss_pos: float
    c_ss_neg: float


# -- radial grid -----------------------------------------------------------

class ShellGrid:
    """Equal-thickness spherical shells; geometry in units where 4*pi is dropped."""

    def __init__(self, radius: float, n: int):
        if n < 3:
            raise ValueError("need at least 3 shells")
        self.radius = float(radius)
        self.n = int(n)
        self.dr = self.radius / self.n
        edges = np.arange(self.n + 1) * self.dr
        self.volumes = (edges[1:] ** 3 - edges[:-1] ** 3) / 3.0
        self.total_volume = self.radius ** 3 / 3.0
        faces = edges[1:-1] ** 2  # interior interface areas
        # dc/dt = D * (M @ c) on the interior; M stored as three diagonals
        coup = faces / self.dr
        self.lower = coup / self.volumes[1:]       # M[i, i-1]
        self.upper = coup / self.volumes[:-1]      # M[i, i+1]
        diag = np.zeros(self.n)
        diag[:-1] -= coup / self.volumes[:-1]
        diag[1:] -= coup / self.volumes[1:]
        self.diag = diag
        self.surface_gain = self.radius ** 2 / self.volumes[-1]

    def banded(self, D, dt):
        ab = np.zeros((3, self.n))
        ab[0, 1:] = -dt * D * self.upper
        ab[1, :] = 1.0 - dt * D * self.diag
        ab[2, :-1] = -dt * D * self.lower
        return ab

    def moles(self, c) -> float:
        """Inventory in the same dropped-4*pi units as ``volumes``."""
        return float(np.dot(self.volumes, c))

    def bulk(self, c) -> float:
        return float(np.dot(self.volumes, c)) / self.total_volume

    def surface(self, c, j_n, D) -> float:
        # quadratic through the two outer cell values honouring the flux condition
        grad = -j_n / D
        c1, c2 = c[-1], c[-2]
        dr = self.dr
        curv = (grad * dr - (c1 - c2)) / (2.0 * dr * dr)
        return float(c1 + grad * dr / 2.0 - curv * dr * dr / 4.0)


_GRID_CACHE = {}


def shell_grid(radius, n) -> ShellGrid:
    key = (float(radius), int(n))
    grid = _GRID_CACHE.get(key)
    if grid is None:
        grid = _GRID_CACHE[key] = ShellGrid(radius, n)
    return grid


# -- model equations -------------------------------------------------------

def arrhenius(psi_ref: float, E_psi: float, T: float, T_ref: float) -> float:
    if not (T > 0 and T_ref > 0):
        raise ValueError("temperatures must be positive")
    return psi_ref * math.exp(E_psi / GAS_CONSTANT * (1.0 / T_ref - 1.0 / T))


def molar_flux(params: SpmtParams, current: float, electrode) -> float:
    """Pore-wall molar flux (mol m^-2 s^-1); positive means lithium leaves the particle."""
    e = params.electrode(electrode)
    j = current / (e.a_s * FARADAY * params.A * e.L)
    return j if _electrode(electrode) == NEG else -j


def step_diffusion(c, electrode: ElectrodeParams, j_n: float, D: float, dt: float, n_r=None):
    """One implicit-Euler step of spherical Fick diffusion with surface flux ``j_n``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    c = np.asarray(c, dtype=float)
    grid = shell_grid(electrode.R_s, c.size if n_r is None else n_r)
    rhs = c.copy()
    rhs[-1] -= dt * grid.surface_gain * j_n
    try:
        out = solve_banded((1, 1), grid.banded(D, dt), rhs, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"diffusion solve failed: {exc}") from exc
    return out


def exchange_current_density(electrode: ElectrodeParams, c_ss: float, c_e0: float, k: float) -> float:
    return k * math.sqrt(c_e0 * c_ss * (electrode.c_s_max - c_ss))


def overpotential(params: SpmtParams, c_ss: float, j_n: float, T: float, electrode,
                  clamp: bool = False) -> float:
    """Butler-Volmer overpotential for alpha_a = alpha_c = 0.5.

    Raises :class:`SaturationError` if ``c_ss`` is not strictly inside
    ``(0, c_s_max)`` unless ``clamp`` is set, in which case ``c_ss`` is pulled
    to within ``1e-6 * c_s_max`` of the nearest bound.
    """
    e = params.electrode(electrode)
    cmax = e.c_s_max
    if not (0.0 < c_ss < cmax):
        if not clamp:
            state = "depleted" if c_ss <= 0.0 else "saturated"
            raise SaturationError(f"{_electrode(electrode)} electrode surface {state} "
                                  f"(c_ss={c_ss:.6g}, c_s_max={cmax:.6g})",
                                  electrode=_electrode(electrode))
    if clamp:
        eps = 1e-6 * cmax
        c_ss = min(max(c_ss, eps), cmax - eps)
    k = arrhenius(e.k_ref, e.E_k, T, params.T_ref)
    i0 = exchange_current_density(e, c_ss, params.c_e0, k)
    return 2.0 * GAS_CONSTANT * T / FARADAY * math.asinh(FARADAY * j_n / (2.0 * i0))


def _fluxes_and_diffusivities(params, state, current):
    T = state.temperature
    out = {}
    for name in (POS, NEG):
        e = params.electrode(name)
        out[name] = (molar_flux(params, current, name), arrhenius(e.D_s_ref, e.E_D, T, params.T_ref))
    return out


def output_voltage(params: SpmtParams, state: SpmtState, current: float, clamp: bool = False) -> SpmtOutputs:
    T = state.temperature
    fd = _fluxes_and_diffusivities(params, state, current)
    pos, neg = params.pos, params.neg
    gp = shell_grid(pos.R_s, state.c_pos.size)
    gn = shell_grid(neg.R_s, state.c_neg.size)
    c_ss_pos = gp.surface(state.c_pos, *fd[POS])
    c_ss_neg = gn.surface(state.c_neg, *fd[NEG])
    eta_pos = overpotential(params, c_ss_pos, fd[POS][0], T, POS, clamp=clamp)
    eta_neg = overpotential(params, c_ss_neg, fd[NEG][0], T, NEG, clamp=clamp)
    if clamp:
        c_ss_pos = min(max(c_ss_pos, 0.0), pos.c_s_max)
        c_ss_neg = min(max(c_ss_neg, 0.0), neg.c_s_max)
    ocv_surf = pos.ocp.scalar(c_ss_pos / pos.c_s_max) - neg.ocp.scalar(c_ss_neg / neg.c_s_max)
    v = ocv_surf + eta_pos - eta_neg - params.film_resistance * current
    return SpmtOutputs(
        voltage=v,
        soc_bulk=gn.bulk(state.c_neg) / neg.c_s_max,
        soc_surf=c_ss_neg / neg.c_s_max,
        temperature=T,
        eta_pos=eta_pos,
        eta_neg=eta_neg,
        c_ss_pos=c_ss_pos,
        c_ss_neg=c_ss_neg,
    )


def bulk_ocv(params: SpmtParams, state: SpmtState):
    """Open-circuit voltage and its temperature derivative at bulk stoichiometry."""
    pos, neg = params.pos, params.neg
    th_p = shell_grid(pos.R_s, state.c_pos.size).bulk(state.c_pos) / pos.c_s_max
    th_n = shell_grid(neg.R_s, state.c_neg.size).bulk(state.c_neg) / neg.c_s_max
    u = pos.ocp.scalar(th_p) - neg.ocp.scalar(th_n)
    dudt = pos.dudt.scalar(th_p) - neg.dudt.scalar(th_n)
    return u, dudt


def heat_generation(current, voltage, ocv_bulk, docv_dT, T):
    """Irreversible plus reversible heat (W), discharge-positive current."""
    return current * (ocv_bulk - voltage) - current * T * docv_dT


def step_thermal(state: SpmtState, params: SpmtParams, current: float, voltage: float, dt: float) -> float:
    """Advance the lumped temperature by ``dt``.

    With current, voltage and bulk OCV held over the step the energy balance
    ``C dT/dt = I (U - V) - I T dU/dT - h (T - T_amb)`` is linear in T, so it
    is integrated exactly.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u, dudt = bulk_ocv(params, state)
    cap = params.heat_capacity
    a = current * (u - voltage) + params.h_cell * params.T_amb
    b = params.h_cell + current * dudt
    T = state.temperature
    x = b * dt / cap
    if abs(x) < 1e-12:
        return T + dt * (a - b * T) / cap
    return T + (a / b - T) * -math.expm1(-x)


def initial_state(params: SpmtParams, initial_soc: float, initial_T: float) -> SpmtState:
    if not 0.0 <= initial_soc <= 1.0:
        raise ValueError("initial_soc must lie in [0, 1]")
    if not initial_T > 0:
        raise ValueError("initial temperature must be positive (K)")
    n = params.n_r
    c_pos = np.full(n, params.pos.stoichiometry(initial_soc) * params.pos.c_s_max)
    c_neg = np.full(n, params.neg.stoichiometry(initial_soc) * params.neg.c_s_max)
    return SpmtState(c_pos, c_neg, float(initial_T))


class SpmtSimulator:
    """Stateful SPMT integrator; one instance per run."""

    feature_names = ("soc_bulk", "soc_surf", "temperature")

    def __init__(self, params: SpmtParams, initial_soc: float = 1.0, initial_T: Optional[float] = None):
        self.params = params
        self.state = initial_state(params, initial_soc, params.T_amb if initial_T is None else initial_T)

    def outputs(self, current, clamp=False) -> SpmtOutputs:
        return output_voltage(self.params, self.state, current, clamp=clamp)

    def advance(self, current: float, voltage: float, dt: float) -> None:
        p, s = self.params, self.state
        fd = _fluxes_and_diffusivities(p, s, current)
        T_next = step_thermal(s, p, current, voltage, dt)
        c_pos = step_diffusion(s.c_pos, p.pos, fd[POS][0], fd[POS][1], dt)
        c_neg = step_diffusion(s.c_neg, p.neg, fd[NEG][0], fd[NEG][1], dt)
        if not (np.all(np.isfinite(c_pos)) and np.all(np.isfinite(c_neg)) and math.isfinite(T_next)):
            raise NumericalError("non-finite SPMT state")
        if T_next <= 0:
            raise NumericalError("temperature dropped below 0 K")
        self.state = SpmtState(c_pos, c_neg, T_next)


def simulate_spmt(params: SpmtParams, initial_soc: float, initial_T: Optional[float],
                  profile: CurrentProfile, dt: float = 1.0, enforce_window: bool = True,
                  on_saturation: str = "raise", extra_resistance=None) -> SimTrace:
    """Run the SPMT open-loop over ``profile`` on the grid ``k*dt``.

    With ``enforce_window`` the run halts (``cutoff=True``) at the first step
    whose voltage leaves ``[v_min, v_max]``; that step is not recorded.
    Electrode saturation within one step of a window violation is treated as
    cutoff. Otherwise saturation raises, unless ``on_saturation='stop'``, in
    which case the trace is truncated and flagged.

    ``extra_resistance`` is an optional callable ``(soc_bulk_normalized,
    temperature) -> ohms`` adding an ohmic drop; it is used by truth models.
    """
    if on_saturation not in ("raise", "stop"):
        raise ValueError("on_saturation must be 'raise' or 'stop'")
    dt = float(dt)
    sim = SpmtSimulator(params, initial_soc, initial_T)
    grid = step_grid(profile, dt)
    currents = grid_currents(profile, grid)
    n = grid.size
    V = np.empty(n)
    feats = {name: np.empty(n) for name in SpmtSimulator.feature_names}
    neg = params.neg
    window = (params.v_min, params.v_max)
    cutoff, cutoff_time, reason = False, None, ""
    count = n

    def in_window(v):
        return window[0] <= v <= window[1]

    for k in range(n):
        t, I = float(grid[k]), float(currents[k])
        try:
            out = sim.outputs(I)
        except SaturationError as exc:
            out = sim.outputs(I, clamp=True)
            v = out.voltage + _extra_drop(extra_resistance, out, neg, I)
            if enforce_window and not in_window(v):
                cutoff, cutoff_time, reason, count = True, t, "voltage window", k
                break
            if on_saturation == "stop":
                cutoff, cutoff_time, reason, count = True, t, f"saturation: {exc}", k
                break
            raise SaturationError(f"t={t:g} s: {exc}", electrode=exc.electrode, time=t) from None
        v = out.voltage + _extra_drop(extra_resistance, out, neg, I)
        if not math.isfinite(v):
            raise NumericalError(f"non-finite voltage at t={t:g} s")
        if enforce_window and not in_window(v):
            cutoff, cutoff_time, reason, count = True, t, "voltage window", k
            break
        V[k] = v
        feats["soc_bulk"][k] = out.soc_bulk
        feats["soc_surf"][k] = out.soc_surf
        feats["temperature"][k] = out.temperature
        if k + 1 < n:
            sim.advance(I, v, dt)
    return SimTrace(grid[:count], currents[:count], V[:count],
                    {k: a[:count] for k, a in feats.items()},
                    cutoff=cutoff, cutoff_time=cutoff_time, cutoff_reason=reason)


def normalized_soc(neg: ElectrodeParams, soc_bulk: float) -> float:
    """Map anode bulk stoichiometry onto the [0, 1] SoC window."""
    return (soc_bulk - neg.sto_0) / (neg.sto_100 - neg.sto_0)


def _extra_drop(extra_resistance, out, neg, current):
    if extra_resistance is None:
        return 0.0
    return -extra_resistance(normalized_soc(neg, out.soc_bulk), out.temperature) * current

"""Uniform access to the two physical models.

Both simulators are driven through :func:`simulate`, which dispatches on the
parameter type, and default parameter sets ship as JSON package data.
"""

from __future__ import annotations

import json
from importlib import resources
from typing import Optional, Union

from .core import KELVIN, CurrentProfile, SimTrace
from .exceptions import ConfigError
from .ndc import NdcParams, simulate_ndc
from .spmt import SpmtParams, simulate_spmt

PhysicalParams = Union[SpmtParams, NdcParams]
MODEL_KINDS = ("spmt", "ndc")
_PARAM_CLASSES = {"spmt": SpmtParams, "ndc": NdcParams}


def model_kind(params: PhysicalParams) -> str:
    if isinstance(params, SpmtParams):
        return "spmt"
    if isinstance(params, NdcParams):
        return "ndc"
    raise TypeError(f"not a physical parameter set: {type(params).__name__}")


def default_params_dict(kind: str) -> dict:
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown physical model {kind!r}; expected one of {MODEL_KINDS}")
    text = resources.files("hybridlab.data").joinpath(f"{kind}_params.json").read_text()
    return json.loads(text)


def _merge(base: dict, overrides: dict, where: str) -> dict:
    out = dict(base)
    for key, value in overrides.items():
        if key not in base:
            raise ConfigError(f"unknown parameter {where}{key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def params_from_dict(kind: str, overrides: Optional[dict] = None) -> PhysicalParams:
    """Defaults for ``kind`` with ``overrides`` merged in (nested for SPMT electrodes)."""
    d = _merge(default_params_dict(kind), overrides or {}, "")
    try:
        return _PARAM_CLASSES[kind].from_dict(d)
    except (TypeError, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {kind} parameters: {exc}") from exc


def default_params(kind: str) -> PhysicalParams:
    return params_from_dict(kind)


def params_to_dict(params: PhysicalParams) -> dict:
    return params.to_dict()


def nominal_capacity_ah(params: PhysicalParams) -> float:
    return float(params.capacity_ah)


def simulate(params: PhysicalParams, profile: CurrentProfile, initial_soc: float = 1.0,
             initial_temperature_c: Optional[float] = None, dt: float = 1.0,
             enforce_window: bool = True) -> SimTrace:
    """Open-loop simulation of either model on the grid ``k*dt``.

    Without the voltage window the SPMT still stops at electrode saturation
    (flagged as cutoff) since the model is undefined past it.
    ``initial_temperature_c`` only matters for the SPMT; ``None`` means ambient.
    """
    if isinstance(params, SpmtParams):
        T0 = None if initial_temperature_c is None else float(initial_temperature_c) + KELVIN
        return simulate_spmt(params, initial_soc, T0, profile, dt=dt, enforce_window=enforce_window,
                             on_saturation="stop")
    if isinstance(params, NdcParams):
        return simulate_ndc(params, initial_soc, profile, dt=dt, enforce_window=enforce_window)
    raise TypeError(f"not a physical parameter set: {type(params).__name__}")

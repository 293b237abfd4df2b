"""Shared domain types: current profiles, datasets, simulation traces, metrics.

Sign convention used everywhere in the package: positive current discharges
the cell. Profiles are read with a zero-order hold between samples.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .exceptions import (
    AlignmentError,
    DataError,
    DegenerateProfileError,
    ParseError,
    ProfileRangeError,
)

DATASET_COLUMNS = ("time_s", "current_a", "voltage_v", "temperature_c", "soh")
KELVIN = 273.15


def _frozen(values, name):
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    arr.setflags(write=False)
    return arr


def _check_time_axis(times, what):
    if times.size < 1:
        raise ValueError(f"{what} needs at least one sample")
    if not np.all(np.isfinite(times)):
        raise ValueError(f"{what} times must be finite")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise ValueError(f"{what} times must be strictly increasing")


@dataclass(frozen=True)
class CRate:
    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"C-rate must be >= 0, got {self.value}")

    def amperes(self, capacity_ah: float) -> float:
        return self.value * capacity_ah


@dataclass(frozen=True, eq=False)
class CurrentProfile:
    """Time-stamped current samples held constant until the next sample."""

    times: np.ndarray
    currents: np.ndarray
    name: str = ""

    def __post_init__(self):
        times = _frozen(self.times, "times")
        currents = _frozen(self.currents, "currents")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "currents", currents)
        if times.shape != currents.shape:
            raise ValueError("times and currents must have equal length")
        if times.size < 2:
            raise ValueError("a current profile needs at least 2 samples")
        _check_time_axis(times, "profile")
        if times[0] != 0.0:
            raise ValueError("profile times must start at 0")
        if not np.all(np.isfinite(currents)):
            raise ValueError("profile currents must be finite")

    @classmethod
    def from_samples(cls, samples: Sequence[tuple], name: str = "") -> "CurrentProfile":
        arr = np.asarray(samples, dtype=float)
        return cls(arr[:, 0], arr[:, 1], name=name)

    @classmethod
    def constant(cls, current: float, duration: float, name: str = "") -> "CurrentProfile":
        return cls([0.0, float(duration)], [current, current], name=name)

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    @property
    def max_abs_current(self) -> float:
        return float(np.max(np.abs(self.currents)))

    def __len__(self):
        return self.times.size


def current_at(profile: CurrentProfile, t: float) -> float:
    """Zero-order-hold current at time ``t`` (right-continuous)."""
    if not (0.0 <= t <= profile.times[-1]):
        raise ProfileRangeError(
            f"t={t} outside profile span [0, {profile.times[-1]}]"
        )
    idx = int(np.searchsorted(profile.times, t, side="right")) - 1
    return float(profile.currents[idx])


def scale_profile(profile: CurrentProfile, target_max: float) -> CurrentProfile:
    if not target_max > 0:
        raise ValueError("target_max must be positive")
    peak = profile.max_abs_current
    if peak == 0.0:
        raise DegenerateProfileError("cannot scale an all-zero current profile")
    if peak == target_max:
        return profile
    return CurrentProfile(profile.times, profile.currents * (target_max / peak), name=profile.name)


def step_grid(profile: CurrentProfile, dt: float) -> np.ndarray:
    """Simulation time grid ``k*dt`` covering ``[0, profile.duration]``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(math.floor(profile.duration / dt + 1e-9)) + 1
    return np.arange(n) * float(dt)


def grid_currents(profile: CurrentProfile, grid: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(profile.times, grid, side="right") - 1
    return profile.currents[idx]


def rmse(true_v, model_v) -> float:
    a = np.asarray(true_v, dtype=float)
    b = np.asarray(model_v, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("rmse of empty sequences is undefined")
    d = np.abs(a - b)
    scale = float(d.max())
    if scale == 0.0 or not math.isfinite(scale):
        return scale
    # scaling keeps tiny differences from underflowing when squared
    return scale * float(np.sqrt(np.mean((d / scale) ** 2)))


def rer(rmse_phy: float, rmse_hybrid: float) -> float:
    """Relative error reduction of a hybrid model over its physical model, in %."""
    if rmse_phy < 0 or rmse_hybrid < 0:
        raise ValueError("RMSE values must be nonnegative")
    if rmse_phy == 0:
        raise ZeroDivisionError("rer undefined for a physical RMSE of zero")
    return (rmse_phy - rmse_hybrid) / rmse_phy * 100.0


@dataclass(frozen=True, eq=False)
class Dataset:
    """Measured or synthetic cell data on a time grid.

    ``temperature`` is in degrees Celsius; ``soh`` is a capacity fraction.
    Either may be ``None`` when the source has no such column.
    """

    time: np.ndarray
    current: np.ndarray
    voltage: np.ndarray
    temperature: Optional[np.ndarray] = None
    soh: Optional[np.ndarray] = None
    cell_capacity_ah: float = float("nan")
    label: str = ""
    initial_soc: float = 1.0

    def __post_init__(self):
        for name in ("time", "current", "voltage", "temperature", "soh"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val, name))
        n = self.time.size
        for name in ("current", "voltage", "temperature", "soh"):
            val = getattr(self, name)
            if val is not None and val.size != n:
                raise DataError(f"column {name} has {val.size} rows, expected {n}")
        _check_time_axis(self.time, "dataset")
        if not np.all(np.isfinite(self.voltage)) or np.any(self.voltage <= 0) or np.any(self.voltage >= 10):
            raise DataError("voltage_true must be finite and within (0, 10) V")
        if self.soh is not None and (np.any(self.soh <= 0) or np.any(self.soh > 1)):
            raise DataError("soh must lie in (0, 1]")

    def __len__(self):
        return self.time.size

    @property
    def soh_value(self) -> Optional[float]:
        return None if self.soh is None else float(self.soh[0])

    def to_profile(self) -> CurrentProfile:
        if self.time.size < 2:
            raise DataError("dataset too short to define a current profile")
        return CurrentProfile(self.time, self.current, name=self.label)

    def replace(self, **changes) -> "Dataset":
        fields = dict(
            time=self.time, current=self.current, voltage=self.voltage,
            temperature=self.temperature, soh=self.soh,
            cell_capacity_ah=self.cell_capacity_ah, label=self.label,
            initial_soc=self.initial_soc,
        )
        fields.update(changes)
        return Dataset(**fields)

    def head(self, n: int) -> "Dataset":
        cut = lambda a: None if a is None else a[:n]  # noqa: E731
        return self.replace(time=self.time[:n], current=self.current[:n],
                            voltage=self.voltage[:n], temperature=cut(self.temperature),
                            soh=cut(self.soh))


@dataclass(frozen=True, eq=False)
class SimTrace:
    """Per-step output of a physical simulation.

    ``features`` maps state-feature names to arrays aligned with ``time``.
    ``cutoff`` is set when the run stopped early because the voltage left the
    configured window or an electrode saturated near the end of discharge.
    """

    time: np.ndarray
    current: np.ndarray
    voltage: np.ndarray
    features: Mapping[str, np.ndarray] = field(default_factory=dict)
    cutoff: bool = False
    cutoff_time: Optional[float] = None
    cutoff_reason: str = ""

    def __post_init__(self):
        object.__setattr__(self, "time", _frozen(self.time, "time"))
        object.__setattr__(self, "current", _frozen(self.current, "current"))
        object.__setattr__(self, "voltage", _frozen(self.voltage, "voltage"))
        feats = {k: _frozen(v, k) for k, v in self.features.items()}
        n = self.time.size
        for k, v in feats.items():
            if v.size != n:
                raise ValueError(f"feature {k} has {v.size} rows, expected {n}")
        if self.current.size != n or self.voltage.size != n:
            raise ValueError("trace columns must have equal length")
        object.__setattr__(self, "features", feats)

    def __len__(self):
        return self.time.size

    @property
    def feature_names(self):
        return tuple(self.features)

    def record(self, k: int) -> dict:
        rec = {name: float(arr[k]) for name, arr in self.features.items()}
        rec["current"] = float(self.current[k])
        return rec

    def head(self, n: int) -> "SimTrace":
        return SimTrace(self.time[:n], self.current[:n], self.voltage[:n],
                        {k: v[:n] for k, v in self.features.items()},
                        self.cutoff, self.cutoff_time, self.cutoff_reason)


def common_prefix(trace: SimTrace, dataset: Dataset) -> int:
    """Length of the shared time grid, checking timestamps match exactly."""
    n = min(len(trace), len(dataset))
    if n == 0:
        raise AlignmentError("empty trace or dataset")
    bad = np.nonzero(trace.time[:n] != dataset.time[:n])[0]
    if bad.size:
        k = int(bad[0])
        raise AlignmentError(
            f"time grids differ at row {k}: trace t={trace.time[k]!r}, dataset t={dataset.time[k]!r}"
        )
    return n


# -- CSV persistence -------------------------------------------------------

def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x: float) -> str:
    return repr(float(x))


def dataset_to_csv(ds: Dataset) -> str:
    cols = ["time_s", "current_a", "voltage_v"]
    arrays = [ds.time, ds.current, ds.voltage]
    if ds.temperature is not None:
        cols.append("temperature_c")
        arrays.append(ds.temperature)
    if ds.soh is not None:
        cols.append("soh")
        arrays.append(ds.soh)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in zip(*arrays):
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_dataset_csv(ds: Dataset, path) -> None:
    atomic_write_text(path, dataset_to_csv(ds))


def _read_numeric_csv(path, required, optional=()):
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, header row required", path, 1) from None
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(f"missing required column(s) {missing}", path, 1)
        unknown = [c for c in header if c not in required and c not in optional]
        if unknown:
            raise ParseError(f"unexpected column(s) {unknown}", path, 1)
        cols = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
            for h, cell in zip(header, row):
                try:
                    val = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric value {cell!r} in column {h}", path, lineno) from None
                if not math.isfinite(val):
                    raise ParseError(f"non-finite value in column {h}", path, lineno)
                cols[h].append(val)
    return {h: np.asarray(v, dtype=float) for h, v in cols.items()}


def read_dataset_csv(path, cell_capacity_ah=float("nan"), label=None, initial_soc=1.0) -> Dataset:
    cols = _read_numeric_csv(path, ("time_s", "current_a", "voltage_v"), ("temperature_c", "soh"))
    try:
        return Dataset(
            time=cols["time_s"], current=cols["current_a"], voltage=cols["voltage_v"],
            temperature=cols.get("temperature_c"), soh=cols.get("soh"),
            cell_capacity_ah=cell_capacity_ah,
            label=Path(path).stem if label is None else label,
            initial_soc=initial_soc,
        )
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise DataError(f"{path}: {exc}") from exc
        raise DataError(f"{path}: {exc}") from exc


def read_profile_csv(path, name=None):
    """Read ``time_s,current_a`` samples; extra dataset columns are returned too."""
    cols = _read_numeric_csv(path, ("time_s", "current_a"), ("voltage_v", "temperature_c", "soh"))
    try:
        profile = CurrentProfile(cols["time_s"], cols["current_a"],
                                 name=Path(path).stem if name is None else name)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return profile, cols


def profile_to_csv(profile: CurrentProfile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "current_a"])
    for t, i in zip(profile.times, profile.currents):
        w.writerow([fmt(t), fmt(i)])
    return buf.getvalue()


def trace_to_csv(trace: SimTrace) -> str:
    names = list(trace.features)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "current_a", "voltage_v"] + names)
    for k in range(len(trace)):
        w.writerow([fmt(trace.time[k]), fmt(trace.current[k]), fmt(trace.voltage[k])]
                   + [fmt(trace.features[n][k]) for n in names])
    return buf.getvalue()

"""Command-line pipeline: simulate, generate, train, eval, predict.

Exit codes: 0 success, 1 simulation stopped at the voltage window (trace is
still written), 2 configuration error, 3 numerical failure, 4 data error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import physics
from .config import RunConfig, load_config
from .core import (KELVIN, CurrentProfile, Dataset, atomic_write_text, fmt, read_dataset_csv,
                   read_profile_csv, rer, trace_to_csv, write_dataset_csv)
from .datagen import generate_truth
from .exceptions import ConfigError, DataError, HybridLabError, ParseError, TrainingError, WiringError
from .hybrid import EvalReport, HybridModel, evaluate, predict_trace, simulate_for

log = logging.getLogger("hybridlab")

MANIFEST_COLUMNS = ("path", "role", "profile_name", "soh", "initial_soc")
REPORT_COLUMNS = ("profile", "role", "soh", "samples", "rmse_phy_mv", "rmse_hybrid_mv", "rer_pct")


# --------------------------------------------------------------------------- helpers

def worker_count() -> int:
    raw = os.environ.get("HYBRIDLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HYBRIDLAB_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def pool_map(fn, items):
    """Ordered map, fanned out over HYBRIDLAB_THREADS worker processes."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, *zip(*items)))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_manifest(entries, path) -> None:
    atomic_write_text(path, _csv_text(MANIFEST_COLUMNS, [
        [e["path"], e["role"], e["profile_name"], fmt(e["soh"]), fmt(e["initial_soc"])] for e in entries]))


def read_manifest(path) -> List[dict]:
    """Rows with ``path`` resolved against the manifest's directory."""
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        missing = [c for c in MANIFEST_COLUMNS[:4] if c not in header]
        if missing:
            raise ParseError(f"manifest missing column(s) {missing}", path, 1)
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(raw)}", path, lineno)
            row = dict(zip(header, (c.strip() for c in raw)))
            if row["role"] not in ("train", "test"):
                raise ParseError(f"role must be train or test, got {row['role']!r}", path, lineno)
            try:
                row["soh"] = float(row["soh"])
                row["initial_soc"] = float(row["initial_soc"]) if row.get("initial_soc") else None
            except ValueError:
                raise ParseError("soh and initial_soc must be numeric", path, lineno) from None
            p = Path(row["path"])
            row["path"] = p if p.is_absolute() else path.parent / p
            row["line"] = lineno
            rows.append(row)
    return rows


def _load_rows(rows, cfg: Optional[RunConfig], capacity_ah) -> List[Dataset]:
    default_soc = cfg.initial_soc if cfg is not None else 1.0
    out = []
    for row in rows:
        soc = row["initial_soc"] if row["initial_soc"] is not None else default_soc
        out.append(read_dataset_csv(row["path"], capacity_ah, label=Path(row["path"]).stem, initial_soc=soc))
    return out


def _out_dir(args, cfg: Optional[RunConfig]) -> Path:
    if args.out:
        return Path(args.out)
    return cfg.output_dir if cfg is not None else Path("out")


def _config(args, required=True) -> Optional[RunConfig]:
    if not args.config:
        if required:
            raise ConfigError("--config is required")
        return None
    return load_config(args.config).with_overrides(seed=args.seed, dt=args.dt)


def _check_artifact_matches(model: HybridModel, cfg: Optional[RunConfig]) -> None:
    if cfg is None:
        return
    want = cfg.feature_spec()
    if want != model.spec:
        raise WiringError(f"artifact features {model.spec.to_dict()} do not match config {want.to_dict()}")


# --------------------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    cfg = _config(args, required=False)
    kind = args.physics or (cfg.model_type if cfg else "ndc")
    if cfg is not None and kind == cfg.model_type:
        params = cfg.physical_params()
    else:
        params = physics.default_params(kind)
    if args.profile:
        profile, _ = read_profile_csv(args.profile)
    elif args.c_rate is not None:
        amps = args.c_rate * physics.nominal_capacity_ah(params)
        duration = args.duration if args.duration else 1.2 * 3600.0 / args.c_rate
        profile = CurrentProfile.constant(amps, duration, f"{args.c_rate:g}C")
    else:
        raise ConfigError("simulate needs --profile PATH or --c-rate X")
    dt = args.dt if args.dt else (cfg.dt if cfg else 1.0)
    soc = args.initial_soc if args.initial_soc is not None else (cfg.initial_soc if cfg else 1.0)
    temp = args.temperature_c if args.temperature_c is not None else (cfg.initial_temperature_c if cfg else None)
    trace = physics.simulate(params, profile, soc, temp, dt=dt, enforce_window=True)
    out = Path(args.out) if args.out else Path(f"{profile.name or 'profile'}_{kind}_trace.csv")
    if out.suffix.lower() != ".csv":
        out = out / f"{profile.name or 'profile'}_{kind}_trace.csv"
    atomic_write_text(out, trace_to_csv(trace))
    print(f"wrote {len(trace)} rows to {out}")
    if trace.cutoff:
        print(f"cutoff at t={trace.cutoff_time:g} s ({trace.cutoff_reason})", file=sys.stderr)
        return 1
    return 0


# --------------------------------------------------------------------------- generate

def _generate_one(truth, params, profile, soc, temp_c, dt, seed, soh, label, path):
    ds = generate_truth(truth, params, profile, soc, temp_c, dt, seed, soh, label)
    write_dataset_csv(ds, path)
    return len(ds)


def cmd_generate(args) -> int:
    cfg = _config(args)
    specs = cfg.profiles()
    if not specs:
        raise ConfigError("no profiles configured")
    out = _out_dir(args, cfg)
    params, truth = cfg.physical_params(), cfg.truth_spec()
    cap = physics.nominal_capacity_ah(params)
    jobs, entries = [], []
    for soh in cfg.soh_grid:
        for j, ps in enumerate(specs):
            soc = ps.initial_soc if ps.initial_soc is not None else cfg.initial_soc
            label = f"{ps.name}_soh{soh:g}"
            rel = Path("datasets") / f"{label}.csv"
            jobs.append((truth, params, ps.build(cap, cfg.base_dir), soc, cfg.initial_temperature_c,
                         cfg.dt, cfg.seed + j, soh, label, out / rel))
            entries.append({"path": rel.as_posix(), "role": ps.role, "profile_name": ps.name,
                            "soh": soh, "initial_soc": soc})
    lengths = pool_map(_generate_one, jobs)
    write_manifest(entries, out / "manifest.csv")
    n_train = sum(e["role"] == "train" for e in entries)
    print(f"wrote {len(entries)} datasets ({n_train} train, {len(entries) - n_train} test, "
          f"{sum(lengths)} samples) and {out / 'manifest.csv'}")
    return 0


# --------------------------------------------------------------------------- train

def _manifest_path(args, out: Path) -> Path:
    return Path(args.manifest) if args.manifest else out / "manifest.csv"


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    rows = [r for r in read_manifest(_manifest_path(args, out)) if r["role"] == "train"]
    if not rows:
        raise DataError("manifest lists no train datasets")
    params = cfg.physical_params()
    datasets = _load_rows(rows, cfg, physics.nominal_capacity_ah(params))
    traces = pool_map(simulate_for, [(params, ds, cfg.dt) for ds in datasets])
    reg = cfg.regressor()
    model_path = Path(args.model) if args.model else out / "model.json"
    try:
        reg.fit(datasets, traces=traces)
    except TrainingError as exc:
        if exc.last_good is not None:
            ckpt = model_path.with_suffix(".checkpoint.json")
            HybridModel(cfg.feature_spec(), params, exc.last_good, {"diverged_at_epoch": exc.epoch}).save(ckpt)
            print(f"last good model saved to {ckpt}", file=sys.stderr)
        raise
    reg.model_.save(model_path)
    hist = reg.history_
    atomic_write_text(out / "loss_history.csv", _csv_text(
        ("epoch", "train_loss", "val_loss"),
        [[str(k), fmt(a), fmt(b)] for k, (a, b) in enumerate(zip(hist.train_loss, hist.val_loss))]))
    print(f"trained {reg.model_.framework} on {len(datasets)} datasets "
          f"({reg.model_.metadata['n_samples']} samples, best epoch {hist.best_epoch}, "
          f"loss {hist.best_loss:.3e}); wrote {model_path}")
    return 0


# --------------------------------------------------------------------------- eval

def format_table(rows) -> str:
    header = ("profile", "role", "SoH", "RMSE phy (mV)", "RMSE hybrid (mV)", "RER (%)")
    body = [(r["profile"], r["role"], f"{r['soh']:.2f}", f"{r['rmse_phy_mv']:.2f}",
             f"{r['rmse_hybrid_mv']:.2f}", f"{r['rer_pct']:.2f}") for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) if i < 2 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(b, widths))))
    return "\n".join(lines) + "\n"


def _residual_csv(rep: EvalReport) -> str:
    cols = (rep.time, rep.current, rep.v_true, rep.v_phy, rep.v_hybrid, rep.residual_phy, rep.residual_hybrid)
    return _csv_text(("time_s", "current_a", "voltage_true_v", "voltage_phy_v", "voltage_hybrid_v",
                      "residual_phy_v", "residual_hybrid_v"),
                     ([fmt(v) for v in row] for row in zip(*cols)))


def cmd_eval(args) -> int:
    cfg = _config(args, required=False)
    out = _out_dir(args, cfg)
    model_path = Path(args.model) if args.model else out / "model.json"
    model = HybridModel.load(model_path)
    _check_artifact_matches(model, cfg)
    rows = read_manifest(_manifest_path(args, out))
    if args.role != "all":
        rows = [r for r in rows if r["role"] == args.role]
    if not rows:
        raise DataError("manifest lists no datasets to evaluate")
    dt = args.dt if args.dt else (cfg.dt if cfg else 1.0)
    datasets = _load_rows(rows, cfg, physics.nominal_capacity_ah(model.physical_params))
    reports = pool_map(evaluate, [(model, ds, dt) for ds in datasets])
    table = []
    for row, rep in zip(rows, reports):
        phy_mv, hyb_mv = 1e3 * rep.rmse_phy, 1e3 * rep.rmse_hybrid
        table.append({"profile": row["profile_name"], "role": row["role"], "soh": row["soh"],
                      "samples": len(rep), "rmse_phy_mv": phy_mv, "rmse_hybrid_mv": hyb_mv,
                      "rer_pct": rer(phy_mv, hyb_mv) if phy_mv > 0 else float("nan"), "label": rep.label, "truncated": rep.truncated})
        atomic_write_text(out / "residuals" / f"{rep.label}.csv", _residual_csv(rep))
    atomic_write_text(out / "report.csv", _csv_text(REPORT_COLUMNS, (
        [r["profile"], r["role"], fmt(r["soh"]), str(r["samples"]), fmt(r["rmse_phy_mv"]),
         fmt(r["rmse_hybrid_mv"]), fmt(r["rer_pct"])] for r in table)))
    text = format_table(table)
    atomic_write_text(out / "report.txt", text)
    sys.stdout.write(text)
    for r in table:
        if r["truncated"]:
            print(f"note: {r['label']} evaluated up to the physical model's stop", file=sys.stderr)
    if cfg is None or cfg.plots:
        _plots(out, reports, table)
    return 0


def _plots(out: Path, reports, table) -> None:
    try:
        from .plotting import plot_rmse_vs_soh, plot_voltage_overlay

        for rep in reports:
            plot_voltage_overlay(rep, out / "plots" / f"{rep.label}.svg")
        sohs = sorted({r["soh"] for r in table}, reverse=True)
        if len(sohs) > 1:
            phy, hyb = [], []
            for s in sohs:
                sel = [rep for rep, r in zip(reports, table) if r["soh"] == s]
                vt = np.concatenate([r.v_true for r in sel])
                phy.append(1e3 * float(np.sqrt(np.mean((vt - np.concatenate([r.v_phy for r in sel])) ** 2))))
                hyb.append(1e3 * float(np.sqrt(np.mean((vt - np.concatenate([r.v_hybrid for r in sel])) ** 2))))
            plot_rmse_vs_soh(sohs, phy, hyb, out / "plots" / "rmse_vs_soh.svg")
    except Exception as exc:  # figures are optional outputs
        warnings.warn(f"plotting failed: {exc}", RuntimeWarning)


# --------------------------------------------------------------------------- predict

def cmd_predict(args) -> int:
    cfg = _config(args, required=False)
    if not args.model:
        raise ConfigError("predict needs --model PATH")
    if not args.profile:
        raise ConfigError("predict needs --profile PATH")
    model = HybridModel.load(args.model)
    _check_artifact_matches(model, cfg)
    profile, cols = read_profile_csv(args.profile)
    spec = model.spec
    soh = args.soh
    if soh is None and "soh" in cols:
        soh = cols["soh"]
    if "soh" in spec.features and soh is None:
        raise WiringError("aging-aware model needs 'soh' (pass --soh)", feature="soh")
    dt = args.dt if args.dt else (cfg.dt if cfg else 1.0)
    soc = args.initial_soc if args.initial_soc is not None else (cfg.initial_soc if cfg else 1.0)
    temp_c = cols.get("temperature_c")
    if args.temperature_c is not None:
        temp_c = args.temperature_c
    elif temp_c is None and cfg is not None:
        temp_c = cfg.initial_temperature_c
    t0 = None if temp_c is None else float(np.ravel(temp_c)[0])
    trace = physics.simulate(model.physical_params, profile, soc, t0, dt=dt, enforce_window=False)
    n = len(trace)
    temperature = None
    if spec.physical_model == "ndc" and "temperature" in spec.features:
        if temp_c is None:
            raise WiringError("NDC model needs 'temperature' (pass --temperature-c or a temperature_c column)",
                              feature="temperature")
        temperature = _on_grid(profile, temp_c, trace.time) + KELVIN
    if soh is not None and np.ndim(soh):
        soh = _on_grid(profile, soh, trace.time)
    v = predict_trace(model, trace, temperature, soh, n)
    out = Path(args.out) if args.out else Path(f"{profile.name}_prediction.csv")
    if out.suffix.lower() != ".csv":
        out = out / f"{profile.name}_prediction.csv"
    atomic_write_text(out, _csv_text(("time_s", "current_a", "voltage_phy_v", "voltage_v"),
                                     ([fmt(a), fmt(b), fmt(c), fmt(d)] for a, b, c, d in
                                      zip(trace.time, trace.current, trace.voltage, v))))
    print(f"wrote {n} rows to {out}")
    return 0


def _on_grid(profile: CurrentProfile, values, grid):
    """Zero-order-hold resample of a per-sample column (or broadcast a scalar)."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return np.full(grid.size, float(values))
    idx = np.searchsorted(profile.times, grid, side="right") - 1
    return values[idx]


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--model", help="model artifact path")
        p.add_argument("--manifest", help="dataset manifest CSV (default OUT/manifest.csv)")
        p.add_argument("--out", help="output directory (simulate/predict: file or directory)")
        p.add_argument("--seed", type=int, help="override experiment.seed")
        p.add_argument("--dt", type=float, help="override the step size in seconds")
        return p

    p = common(sub.add_parser("simulate", help="run a physical model on a profile"))
    p.add_argument("--physics", choices=physics.MODEL_KINDS, help="model to run (default: config model)")
    p.add_argument("--profile", help="CSV with time_s,current_a")
    p.add_argument("--c-rate", type=float, help="constant discharge at this C-rate instead of --profile")
    p.add_argument("--duration", type=float, help="duration for --c-rate in seconds")
    p.add_argument("--initial-soc", type=float)
    p.add_argument("--temperature-c", type=float, help="initial temperature (SPMT)")
    p.set_defaults(func=cmd_simulate)

    common(sub.add_parser("generate", help="synthesize truth datasets and a manifest")).set_defaults(
        func=cmd_generate)
    common(sub.add_parser("train", help="train a hybrid model on manifest train rows")).set_defaults(
        func=cmd_train)

    p = common(sub.add_parser("eval", help="RMSE/RER report over manifest datasets"))
    p.add_argument("--role", choices=("all", "train", "test"), default="all")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("predict", help="open-loop hybrid prediction for a profile"))
    p.add_argument("--profile", help="CSV with time_s,current_a[,temperature_c,soh]")
    p.add_argument("--initial-soc", type=float)
    p.add_argument("--soh", type=float, help="state of health for aging-aware models")
    p.add_argument("--temperature-c", type=float, help="constant cell temperature (NDC models)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except HybridLabError as exc:
        print(f"hybridlab {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"hybridlab {args.command}: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as exc:
        print(f"hybridlab {args.command}: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())

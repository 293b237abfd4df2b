"""SVG figures for evaluation reports."""

from __future__ import annotations

import io
from typing import Sequence

from .core import atomic_write_text


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "hybridlab"  # stable element ids
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    atomic_write_text(path, buf.getvalue())


def plot_voltage_overlay(report, path) -> None:
    """Truth, physics and hybrid voltage over time, with residuals below."""
    plt = _pyplot()
    fig, (ax_v, ax_r) = plt.subplots(2, 1, sharex=True, figsize=(7, 5),
                                     gridspec_kw={"height_ratios": [2, 1]})
    try:
        ax_v.plot(report.time, report.v_true, "k-", lw=1.0, label="truth")
        ax_v.plot(report.time, report.v_phy, "--", lw=1.0, label="physics")
        ax_v.plot(report.time, report.v_hybrid, "-", lw=1.0, label="hybrid")
        ax_v.set_ylabel("voltage [V]")
        ax_v.set_title(report.label)
        ax_v.legend(loc="best")
        ax_r.plot(report.time, 1e3 * report.residual_phy, "--", lw=0.8, label="physics")
        ax_r.plot(report.time, 1e3 * report.residual_hybrid, "-", lw=0.8, label="hybrid")
        ax_r.set_xlabel("time [s]")
        ax_r.set_ylabel("error [mV]")
        fig.tight_layout()
        _save(fig, path)
    finally:
        plt.close(fig)


def plot_rmse_vs_soh(sohs: Sequence[float], rmse_phy_mv: Sequence[float],
                     rmse_hybrid_mv: Sequence[float], path) -> None:
    """Grouped bars of RMSE per SoH level."""
    import numpy as np

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        x = np.arange(len(sohs))
        ax.bar(x - 0.2, rmse_phy_mv, 0.4, label="physics")
        ax.bar(x + 0.2, rmse_hybrid_mv, 0.4, label="hybrid")
        ax.set_xticks(x)
        ax.set_xticklabels([f"{100 * s:.0f}%" for s in sohs])
        ax.set_xlabel("SoH")
        ax.set_ylabel("RMSE [mV]")
        ax.legend(loc="best")
        fig.tight_layout()
        _save(fig, path)
    finally:
        plt.close(fig)

"""Render the five standard figures from simulation/analysis CSV files.

Each renderer reads only the documented CSV columns, validates them up front
(a missing column is reported by name), draws on a fresh Figure, and writes
a warning annotation instead of failing when a series is empty, so batch
rendering always yields an image. No pyplot state is used; figures are
constructed directly and are safe to build in parallel.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
from matplotlib.figure import Figure

# scaled time -> microseconds at the conventional Rabi frequency 1e10 Hz
TAU_TO_US = 1e-4
# recoil momentum -> m/s for the cesium D2 line (hbar k / m)
MPS_PER_P = 3.523e-3

EVENTS_COLUMNS = ("kind", "tau", "x", "p", "u", "v", "z", "recoil", "H")
DIFFUSION_COLUMNS = ("H_center", "D_hat", "C_hat", "n", "D_analytic")
PDF_COLUMNS = ("T_center", "density", "alpha", "alpha_stderr",
               "fit_lo", "fit_hi")
SWEEP_COLUMNS = ("delta", "mean_T_us", "alpha", "alpha_stderr", "n_flights")


class SchemaError(ValueError):
    """An input CSV does not carry the documented columns."""


def read_table(path, required) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"{path}: file not found")
    df = pd.read_csv(path, na_values=[""], keep_default_na=True)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s): {', '.join(missing)}")
    return df


def _warn_empty(ax, message: str) -> None:
    ax.text(0.5, 0.5, f"warning: {message}", transform=ax.transAxes,
            ha="center", va="center", color="crimson", fontsize=9)


def _series_label(path, labels, i) -> str:
    if labels is not None and i < len(labels):
        return labels[i]
    return Path(path).stem


def _finish(fig: Figure, out):
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, dpi=150)
    return fig


def energy_trace(events_paths, out=None, labels=None,
                 tau_to_us: float = TAU_TO_US) -> Figure:
    """fig1: energy H and dipole u against time in microseconds."""
    fig = Figure(figsize=(7.0, 4.0))
    ax = fig.add_subplot(111)
    for i, path in enumerate(events_paths):
        df = read_table(path, EVENTS_COLUMNS)
        sm = df[df["kind"] == "sample"]
        name = _series_label(path, labels, i)
        if sm.empty:
            _warn_empty(ax, f"no state samples in {Path(path).name}")
            continue
        t = sm["tau"].to_numpy(float) * tau_to_us
        ax.plot(t, sm["H"].to_numpy(float), lw=0.9, label=f"H ({name})")
        ax.plot(t, sm["u"].to_numpy(float), lw=0.6, alpha=0.7,
                label=f"u ({name})")
    ax.set_xlabel("t (us)")
    ax.set_ylabel("H, u")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8, loc="best")
    return _finish(fig, out)


def diffusion_comparison(diffusion_paths, out=None, labels=None) -> Figure:
    """fig2: measured energy diffusion D(H) next to the analytic curve."""
    fig = Figure(figsize=(6.0, 4.2))
    ax = fig.add_subplot(111)
    markers = "o*sd^v"
    for i, path in enumerate(diffusion_paths):
        df = read_table(path, DIFFUSION_COLUMNS)
        name = _series_label(path, labels, i)
        if df.empty:
            _warn_empty(ax, f"no diffusion bins in {Path(path).name}")
            continue
        h = df["H_center"].to_numpy(float)
        ax.scatter(h, df["D_hat"].to_numpy(float), s=28,
                   marker=markers[i % len(markers)],
                   label=f"measured ({name})")
        ax.plot(h, df["D_analytic"].to_numpy(float), lw=1.2,
                label=f"analytic ({name})")
    ax.set_yscale("log")
    ax.set_xlabel("H")
    ax.set_ylabel("D(H)")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8, loc="best")
    return _finish(fig, out)


def flight_pdfs(pdf_paths, out=None, labels=None) -> Figure:
    """fig3: log-log flight-duration PDFs with the fitted slope lines."""
    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot(111)
    for i, path in enumerate(pdf_paths):
        df = read_table(path, PDF_COLUMNS)
        name = _series_label(path, labels, i)
        pos = df[df["density"] > 0]
        if pos.empty:
            _warn_empty(ax, f"empty PDF in {Path(path).name}")
            continue
        t = pos["T_center"].to_numpy(float)
        d = pos["density"].to_numpy(float)
        ax.plot(t, d, "o", ms=3.5, label=name)
        alpha = float(df["alpha"].iloc[0])
        lo, hi = float(df["fit_lo"].iloc[0]), float(df["fit_hi"].iloc[0])
        if np.isfinite(alpha) and np.isfinite(lo) and np.isfinite(hi) \
                and lo > 0:
            sel = (t >= lo) & (t <= hi)
            if sel.any():
                # anchor the guide line through the fitted bins
                log_a = np.mean(np.log(d[sel]) - alpha * np.log(t[sel]))
                tt = np.geomspace(lo, hi, 50)
                ax.plot(tt, np.exp(log_a) * tt ** alpha, "--", lw=1.2)
                ax.text(tt[len(tt) // 2],
                        np.exp(log_a) * tt[len(tt) // 2] ** alpha * 1.8,
                        f"slope {alpha:.3f}", fontsize=8, ha="left")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("T")
    ax.set_ylabel("PDF")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8, loc="best")
    return _finish(fig, out)


def velocity_traces(events_paths, out=None, labels=None,
                    tau_to_us: float = TAU_TO_US,
                    mps_per_p: float = MPS_PER_P) -> Figure:
    """fig4: velocity in m/s against time in microseconds."""
    fig = Figure(figsize=(7.0, 4.0))
    ax = fig.add_subplot(111)
    for i, path in enumerate(events_paths):
        df = read_table(path, EVENTS_COLUMNS)
        sm = df[df["kind"] == "sample"]
        name = _series_label(path, labels, i)
        if sm.empty:
            _warn_empty(ax, f"no state samples in {Path(path).name}")
            continue
        ax.plot(sm["tau"].to_numpy(float) * tau_to_us,
                sm["p"].to_numpy(float) * mps_per_p, lw=0.9, label=name)
    ax.axhline(0.0, color="0.6", lw=0.6)
    ax.set_xlabel("t (us)")
    ax.set_ylabel("v (m/s)")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8, loc="best")
    return _finish(fig, out)


def sweep_curves(sweep_path, out=None) -> Figure:
    """fig5: mean flight time (log scale) and slope alpha against detuning."""
    df = read_table(sweep_path, SWEEP_COLUMNS)
    fig = Figure(figsize=(6.0, 4.2))
    ax_t = fig.add_subplot(111)
    ax_a = ax_t.twinx()

    tsel = df[np.isfinite(df["mean_T_us"])]
    if tsel.empty:
        _warn_empty(ax_t, f"no mean flight times in {Path(sweep_path).name}")
    else:
        ax_t.plot(tsel["delta"], tsel["mean_T_us"], "o-", color="tab:blue",
                  label="mean T")
        ax_t.set_yscale("log")
    asel = df[np.isfinite(df["alpha"])]
    if asel.empty:
        _warn_empty(ax_a, f"no slopes in {Path(sweep_path).name}")
    else:
        ax_a.errorbar(asel["delta"], asel["alpha"],
                      yerr=asel["alpha_stderr"], fmt="s--",
                      color="tab:red", label="alpha")

    ax_t.set_xlabel("delta")
    ax_t.set_ylabel("mean flight time (us)", color="tab:blue")
    ax_a.set_ylabel("alpha", color="tab:red")
    return _finish(fig, out)


RENDERERS = {
    "fig1": energy_trace,
    "fig2": diffusion_comparison,
    "fig3": flight_pdfs,
    "fig4": velocity_traces,
    "fig5": sweep_curves,
}

"""Command-line pipelines: simulate, analyze, fpe, sweep.

Configuration lives in a TOML file with flat sections mirroring the library
dataclasses; any value can be overridden on the command line with
``--set section.key=value``.  All config is in normalized units; SI shows up
only in output columns with explicit suffixes (``_us``, ``_mps``).  Every
command writes a manifest echoing the merged configuration into its output
directory, so a run can be reproduced from its outputs alone.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import __version__, io
from .dynamics import LatticeParams
from .ensemble import (EnsembleConfig, InitialConditions, load_logs,
                       run_ensemble)
from .fokker_planck import (FpeGrid, analytic_diffusion, analytic_drift,
                            first_passage_pdf, flight_pdf_model,
                            gaussian_check, point_density, solve_fpe)
from .observables import to_si
from .stats import (collect_flights, detuning_sweep, estimate_diffusion,
                    fit_power_law_slope, log_binned_pdf)

OUTDIR_ENV = "LATTICEMC_OUTDIR"

DEFAULTS = {
    "params": {
        "delta": -0.001,
        "gamma": 3.3e-3,
        "omega_r": 1e-5,
        "rabi_hz": 1e10,
        "wavelength_m": 852.1e-9,
        "atom_mass_kg": 2.2069465e-25,
    },
    "initial": {
        "x0": None,            # absent/None: uniform over one lattice period
        "p0": 0.0,
        "p0_half_width": 50.0,
    },
    "ensemble": {
        "n_trajectories": 4,
        "tau_end": 1e5,
        "master_seed": 1,
        "dtau": 0.01,
        "sample_stride": 0,
        "record_se": True,
        "record_sign_changes": True,
    },
    "stats": {
        "bins_per_decade": 10,
        "min_count": 100,
        "fit_lo": 0.0,         # 0: auto-select the fit window
        "fit_hi": 0.0,
        "h_min": 0.0,
        "h_max": 3.0,
        "n_h_bins": 12,
    },
    "fpe": {
        "coefficients": "analytic",   # analytic | constant | empirical
        "c": 0.0,                     # used when coefficients = constant
        "d": 0.0,
        "empirical_path": "",
        "form": "conservative",
        "h_min": 0.0,
        "h_max": 10.0,
        "n_cells": 2000,
        "dtau": 0.0,                  # 0: auto
        "tau_span": 1e5,
        "n_store": 5,
        "h0": 0.01,
        "tau_max": 1e6,
    },
    "sweep": {
        "deltas": [],
        "min_flights": 1000,
    },
}


class ConfigError(Exception):
    pass


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def load_config(path: str | None, sets: list[str]) -> dict:
    """Merge defaults, an optional TOML file, and --set overrides."""
    cfg = {sec: dict(vals) for sec, vals in DEFAULTS.items()}

    def apply(section: str, key: str, value, where: str):
        if section not in cfg:
            raise ConfigError(f"{where}: unknown section {section!r}")
        if key not in cfg[section]:
            raise ConfigError(f"{where}: unknown key {section}.{key}")
        default = DEFAULTS[section][key]
        if default is not None and not isinstance(value, type(default)) \
                and not (isinstance(default, float)
                         and isinstance(value, int)):
            raise ConfigError(f"{where}: {section}.{key} expects "
                              f"{type(default).__name__}, got {value!r}")
        cfg[section][key] = value

    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
        for section, vals in data.items():
            if not isinstance(vals, dict):
                raise ConfigError(f"{path}: top-level key {section!r} must "
                                  f"be a section")
            for key, value in vals.items():
                apply(section, key, value, str(path))
    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, "
                              f"got {item!r}")
        dotted, text = item.split("=", 1)
        section, key = dotted.split(".", 1)
        apply(section, key, _coerce(text), f"--set {item}")
    return cfg


def build_ensemble_config(cfg: dict) -> EnsembleConfig:
    params = LatticeParams(**cfg["params"])
    initial = InitialConditions(**cfg["initial"])
    e = cfg["ensemble"]
    return EnsembleConfig(n_trajectories=e["n_trajectories"],
                          tau_end=e["tau_end"],
                          master_seed=e["master_seed"],
                          params=params, initial=initial, dtau=e["dtau"],
                          sample_stride=e["sample_stride"],
                          record_se=e["record_se"],
                          record_sign_changes=e["record_sign_changes"])


def resolve_outdir(arg: str | None) -> Path:
    out = arg or os.environ.get(OUTDIR_ENV)
    if not out:
        raise ConfigError(f"no output directory: pass --out or set "
                          f"{OUTDIR_ENV}")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_cli_manifest(outdir: Path, command: str, cfg: dict,
                       options: dict) -> None:
    io.write_manifest(outdir / f"{command}_manifest.json", {
        "command": command,
        "version": __version__,
        "config": cfg,
        "options": options,
    })


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.set)
    outdir = resolve_outdir(args.out)
    ecfg = build_ensemble_config(cfg)
    try:
        result = run_ensemble(ecfg, outdir=outdir, workers=args.workers)
    except Exception as exc:
        (outdir / "INCOMPLETE").write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    write_cli_manifest(outdir, "simulate", cfg, {"workers": args.workers})
    t = result.manifest["totals"]
    print(f"trajectories: {ecfg.n_trajectories}")
    print(f"se_events: {t['se_events']}")
    print(f"sign_changes: {t['sign_changes']}")
    print(f"flights: {t['flights']}")
    print(f"aborted: {result.manifest['n_aborted']}")
    print(f"outdir: {outdir}")
    return 0


def cmd_analyze(args) -> int:
    cfg = load_config(args.config, args.set)
    events_dir = Path(args.events_dir)
    if not (events_dir / "manifest.json").is_file():
        raise ConfigError(f"no manifest.json in {events_dir}")
    manifest, logs = load_logs(events_dir)
    for entry, log in zip(manifest["trajectories"], logs):
        if entry["n_se"] != log.se_events.size:
            raise RuntimeError(
                f"manifest/events mismatch for trajectory {entry['id']}: "
                f"{entry['n_se']} se events listed, "
                f"{log.se_events.size} found")
    outdir = Path(args.out) if args.out else events_dir
    outdir.mkdir(parents=True, exist_ok=True)
    s = cfg["stats"]
    params = LatticeParams(**manifest["config"]["params"])

    flights, n_censored = collect_flights(logs)
    rows = [(f.trajectory_id, f.t_start, f.t_end, f.duration,
             to_si(f.duration, "time", params).value * 1e6)
            for f in flights]
    io.write_csv(outdir / "flights.csv", "trajectory_id,t_start,t_end,T,T_us",
                 [np.array([r[i] for r in rows],
                           dtype=(int if i == 0 else float))
                  for i in range(5)])

    if not flights:
        print("warning: no completed flights; writing empty outputs")
        io.write_csv(outdir / "pdf.csv",
                     "T_center,density,alpha,alpha_stderr,fit_lo,fit_hi",
                     [np.empty(0)] * 6)
        io.write_csv(outdir / "diffusion.csv",
                     "H_center,D_hat,C_hat,n,D_analytic", [np.empty(0)] * 5)
        write_cli_manifest(outdir, "analyze", cfg,
                           {"events_dir": str(events_dir)})
        return 0

    durations = np.array([f.duration for f in flights])
    hist = log_binned_pdf(durations, s["bins_per_decade"])
    fit_range = None
    if s["fit_lo"] > 0 and s["fit_hi"] > 0:
        fit_range = (s["fit_lo"], s["fit_hi"])
    try:
        hist = fit_power_law_slope(hist, fit_range)
    except ValueError as exc:
        print(f"warning: slope fit skipped: {exc}")
    n = hist.centers.size
    lo, hi = hist.fit_range if hist.fit_range else (math.nan, math.nan)
    io.write_csv(outdir / "pdf.csv",
                 "T_center,density,alpha,alpha_stderr,fit_lo,fit_hi",
                 [hist.centers, hist.density,
                  np.full(n, hist.alpha), np.full(n, hist.alpha_stderr),
                  np.full(n, lo), np.full(n, hi)])

    h_edges = np.linspace(s["h_min"], s["h_max"], s["n_h_bins"] + 1)
    bins, dropped = estimate_diffusion(logs, h_edges, s["min_count"])
    io.write_csv(outdir / "diffusion.csv",
                 "H_center,D_hat,C_hat,n,D_analytic",
                 [np.array([b.h_center for b in bins]),
                  np.array([b.d_hat for b in bins]),
                  np.array([b.c_hat for b in bins]),
                  np.array([b.n_events for b in bins], dtype=int),
                  analytic_diffusion(np.array([b.h_center for b in bins]),
                                     params)])

    mean_t = float(durations.mean())
    mean_us = to_si(mean_t, "time", params).value * 1e6
    frac = n_censored / (len(flights) + n_censored)
    print(f"flights: {len(flights)}  censored_fraction: {frac:.4f}")
    print(f"mean_T: {mean_t:.6g}  mean_T_us: {mean_us:.6g}  "
          f"median_T: {float(np.median(durations)):.6g}")
    print(f"alpha: {hist.alpha:.4f} +- {hist.alpha_stderr:.4f}  "
          f"fit_range: [{lo:.6g}, {hi:.6g}]")
    print("H_center  D_hat  C_hat  n  D_analytic")
    for b in bins:
        print(f"{b.h_center:.4g}  {b.d_hat:.6g}  {b.c_hat:.6g}  "
              f"{b.n_events}  "
              f"{float(analytic_diffusion(b.h_center, params)):.6g}")
    if dropped:
        print(f"dropped {len(dropped)} undersized H bins: "
              + ", ".join(f"{h:.3g} (n={k})" for h, k in dropped))
    write_cli_manifest(outdir, "analyze", cfg,
                       {"events_dir": str(events_dir)})
    return 0


def _load_empirical(path: str):
    import pandas as pd
    df = pd.read_csv(path, float_precision="round_trip")
    for col in ("H_center", "D_hat", "C_hat"):
        if col not in df.columns:
            raise ConfigError(f"{path}: missing column {col}")
    h = df["H_center"].to_numpy(dtype=float)
    d = df["D_hat"].to_numpy(dtype=float)
    c_col = df["C_hat"].to_numpy(dtype=float)
    n = df["n"].to_numpy(dtype=float) if "n" in df.columns \
        else np.ones_like(h)
    c = float(np.average(c_col, weights=n))
    return c, (lambda hh: np.interp(hh, h, d))


def _fpe_coefficients(cfg: dict, args):
    """Resolve (c, d, d_scalar_at_h0) for the fpe command."""
    f = cfg["fpe"]
    params = LatticeParams(**cfg["params"])
    mode = f["coefficients"]
    if args.c is not None or args.D is not None:
        if args.c is None or args.D is None:
            raise ConfigError("--c and --D must be given together")
        return args.c, args.D, args.D
    if mode == "constant":
        return f["c"], f["d"], f["d"]
    if mode == "empirical":
        if not f["empirical_path"]:
            raise ConfigError("fpe.coefficients = empirical needs "
                              "fpe.empirical_path")
        c, d_fn = _load_empirical(f["empirical_path"])
        return c, d_fn, float(d_fn(f["h0"]))
    if mode == "analytic":
        c = analytic_drift(params)
        d_fn = lambda h: analytic_diffusion(h, params)  # noqa: E731
        return c, d_fn, float(analytic_diffusion(f["h0"], params))
    raise ConfigError(f"fpe.coefficients must be analytic, constant or "
                      f"empirical, got {mode!r}")


def cmd_fpe(args) -> int:
    cfg = load_config(args.config, args.set)
    f = dict(cfg["fpe"])
    if args.h0 is not None:
        f["h0"] = args.h0
        cfg["fpe"]["h0"] = args.h0
    outdir = resolve_outdir(args.out)

    if args.mode == "gaussian-check":
        c, d, d0 = _fpe_coefficients(cfg, args)
        d_const = d0 if callable(d) else d
        res = gaussian_check(c=c, d=d_const)
        for key, val in res.items():
            print(f"{key}: {val:.6e}")
        write_cli_manifest(outdir, "fpe", cfg,
                           {"mode": "gaussian-check", "c": c, "d": d_const})
        if not res["l2_error"] < 1e-3:
            print("gaussian check FAILED: L2 error not below 1e-3",
                  file=sys.stderr)
            return 1
        return 0

    c, d, d0 = _fpe_coefficients(cfg, args)
    dtau = f["dtau"] if f["dtau"] > 0 else None
    if args.fpt:
        # first-passage runs use constant coefficients evaluated at the
        # starting energy; the walk stays near H=0 where D barely varies
        fp = first_passage_pdf(f["h0"], c, d0, tau_max=f["tau_max"],
                               n_cells=f["n_cells"], dtau=dtau)
        io.write_csv(outdir / "fpt.csv", "T,density", [fp.T, fp.density])
        print(f"absorbed: {fp.absorbed:.6f}  remainder: {fp.remainder:.6f}")
        if fp.warn_remainder:
            print("warning: more than half the mass never reached H=0 "
                  "by tau_max", file=sys.stderr)
        print(f"wrote {outdir / 'fpt.csv'}")
        write_cli_manifest(outdir, "fpe", cfg,
                           {"mode": "fpt", "c": c, "d": d0})
        return 0

    grid = FpeGrid(h_min=f["h_min"], h_max=f["h_max"], n_cells=f["n_cells"],
                   left=args.left, right=args.right)
    p0 = point_density(grid, f["h0"])
    sol = solve_fpe(p0, grid, f["tau_span"], c, d, dtau=dtau,
                    form=f["form"], n_store=f["n_store"])
    taus = np.repeat(sol.taus, grid.n_cells)
    centers = np.tile(grid.centers, sol.taus.size)
    io.write_csv(outdir / "fpe.csv", "tau,H_center,density",
                 [taus, centers, sol.frames.ravel()])
    print(f"frames: {sol.taus.size}  final mass: {sol.mass[-1]:.6f}")
    print(f"wrote {outdir / 'fpe.csv'}")
    write_cli_manifest(outdir, "fpe", cfg, {"mode": "evolve", "c": c})
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.deltas:
        deltas = [float(x) for x in args.deltas.split(",") if x.strip()]
    else:
        deltas = list(cfg["sweep"]["deltas"])
    if len(deltas) < 2:
        raise ConfigError(f"sweep needs >= 2 detuning points, "
                          f"got {len(deltas)}")
    outdir = resolve_outdir(args.out)
    base = build_ensemble_config(cfg)
    points = detuning_sweep(deltas, base, workers=args.workers,
                            min_flights=cfg["sweep"]["min_flights"],
                            bins_per_decade=cfg["stats"]["bins_per_decade"])
    io.write_csv(outdir / "sweep.csv",
                 "delta,mean_T_us,alpha,alpha_stderr,n_flights",
                 [np.array([p.delta for p in points]),
                  np.array([p.mean_T_us for p in points]),
                  np.array([p.alpha for p in points]),
                  np.array([p.alpha_stderr for p in points]),
                  np.array([p.n_flights for p in points], dtype=int)])
    failures = 0
    for p in points:
        if p.error is None:
            print(f"delta={p.delta:g}  mean_T_us={p.mean_T_us:.6g}  "
                  f"alpha={p.alpha:.4f}+-{p.alpha_stderr:.4f}  "
                  f"n_flights={p.n_flights}")
        else:
            failures += 1
            print(f"delta={p.delta:g}  FAILED: {p.error}")
    print(f"wrote {outdir / 'sweep.csv'}")
    write_cli_manifest(outdir, "sweep", cfg,
                       {"deltas": deltas, "workers": args.workers})
    return 1 if failures == len(points) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latticemc",
        description="Monte Carlo lattice-atom transport simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--set", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override one config value")
        p.add_argument("--out", help=f"output directory "
                                     f"(default: ${OUTDIR_ENV})")

    p = sub.add_parser("simulate", help="run a trajectory ensemble")
    common(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="extract flights, PDFs and D(H) "
                                       "from an events directory")
    p.add_argument("events_dir")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fpe", help="energy-space drift-diffusion solver")
    common(p)
    p.add_argument("--mode", choices=["evolve", "gaussian-check"],
                   default="evolve")
    p.add_argument("--fpt", action="store_true",
                   help="first-passage density to H=0 instead of evolution")
    p.add_argument("--c", type=float, default=None,
                   help="constant drift coefficient (with --D)")
    p.add_argument("--D", type=float, default=None,
                   help="constant diffusion coefficient (with --c)")
    p.add_argument("--h0", type=float, default=None,
                   help="initial energy (point source)")
    p.add_argument("--left", choices=["reflecting", "absorbing"],
                   default="reflecting", help="evolve-mode left boundary")
    p.add_argument("--right", choices=["reflecting", "absorbing"],
                   default="reflecting", help="evolve-mode right boundary")
    p.set_defaults(func=cmd_fpe)

    p = sub.add_parser("sweep", help="simulate+analyze across detunings")
    common(p)
    p.add_argument("--deltas", help="comma-separated detuning list")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Seeded ensembles of independent trajectories.

Each trajectory gets its own counter-based RNG keyed by (master seed,
trajectory id), so the ensemble output is a pure function of its config:
re-runs are byte-identical, trajectories can run in any order or in parallel,
and any single trajectory can be reproduced in isolation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from math import pi
from pathlib import Path

import numpy as np

from . import io
from .dynamics import (
    MAX_DTAU,
    SAMPLE_DTYPE,
    SE_DTYPE,
    AtomState,
    EventSink,
    LatticeParams,
    MemorySink,
    TrajectoryAborted,
    evolve,
)

MANIFEST_NAME = "manifest.json"


def derive_stream(master_seed: int, trajectory_id: int) -> np.random.Generator:
    """Independent generator for one trajectory of a seeded ensemble.

    Uses a counter-based bit generator keyed by the two ids, so streams for
    different trajectory ids never overlap and need no sequential spawning.
    """
    if not 0 <= master_seed < 2 ** 64:
        raise ValueError(f"master_seed must fit in uint64, got {master_seed}")
    if not 0 <= trajectory_id < 2 ** 64:
        raise ValueError(f"trajectory_id must fit in uint64, "
                         f"got {trajectory_id}")
    key = np.array([master_seed, trajectory_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class InitialConditions:
    """How each trajectory's starting state is drawn.

    Position: fixed at ``x0`` when given, else uniform over one lattice
    period [0, 2*pi).  Momentum: uniform on ``p0 +- p0_half_width`` (a zero
    half-width means fixed at ``p0``).  The internal state always starts in
    the ground state, (u, v, z) = (0, 0, -1).  Draw order is x then p; fixed
    values consume no draws.
    """

    x0: float | None = None
    p0: float = 0.0
    p0_half_width: float = 0.0

    def __post_init__(self):
        if self.p0_half_width < 0:
            raise ValueError(f"p0_half_width must be >= 0, "
                             f"got {self.p0_half_width}")

    def draw(self, rng: np.random.Generator) -> AtomState:
        x = self.x0 if self.x0 is not None else rng.uniform(0.0, 2.0 * pi)
        p = self.p0
        if self.p0_half_width > 0:
            p += rng.uniform(-self.p0_half_width, self.p0_half_width)
        return AtomState(x=float(x), p=float(p))


@dataclass(frozen=True)
class EnsembleConfig:
    """Full description of a run; everything the output depends on."""

    n_trajectories: int
    tau_end: float
    master_seed: int
    params: LatticeParams = field(default_factory=LatticeParams)
    initial: InitialConditions = field(default_factory=InitialConditions)
    dtau: float = 0.01
    sample_stride: int = 0     # 0 disables state sampling
    record_se: bool = True
    record_sign_changes: bool = True

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError(f"n_trajectories must be >= 1, "
                             f"got {self.n_trajectories}")
        if not self.tau_end > 0:
            raise ValueError(f"tau_end must be > 0, got {self.tau_end}")
        if not 0.0 < self.dtau <= MAX_DTAU:
            raise ValueError(f"dtau must be in (0, {MAX_DTAU}], "
                             f"got {self.dtau}")
        if self.sample_stride < 0:
            raise ValueError(f"sample_stride must be >= 0, "
                             f"got {self.sample_stride}")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError(f"master_seed must be in [0, 2**64), "
                             f"got {self.master_seed}")


@dataclass
class TrajectoryLog:
    """One trajectory's recorded events and outcome."""

    trajectory_id: int
    se_events: np.ndarray      # SE_DTYPE
    sign_changes: np.ndarray   # times of p sign changes
    samples: np.ndarray        # SAMPLE_DTYPE (empty unless sampling enabled)
    final_state: AtomState
    aborted: bool
    tau_reached: float


@dataclass
class EnsembleResult:
    config: EnsembleConfig
    logs: list[TrajectoryLog]
    manifest: dict
    outdir: Path | None


class _Fanout(EventSink):
    """Forwards event batches to several sinks, honouring record flags.

    Also counts forwarded rows, so reported totals do not depend on whether
    samples were retained in memory.
    """

    def __init__(self, sinks, record_se, record_sc, keep):
        self.sinks = sinks
        self.record_se = record_se
        self.record_sc = record_sc
        self.keep = keep  # (memory sink, keep_samples flag)
        self.n_se = 0
        self.n_sc = 0
        self.n_samples = 0

    def on_se(self, rows):
        if self.record_se:
            self.n_se += len(rows)
            for s in self.sinks:
                s.on_se(rows)

    def on_sign_change(self, taus):
        if self.record_sc:
            self.n_sc += len(taus)
            for s in self.sinks:
                s.on_sign_change(taus)

    def on_sample(self, rows):
        mem, keep_samples = self.keep
        self.n_samples += len(rows)
        for s in self.sinks:
            if s is mem and not keep_samples:
                continue
            s.on_sample(rows)


def _run_one(config: EnsembleConfig, tid: int, outdir: Path | None,
             keep_samples: bool) -> TrajectoryLog:
    rng = derive_stream(config.master_seed, tid)
    state = config.initial.draw(rng)
    mem = MemorySink()
    sinks = [mem]
    writer = None
    if outdir is not None:
        writer = io.CsvEventWriter(outdir / _events_name(tid))
        sinks.append(writer)
    sink = _Fanout(sinks, config.record_se, config.record_sign_changes,
                   (mem, keep_samples))
    aborted = False
    try:
        final = evolve(state, config.tau_end, config.params, rng, sink=sink,
                       dtau=config.dtau, sample_stride=config.sample_stride)
    except TrajectoryAborted as exc:
        final = exc.last_good
        aborted = True
    finally:
        if writer is not None:
            writer.close()
    log = TrajectoryLog(
        trajectory_id=tid,
        se_events=mem.se_events,
        sign_changes=mem.sign_changes,
        samples=mem.samples,
        final_state=final,
        aborted=aborted,
        tau_reached=final.tau,
    )
    counts = {"n_se": sink.n_se, "n_sign_changes": sink.n_sc,
              "n_samples": sink.n_samples}
    return log, counts


def _events_name(tid: int) -> str:
    return f"events_{tid:05d}.csv"


def _build_manifest(config: EnsembleConfig, logs: list[TrajectoryLog],
                    counts: list[dict], outdir: Path | None) -> dict:
    from . import __version__
    per_traj = []
    for log, cnt in zip(logs, counts):
        f = log.final_state
        per_traj.append({
            "id": log.trajectory_id,
            "file": _events_name(log.trajectory_id) if outdir else None,
            "aborted": log.aborted,
            "tau_reached": log.tau_reached,
            **cnt,
            "final": {"x": f.x, "p": f.p, "u": f.u, "v": f.v, "z": f.z,
                      "tau": f.tau},
        })
    totals = {
        "se_events": sum(t["n_se"] for t in per_traj),
        "sign_changes": sum(t["n_sign_changes"] for t in per_traj),
        "flights": sum(max(0, t["n_sign_changes"] - 1) for t in per_traj),
        "samples": sum(t["n_samples"] for t in per_traj),
    }
    return {
        "format": "lattice-ensemble",
        "version": __version__,
        "config": asdict(config),
        "n_aborted": sum(1 for log in logs if log.aborted),
        "totals": totals,
        "trajectories": per_traj,
    }


def run_ensemble(config: EnsembleConfig, outdir=None, workers: int = 1,
                 keep_samples: bool | None = None) -> EnsembleResult:
    """Run all trajectories, optionally writing per-trajectory event CSVs.

    ``workers`` > 1 runs trajectories on a thread pool (the integration
    kernel releases the GIL); results are identical to a serial run because
    every trajectory owns an independent RNG stream and its own output file.
    ``keep_samples`` controls whether decimated state samples are retained in
    memory; by default they are kept only when nothing is written to disk.
    Aborted trajectories are kept, flagged, with events up to the failure.
    """
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
    if keep_samples is None:
        keep_samples = outdir is None
    workers = max(1, int(workers))

    ids = range(config.n_trajectories)
    if workers == 1:
        results = [_run_one(config, tid, outdir, keep_samples) for tid in ids]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda tid: _run_one(config, tid, outdir, keep_samples), ids))

    logs = [r[0] for r in results]
    manifest = _build_manifest(config, logs, [r[1] for r in results], outdir)
    if outdir is not None:
        io.write_manifest(outdir / MANIFEST_NAME, manifest)
    return EnsembleResult(config=config, logs=logs, manifest=manifest,
                          outdir=outdir)


def load_logs(outdir) -> tuple[dict, list[TrajectoryLog]]:
    """Rebuild trajectory logs from a run directory written by run_ensemble."""
    outdir = Path(outdir)
    manifest = io.read_manifest(outdir / MANIFEST_NAME)
    logs = []
    for entry in manifest["trajectories"]:
        if entry["file"] is None:
            raise ValueError("manifest records no event files for this run")
        se, sc, samples = io.read_events(outdir / entry["file"])
        fin = entry["final"]
        logs.append(TrajectoryLog(
            trajectory_id=entry["id"],
            se_events=se,
            sign_changes=sc,
            samples=samples,
            final_state=AtomState(**fin),
            aborted=entry["aborted"],
            tau_reached=entry["tau_reached"],
        ))
    return manifest, logs

"""File formats: per-trajectory event CSVs, run manifests, analysis CSVs.

Events files carry three row kinds in one CSV so a trajectory stays a single
ordered stream: ``se`` rows hold the pre-jump state with the recoil and the
post-jump energy, ``signchange`` rows only a time, ``sample`` rows a decimated
state with its energy.  Floats are written with repr (shortest round-trip),
'.' decimal, no locale anywhere, which makes seeded runs byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .dynamics import SAMPLE_DTYPE, SE_DTYPE, EventSink

EVENTS_HEADER = "kind,tau,x,p,u,v,z,recoil,H"


def _fmt(v: float) -> str:
    return repr(float(v))


class CsvEventWriter(EventSink):
    """Streams trajectory events to one CSV file."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(EVENTS_HEADER + "\n")

    def on_se(self, rows):
        out = []
        for r in rows:
            out.append(f"se,{_fmt(r['tau'])},{_fmt(r['x'])},{_fmt(r['p'])},"
                       f"{_fmt(r['u'])},{_fmt(r['v'])},{_fmt(r['z'])},"
                       f"{_fmt(r['recoil'])},{_fmt(r['h_post'])}")
        self._fh.write("\n".join(out) + "\n")

    def on_sign_change(self, taus):
        out = [f"signchange,{_fmt(t)},,,,,,," for t in taus]
        self._fh.write("\n".join(out) + "\n")

    def on_sample(self, rows):
        out = []
        for r in rows:
            out.append(f"sample,{_fmt(r['tau'])},{_fmt(r['x'])},"
                       f"{_fmt(r['p'])},{_fmt(r['u'])},{_fmt(r['v'])},"
                       f"{_fmt(r['z'])},,{_fmt(r['h'])}")
        self._fh.write("\n".join(out) + "\n")

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_events(path, tau_start: float = 0.0):
    """Load one events CSV back into (se, sign_changes, samples) arrays.

    ``se`` rows are SE_DTYPE with the inter-jump intervals reconstructed from
    consecutive event times (the first one measured from ``tau_start``).
    """
    df = pd.read_csv(path, dtype={"kind": str}, na_values=[""],
                     keep_default_na=False, float_precision="round_trip")
    missing = [c for c in EVENTS_HEADER.split(",") if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing events columns {missing}")

    se_rows = df[df["kind"] == "se"]
    se = np.empty(len(se_rows), dtype=SE_DTYPE)
    for col in ("tau", "x", "p", "u", "v", "z", "recoil"):
        se[col] = se_rows[col].to_numpy(dtype=float)
    se["h_post"] = se_rows["H"].to_numpy(dtype=float)
    prev = np.concatenate([[tau_start], se["tau"][:-1]])
    se["interval"] = se["tau"] - prev

    sc = df.loc[df["kind"] == "signchange", "tau"].to_numpy(dtype=float)

    sm_rows = df[df["kind"] == "sample"]
    samples = np.empty(len(sm_rows), dtype=SAMPLE_DTYPE)
    for col in ("tau", "x", "p", "u", "v", "z"):
        samples[col] = sm_rows[col].to_numpy(dtype=float)
    samples["h"] = sm_rows["H"].to_numpy(dtype=float)
    return se, sc, samples


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True)
                          + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def write_csv(path, header: str, columns) -> None:
    """Write an analysis CSV: header string plus repr-formatted columns."""
    cols = [np.asarray(c) for c in columns]
    n = cols[0].size if cols else 0
    lines = [header]
    for i in range(n):
        lines.append(",".join(_fmt(c[i]) if np.issubdtype(c.dtype, np.floating)
                              else str(c[i]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")

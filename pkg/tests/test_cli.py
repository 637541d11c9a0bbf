"""Command-line pipelines: config merging, exit codes, output files."""

import hashlib
import json
import math

import numpy as np
import pytest

from latticemc import cli
from latticemc.cli import ConfigError, load_config, main
from latticemc.stats import SweepPoint

from conftest import make_log
from test_stats import sample_power_law


def read_table(path):
    lines = path.read_text().splitlines()
    cols = lines[0].split(",")
    rows = [l.split(",") for l in lines[1:]]
    return cols, rows


def test_load_config_defaults():
    cfg = load_config(None, [])
    assert cfg["params"]["delta"] == -0.001
    assert cfg["ensemble"]["n_trajectories"] == 4
    assert cfg["fpe"]["coefficients"] == "analytic"


def test_load_config_file_and_overrides(tmp_path):
    f = tmp_path / "run.toml"
    f.write_text("[params]\ndelta = -0.1\n[ensemble]\nn_trajectories = 7\n")
    cfg = load_config(str(f), ["params.delta=-0.05",
                               "ensemble.record_se=false"])
    assert cfg["params"]["delta"] == -0.05      # --set beats the file
    assert cfg["ensemble"]["n_trajectories"] == 7
    assert cfg["ensemble"]["record_se"] is False


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "nope.toml"), [])
    f = tmp_path / "bad.toml"
    f.write_text("[nosuch]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(str(f), [])
    f.write_text("[params]\nnosuch = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(str(f), [])
    f.write_text("[params]\ndelta = \"x\"\n")
    with pytest.raises(ConfigError, match="expects float"):
        load_config(str(f), [])
    with pytest.raises(ConfigError, match="section.key"):
        load_config(None, ["delta=-0.1"])
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(None, ["params.wrong=1"])


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--config", "missing.toml",
                 "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["sweep", "--deltas", "-0.1", "--out", str(tmp_path)]) == 2
    assert main(["fpe", "--fpt", "--c", "1.0",
                 "--out", str(tmp_path)]) == 2   # --c without --D


def test_outdir_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUTDIR_ENV, str(tmp_path / "envout"))
    rc = main(["simulate", "--set", "ensemble.n_trajectories=1",
               "--set", "ensemble.tau_end=500.0",
               "--set", "ensemble.dtau=0.02"])
    assert rc == 0
    assert (tmp_path / "envout" / "manifest.json").exists()
    monkeypatch.delenv(cli.OUTDIR_ENV)
    assert main(["simulate"]) == 2   # nowhere to write


SIM_ARGS = ["--set", "ensemble.n_trajectories=2",
            "--set", "ensemble.tau_end=3000.0",
            "--set", "ensemble.dtau=0.02",
            "--set", "initial.p0=550.0",
            "--set", "initial.p0_half_width=100.0"]


def dir_digest(d):
    out = {}
    for f in sorted(d.iterdir()):
        if f.is_file():
            out[f.name] = hashlib.sha256(f.read_bytes()).hexdigest()
    return out


def test_simulate_is_byte_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", *SIM_ARGS, "--out", str(a)]) == 0
    text = capsys.readouterr().out
    assert "se_events:" in text and "trajectories: 2" in text
    assert main(["simulate", *SIM_ARGS, "--out", str(b), "--workers",
                 "2"]) == 0
    da, db = dir_digest(a), dir_digest(b)
    assert set(da) == {"events_00000.csv", "events_00001.csv",
                       "manifest.json", "simulate_manifest.json"}
    for name in ("events_00000.csv", "events_00001.csv", "manifest.json"):
        assert da[name] == db[name], name


GOLDEN_EVENTS_SHA256 = \
    "fdff4b17c453f799f791f6f4cd57ebbb7dbcd2e5798a20dabd7894eef9991444"


def test_simulate_golden_digest(tmp_path):
    """Regression pin: one seeded trajectory must reproduce to the byte."""
    out = tmp_path / "golden"
    rc = main(["simulate", "--set", "ensemble.n_trajectories=1",
               "--set", "ensemble.tau_end=20000.0",
               "--set", "ensemble.dtau=0.02",
               "--set", "ensemble.master_seed=1",
               "--set", "ensemble.sample_stride=5000",
               "--set", "initial.x0=1.0",
               "--set", "initial.p0=550.0",
               "--set", "initial.p0_half_width=0.0",
               "--out", str(out)])
    assert rc == 0
    digest = hashlib.sha256((out / "events_00000.csv").read_bytes())
    assert digest.hexdigest() == GOLDEN_EVENTS_SHA256


def synthetic_events_dir(tmp_path):
    """An events directory the analyze command can digest, with flights
    following a known power law and an energy walk with known coefficients."""
    rng = np.random.default_rng(17)
    n_se = 4000
    dt = rng.exponential(606.0, n_se)
    dh = rng.normal(-1.6e-6 * dt, np.sqrt(4.0 * 6.5e-8 * dt))
    h_post = 1.0 + np.concatenate([[0.0], np.cumsum(dh[1:])])
    durations = sample_power_law(6000, 1.0, 1e4, rng)
    sc = np.concatenate([[1.0], 1.0 + np.cumsum(durations)])
    log = make_log(sign_changes=sc, tau_reached=float(sc[-1] + 1.0),
                   se={"h_post": h_post, "tau": np.cumsum(dt)})
    manifest = {
        "config": {"params": dict(cli.DEFAULTS["params"])},
        "trajectories": [{"id": 0, "n_se": n_se}],
    }
    events_dir = tmp_path / "events"
    events_dir.mkdir()
    (events_dir / "manifest.json").write_text("{}")   # existence gate only
    return events_dir, manifest, [log], durations


def test_analyze_pipeline(tmp_path, monkeypatch, capsys):
    events_dir, manifest, logs, durations = synthetic_events_dir(tmp_path)
    monkeypatch.setattr(cli, "load_logs", lambda d: (manifest, logs))
    out = tmp_path / "analysis"
    rc = main(["analyze", str(events_dir), "--out", str(out),
               "--set", "stats.min_count=50",
               "--set", "stats.h_min=0.0", "--set", "stats.h_max=3.0"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "flights: 6000" in text
    assert "alpha:" in text

    cols, rows = read_table(out / "flights.csv")
    assert cols == ["trajectory_id", "t_start", "t_end", "T", "T_us"]
    assert len(rows) == 6000
    t = np.array([float(r[3]) for r in rows])
    np.testing.assert_allclose(np.sort(t), np.sort(durations), rtol=1e-9)
    np.testing.assert_allclose([float(r[4]) for r in rows], t * 1e-4)

    cols, rows = read_table(out / "pdf.csv")
    assert cols == ["T_center", "density", "alpha", "alpha_stderr",
                    "fit_lo", "fit_hi"]
    alpha = {r[2] for r in rows}
    assert len(alpha) == 1                      # constant metadata column
    assert float(alpha.pop()) == pytest.approx(-1.5, abs=0.12)
    lo = float(rows[0][4])
    hi = float(rows[0][5])
    assert 1.0 <= lo < hi <= 1.1e4

    cols, rows = read_table(out / "diffusion.csv")
    assert cols == ["H_center", "D_hat", "C_hat", "n", "D_analytic"]
    assert rows                                  # the walk fills mid bins
    mid = [r for r in rows if abs(float(r[0]) - 1.125) < 0.01]
    assert mid and float(mid[0][1]) == pytest.approx(6.5e-8, rel=0.25)
    assert (out / "analyze_manifest.json").exists()


def test_analyze_detects_event_count_mismatch(tmp_path, monkeypatch,
                                              capsys):
    events_dir, manifest, logs, _ = synthetic_events_dir(tmp_path)
    manifest["trajectories"][0]["n_se"] += 1
    monkeypatch.setattr(cli, "load_logs", lambda d: (manifest, logs))
    rc = main(["analyze", str(events_dir), "--out", str(tmp_path / "x")])
    assert rc == 1
    assert "mismatch" in capsys.readouterr().err


def test_analyze_requires_manifest(tmp_path, capsys):
    rc = main(["analyze", str(tmp_path), "--out", str(tmp_path)])
    assert rc == 2
    assert "manifest" in capsys.readouterr().err


def test_analyze_handles_no_flights(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--set", "ensemble.n_trajectories=1",
                 "--set", "ensemble.tau_end=2000.0",
                 "--set", "ensemble.dtau=0.02",
                 "--set", "initial.p0=550.0", "--out", str(out)]) == 0
    capsys.readouterr()
    rc = main(["analyze", str(out)])
    assert rc == 0
    assert "no completed flights" in capsys.readouterr().out
    assert (out / "pdf.csv").read_text().splitlines() == [
        "T_center,density,alpha,alpha_stderr,fit_lo,fit_hi"]


def test_fpe_gaussian_check(tmp_path, capsys):
    rc = main(["fpe", "--mode", "gaussian-check", "--out", str(tmp_path)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "l2_error" in text
    m = json.loads((tmp_path / "fpe_manifest.json").read_text())
    assert m["options"]["mode"] == "gaussian-check"
    assert m["options"]["c"] == pytest.approx(-1.64725e-6)


def test_fpe_evolve_constant(tmp_path, capsys):
    rc = main(["fpe", "--out", str(tmp_path),
               "--set", "fpe.coefficients=constant",
               "--set", "fpe.c=0.0", "--set", "fpe.d=1e-3",
               "--set", "fpe.h_max=1.0", "--set", "fpe.n_cells=64",
               "--set", "fpe.tau_span=100.0", "--set", "fpe.n_store=5",
               "--set", "fpe.h0=0.5", "--left", "absorbing"])
    assert rc == 0
    cols, rows = read_table(tmp_path / "fpe.csv")
    assert cols == ["tau", "H_center", "density"]
    assert len(rows) == 5 * 64
    taus = sorted({float(r[0]) for r in rows})
    assert len(taus) == 5 and taus[0] == 0.0 and taus[-1] == 100.0
    final_mass = sum(float(r[2]) for r in rows if float(r[0]) == 100.0) \
        * (1.0 / 64.0)
    out = capsys.readouterr().out
    printed = float(out.split("final mass:")[1].split()[0])
    assert printed == pytest.approx(final_mass, abs=1e-6)
    assert final_mass < 0.9      # the absorbing wall actually drains mass


def test_fpe_first_passage(tmp_path, capsys):
    rc = main(["fpe", "--fpt", "--out", str(tmp_path),
               "--c", "-0.25", "--D", "1.0",
               "--set", "fpe.h0=1.0", "--set", "fpe.tau_max=20.0",
               "--set", "fpe.n_cells=400"])
    assert rc == 0
    cols, rows = read_table(tmp_path / "fpt.csv")
    assert cols == ["T", "density"]
    t = np.array([float(r[0]) for r in rows])
    dens = np.array([float(r[1]) for r in rows])
    assert np.sum(dens) * (t[1] - t[0]) == pytest.approx(1.0, rel=1e-6)
    m = json.loads((tmp_path / "fpe_manifest.json").read_text())
    assert m["options"] == {"mode": "fpt", "c": -0.25, "d": 1.0}


def test_fpe_empirical_coefficients(tmp_path):
    table = tmp_path / "diffusion.csv"
    table.write_text("H_center,D_hat,C_hat,n,D_analytic\n"
                     "0.5,6e-08,-2e-06,100,6.4e-08\n"
                     "1.5,7e-08,-1e-06,300,6.7e-08\n")
    rc = main(["fpe", "--fpt", "--out", str(tmp_path),
               "--set", "fpe.coefficients=empirical",
               "--set", f"fpe.empirical_path={table}",
               "--set", "fpe.h0=1.0", "--set", "fpe.tau_max=1e4",
               "--set", "fpe.n_cells=400"])
    assert rc == 0
    m = json.loads((tmp_path / "fpe_manifest.json").read_text())
    # c is the event-weighted mean of C_hat; d interpolates to h0
    assert m["options"]["c"] == pytest.approx((-2e-6 * 100 + -1e-6 * 300)
                                              / 400.0)
    assert m["options"]["d"] == pytest.approx(6.5e-8)
    rc = main(["fpe", "--fpt", "--out", str(tmp_path),
               "--set", "fpe.coefficients=empirical"])
    assert rc == 2               # empirical without a path


def canned_points():
    ok = SweepPoint(delta=-0.1, n_flights=1500, n_censored=20,
                    mean_T=5e4, median_T=2e4, mean_T_us=5.0,
                    alpha=-0.3, alpha_stderr=0.05)
    bad = SweepPoint(delta=-0.2, error="only 3 flights at delta=-0.2; "
                                       "need >= 1000", n_flights=3)
    return ok, bad


def test_sweep_outputs_and_partial_failure(tmp_path, monkeypatch, capsys):
    ok, bad = canned_points()
    monkeypatch.setattr(cli, "detuning_sweep",
                        lambda deltas, base, workers, min_flights,
                        bins_per_decade: [ok, bad])
    rc = main(["sweep", "--deltas=-0.1,-0.2", "--out", str(tmp_path)])
    assert rc == 0               # one point still succeeded
    text = capsys.readouterr().out
    assert "FAILED: only 3 flights" in text
    cols, rows = read_table(tmp_path / "sweep.csv")
    assert cols == ["delta", "mean_T_us", "alpha", "alpha_stderr",
                    "n_flights"]
    assert [float(r[0]) for r in rows] == [-0.1, -0.2]
    assert float(rows[0][1]) == 5.0
    assert math.isnan(float(rows[1][2]))
    assert rows[0][4] == "1500"


def test_sweep_all_points_failing_exits_nonzero(tmp_path, monkeypatch):
    _, bad = canned_points()
    monkeypatch.setattr(cli, "detuning_sweep",
                        lambda *a, **kw: [bad, bad])
    rc = main(["sweep", "--deltas=-0.1,-0.2", "--out", str(tmp_path)])
    assert rc == 1
    assert (tmp_path / "sweep.csv").exists()

"""Flight statistics: extraction, log-binned PDFs, power-law fits,
empirical energy diffusion/drift, capture momentum and detuning sweeps.

A flight is the interval between two successive sign changes of the
momentum.  The leading and trailing partial intervals of a finite run are
censored: they are excluded from duration statistics but reported, so the
(small) bias stays visible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import LatticeParams
from .ensemble import EnsembleConfig, TrajectoryLog, run_ensemble
from .observables import to_si

BINS_PER_DECADE = 10
FIT_MIN_BINS = 5
# bins with fewer counts are excluded from auto range selection: the
# log-density of near-empty bins is dominated by Poisson survivor bias
FIT_MIN_COUNT = 5
FIT_R2_TARGET = 0.98


@dataclass(frozen=True)
class FlightRecord:
    """One completed flight between consecutive momentum sign changes."""

    trajectory_id: int
    t_start: float
    t_end: float
    peak_abs_p: float = math.nan   # nan when no samples cover the flight

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"flight must have positive duration, got "
                             f"[{self.t_start}, {self.t_end}]")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass
class FlightSet:
    """Completed flights of one trajectory plus its censored end intervals."""

    flights: list[FlightRecord]
    censored: list[tuple[float, float]]

    @property
    def durations(self) -> np.ndarray:
        return np.array([f.duration for f in self.flights])


@dataclass(frozen=True)
class LogHistogram:
    """Geometrically binned, normalized density with optional fit metadata."""

    edges: np.ndarray      # nbins + 1, strictly increasing
    counts: np.ndarray
    density: np.ndarray    # counts / (n_total * bin width)
    n_total: int
    alpha: float = math.nan
    alpha_stderr: float = math.nan
    fit_range: tuple[float, float] | None = None

    @property
    def centers(self) -> np.ndarray:
        return np.sqrt(self.edges[:-1] * self.edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


@dataclass(frozen=True)
class DiffusionBin:
    """Empirical drift-diffusion estimates in one energy bin."""

    h_center: float
    d_hat: float
    c_hat: float
    n_events: int


def extract_flights(log: TrajectoryLog) -> FlightSet:
    """Split a trajectory into completed flights and censored end intervals.

    With no sign change the whole run is one censored interval; otherwise the
    leading and trailing partials make two censored intervals (they collapse
    to zero-length when a crossing coincides with a run endpoint).
    """
    sc = np.sort(np.asarray(log.sign_changes, dtype=float))
    t0, t1 = 0.0, log.tau_reached
    if sc.size == 0:
        return FlightSet(flights=[], censored=[(t0, t1)])
    censored = [(t0, float(sc[0])), (float(sc[-1]), t1)]
    flights = []
    samples = log.samples
    for a, b in zip(sc[:-1], sc[1:]):
        peak = math.nan
        if samples.size:
            in_flight = (samples["tau"] > a) & (samples["tau"] < b)
            if np.any(in_flight):
                peak = float(np.max(np.abs(samples["p"][in_flight])))
        flights.append(FlightRecord(trajectory_id=log.trajectory_id,
                                    t_start=float(a), t_end=float(b),
                                    peak_abs_p=peak))
    return FlightSet(flights=flights, censored=censored)


def log_binned_pdf(durations, bins_per_decade: int = BINS_PER_DECADE
                   ) -> LogHistogram:
    """Histogram positive durations in geometric bins, normalized to unit
    integral over the binned support."""
    d = np.asarray(durations, dtype=float)
    if d.size == 0:
        raise ValueError("no durations to bin")
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise ValueError("durations must be positive and finite")
    if bins_per_decade < 1:
        raise ValueError(f"bins_per_decade must be >= 1, "
                         f"got {bins_per_decade}")
    lo, hi = float(d.min()), float(d.max())
    if lo == hi:
        # point mass: one bin of one nominal log-width centred on the value
        half = 10.0 ** (0.5 / bins_per_decade)
        edges = np.array([lo / half, lo * half])
    else:
        ndec = math.log10(hi / lo)
        nbins = max(1, math.ceil(ndec * bins_per_decade - 1e-9))
        edges = lo * 10.0 ** (np.arange(nbins + 1) * (ndec / nbins))
        edges[0], edges[-1] = lo, hi  # guard endpoint rounding
    counts, _ = np.histogram(d, bins=edges)
    density = counts / (d.size * np.diff(edges))
    return LogHistogram(edges=edges, counts=counts, density=density,
                        n_total=int(d.size))


def _wls_line(x, y, w):
    """Weighted least squares of y = a + b*x; returns b, stderr(b), a, R2."""
    w = np.asarray(w, dtype=float)
    sw = w.sum()
    xm = np.dot(w, x) / sw
    ym = np.dot(w, y) / sw
    sxx = np.dot(w, (x - xm) ** 2)
    b = np.dot(w, (x - xm) * (y - ym)) / sxx
    a = ym - b * xm
    r = y - a - b * x
    sse = np.dot(w, r ** 2)
    sst = np.dot(w, (y - ym) ** 2)
    dof = len(x) - 2
    stderr = math.sqrt(sse / dof / sxx) if dof > 0 else math.nan
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    return b, stderr, a, r2


def fit_power_law_slope(hist: LogHistogram,
                        fit_range: tuple[float, float] | None = None
                        ) -> LogHistogram:
    """Fit log-density vs log-duration; returns the histogram with fit
    metadata filled in.

    Counts weight the fit.  Without an explicit range the candidates are the
    bins holding at least FIT_MIN_COUNT counts (sparser bins, i.e. the far
    tail and stray short durations, are unreliable in a log fit), skipping
    the truncated first bin; the widest contiguous candidate window with
    R^2 >= 0.98 is used, and if no window reaches the R^2 target the widest
    candidate window with the best R^2 is used.
    """
    centers = hist.centers
    occupied = hist.counts > 0
    if fit_range is not None:
        lo, hi = fit_range
        sel = occupied & (centers >= lo) & (centers <= hi)
        idx = np.nonzero(sel)[0]
        if idx.size < FIT_MIN_BINS:
            raise ValueError(f"only {idx.size} occupied bins in fit range "
                             f"[{lo}, {hi}]; need >= {FIT_MIN_BINS}")
        window = idx
    else:
        candidates = [i for i in range(1, hist.counts.size)
                      if hist.counts[i] >= FIT_MIN_COUNT]
        if len(candidates) < FIT_MIN_BINS:
            raise ValueError(f"only {len(candidates)} bins hold >= "
                             f"{FIT_MIN_COUNT} counts; need >= "
                             f"{FIT_MIN_BINS} for a fit window")
        # contiguous candidate runs
        runs = []
        start = prev = candidates[0]
        for i in candidates[1:] + [candidates[-1] + 2]:
            if i != prev + 1:
                runs.append((start, prev))
                start = i
            prev = i
        best_key, window = None, None
        for r0, r1 in runs:
            for width in range(r1 - r0 + 1, FIT_MIN_BINS - 1, -1):
                for s in range(r0, r1 - width + 2):
                    w = np.arange(s, s + width)
                    _, _, _, r2 = _wls_line(np.log10(centers[w]),
                                            np.log10(hist.density[w]),
                                            hist.counts[w])
                    key = (r2 >= FIT_R2_TARGET, width, r2, -s)
                    if best_key is None or key > best_key:
                        best_key, window = key, w
        if window is None:
            raise ValueError(f"no contiguous window of {FIT_MIN_BINS} bins "
                             f"holding >= {FIT_MIN_COUNT} counts")

    b, stderr, _, _ = _wls_line(np.log10(centers[window]),
                                np.log10(hist.density[window]),
                                hist.counts[window])
    lo, hi = float(hist.edges[window[0]]), float(hist.edges[window[-1] + 1])
    return replace(hist, alpha=float(b), alpha_stderr=float(stderr),
                   fit_range=(lo, hi))


def energy_increments(logs: list[TrajectoryLog]) -> np.ndarray:
    """Post-jump to post-jump (H_start, dH, dtau) triples, per trajectory.

    These are the raw pairs behind the energy random walk: consecutive
    emission events j-1, j give dH = H_j - H_{j-1} over dtau = tau_j -
    tau_{j-1}, attributed to the starting energy H_{j-1}.
    """
    out = []
    for log in logs:
        se = log.se_events
        if se.size < 2:
            continue
        h = se["h_post"]
        t = se["tau"]
        tri = np.empty((se.size - 1, 3))
        tri[:, 0] = h[:-1]
        tri[:, 1] = np.diff(h)
        tri[:, 2] = np.diff(t)
        out.append(tri)
    if not out:
        return np.empty((0, 3))
    return np.concatenate(out)


def estimate_diffusion(logs: list[TrajectoryLog], h_edges,
                       min_count: int = 100
                       ) -> tuple[list[DiffusionBin], list[tuple[float, int]]]:
    """Bin energy-walk increments by starting energy; per bin report
    d_hat = var(dH)/(4 mean dtau) and c_hat = mean dH / mean dtau.

    Returns (kept bins, dropped (h_center, n) pairs below ``min_count``).
    """
    h_edges = np.asarray(h_edges, dtype=float)
    if h_edges.size < 2 or np.any(np.diff(h_edges) <= 0):
        raise ValueError("h_edges must be at least 2 strictly increasing "
                         "values")
    tri = energy_increments(logs)
    which = np.digitize(tri[:, 0], h_edges) - 1
    kept, dropped = [], []
    for i in range(h_edges.size - 1):
        center = 0.5 * (h_edges[i] + h_edges[i + 1])
        sel = which == i
        n = int(np.count_nonzero(sel))
        if n < min_count:
            dropped.append((float(center), n))
            continue
        dh = tri[sel, 1]
        dt = tri[sel, 2]
        mean_dt = float(np.mean(dt))
        kept.append(DiffusionBin(
            h_center=float(center),
            d_hat=float(np.var(dh) / (4.0 * mean_dt)),
            c_hat=float(np.mean(dh) / mean_dt),
            n_events=n,
        ))
    return kept, dropped


@dataclass(frozen=True)
class CaptureMomentum:
    """Mode(s) of the mid-flight |p| distribution."""

    p_g: float
    candidates: tuple[float, ...]
    multimodal: bool


def midflight_abs_momenta(logs: list[TrajectoryLog],
                          params: LatticeParams) -> np.ndarray:
    """|p| of samples farther than 2/gamma from every sign change."""
    window = 2.0 / params.gamma if params.gamma > 0 else 0.0
    out = []
    for log in logs:
        s = log.samples
        if s.size == 0:
            continue
        taus = s["tau"]
        sc = np.sort(np.asarray(log.sign_changes, dtype=float))
        if sc.size and window > 0:
            pos = np.searchsorted(sc, taus)
            left = np.where(pos > 0, taus - sc[np.maximum(pos - 1, 0)],
                            np.inf)
            right = np.where(pos < sc.size,
                             sc[np.minimum(pos, sc.size - 1)] - taus, np.inf)
            keep = np.minimum(left, right) > window
        else:
            keep = np.ones(taus.size, dtype=bool)
        if np.any(keep):
            out.append(np.abs(s["p"][keep]))
    if not out:
        return np.empty(0)
    return np.concatenate(out)


def detect_capture_momentum(logs: list[TrajectoryLog], params: LatticeParams,
                            bin_width: float = 25.0,
                            peak_ratio: float = 0.1) -> CaptureMomentum:
    """Locate the capture momentum as the mode of the mid-flight |p|
    histogram; secondary local maxima within ``peak_ratio`` of the peak are
    reported as extra candidates and flag the result multimodal."""
    values = midflight_abs_momenta(logs, params)
    if values.size == 0:
        raise ValueError("no mid-flight momentum samples available")
    nbins = max(1, math.ceil(values.max() / bin_width))
    edges = np.arange(nbins + 1) * bin_width
    counts, _ = np.histogram(values, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    peak = counts.max()
    padded = np.concatenate([[-1], counts, [-1]])
    local_max = (padded[1:-1] >= padded[:-2]) & (padded[1:-1] > padded[2:])
    cand_idx = np.nonzero(local_max & (counts >= (1.0 - peak_ratio) * peak))[0]
    candidates = tuple(float(centers[i]) for i in cand_idx)
    p_g = float(centers[int(np.argmax(counts))])
    return CaptureMomentum(p_g=p_g, candidates=candidates,
                           multimodal=len(candidates) > 1)


@dataclass
class SweepPoint:
    """One detuning point of a sweep; nan fields plus ``error`` on failure."""

    delta: float
    n_flights: int = 0
    n_censored: int = 0
    mean_T: float = math.nan
    median_T: float = math.nan
    mean_T_us: float = math.nan
    alpha: float = math.nan
    alpha_stderr: float = math.nan
    error: str | None = None


def collect_flights(logs: list[TrajectoryLog]) -> tuple[list[FlightRecord],
                                                        int]:
    """Completed flights across logs plus total censored-interval count."""
    flights, n_censored = [], 0
    for log in logs:
        fs = extract_flights(log)
        flights.extend(fs.flights)
        n_censored += len(fs.censored)
    return flights, n_censored


def detuning_sweep(deltas, base: EnsembleConfig, workers: int = 1,
                   min_flights: int = 1000,
                   bins_per_decade: int = BINS_PER_DECADE
                   ) -> list[SweepPoint]:
    """Run the simulate-and-fit pipeline at each detuning.

    Per-point failures (too few flights, fit errors) are recorded on the
    point and the sweep continues.
    """
    points = []
    for delta in deltas:
        point = SweepPoint(delta=float(delta))
        try:
            cfg = replace(base, params=replace(base.params,
                                               delta=float(delta)))
            result = run_ensemble(cfg, workers=workers)
            flights, n_cens = collect_flights(result.logs)
            point.n_flights = len(flights)
            point.n_censored = n_cens
            if len(flights) < min_flights:
                raise ValueError(f"only {len(flights)} flights at "
                                 f"delta={delta}; need >= {min_flights}")
            durations = np.array([f.duration for f in flights])
            point.mean_T = float(durations.mean())
            point.median_T = float(np.median(durations))
            point.mean_T_us = to_si(point.mean_T, "time",
                                    cfg.params).value * 1e6
            hist = fit_power_law_slope(log_binned_pdf(durations,
                                                      bins_per_decade))
            point.alpha = hist.alpha
            point.alpha_stderr = hist.alpha_stderr
        except Exception as exc:
            point.error = str(exc)
        points.append(point)
    return points

"""Single-trajectory dynamics of a two-level atom in a 1D standing-wave lattice.

The atom carries five dynamical variables: the centre-of-mass position ``x``
(units of the inverse field wavenumber) and momentum ``p`` (photon recoils),
and the Bloch vector ``(u, v, z)`` of the internal state.  Between
spontaneous-emission events the variables follow a coherent flow that
preserves the Bloch norm; an emission resets the internal state to the ground
state and kicks the momentum by a random recoil in [-1, 1].

Emission times are sampled with the waiting-time (cumulative hazard)
algorithm: the instantaneous rate is ``gamma * (z + 1) / 2``, its integral is
accumulated alongside the RK4 integration, and a jump fires when the integral
crosses an exponentially distributed threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import _kernels
from ._kernels import (
    AUX_DRAW,
    AUX_LAM,
    AUX_SIZE,
    AUX_TARGET,
    AUX_TAU_JUMP,
    SAMPLE_NCOLS,
    SE_NCOLS,
    STATUS_ABORTED,
    STATUS_OK,
    STATUS_RNG_EMPTY,
)

MAX_DTAU = 0.05  # resolves the fastest coherent frequency, which is O(2)

PLANCK_HBAR = 1.054571817e-34  # J s

# structured views over the kernel event buffers
SE_DTYPE = np.dtype([("tau", "f8"), ("x", "f8"), ("p", "f8"), ("u", "f8"),
                     ("v", "f8"), ("z", "f8"), ("recoil", "f8"),
                     ("interval", "f8"), ("h_post", "f8")])
SAMPLE_DTYPE = np.dtype([("tau", "f8"), ("x", "f8"), ("p", "f8"), ("u", "f8"),
                         ("v", "f8"), ("z", "f8"), ("h", "f8")])


class TrajectoryAborted(RuntimeError):
    """Raised when the integrator meets a non-finite state.

    Carries the last good state so the failure time is observable.
    """

    def __init__(self, last_good: "AtomState"):
        super().__init__(f"non-finite state detected; last good tau = "
                         f"{last_good.tau!r}")
        self.last_good = last_good


@dataclass(frozen=True)
class LatticeParams:
    """Normalized lattice/atom parameters plus SI conversion constants.

    ``delta`` is the detuning (laser minus atomic frequency over the Rabi
    frequency), ``gamma`` the decay rate and ``omega_r`` the recoil frequency,
    all in units of the Rabi frequency.  The SI constants are only used to
    convert outputs (seconds, m/s); the dynamics is fully specified by the
    normalized values.
    """

    delta: float = -0.001
    gamma: float = 3.3e-3
    omega_r: float = 1e-5
    rabi_hz: float = 1e10
    wavelength_m: float = 852.1e-9
    atom_mass_kg: float = 2.2069465e-25  # cesium-133

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.omega_r <= 0:
            raise ValueError(f"omega_r must be > 0, got {self.omega_r}")

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength_m

    @property
    def recoil_velocity(self) -> float:
        """Velocity of one photon recoil, hbar*k_f/m_a, in m/s."""
        return PLANCK_HBAR * self.wavenumber / self.atom_mass_kg

    def omega_r_from_si(self) -> float:
        """Recoil frequency implied by the SI constants (diagnostic only).

        For the default cesium constants this is ~2.6e-6, not the 1e-5 used
        by the normalized dynamics; the normalized value wins.
        """
        return (PLANCK_HBAR * self.wavenumber ** 2
                / (self.atom_mass_kg * self.rabi_hz))


@dataclass(frozen=True)
class AtomState:
    """The five dynamical variables plus the normalized time."""

    x: float = 0.0
    p: float = 0.0
    u: float = 0.0
    v: float = 0.0
    z: float = -1.0
    tau: float = 0.0

    def bloch_norm_sq(self) -> float:
        return self.u * self.u + self.v * self.v + self.z * self.z

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.p, self.u, self.v, self.z, self.tau])

    @classmethod
    def from_array(cls, a) -> "AtomState":
        return cls(x=float(a[0]), p=float(a[1]), u=float(a[2]),
                   v=float(a[3]), z=float(a[4]), tau=float(a[5]))


@dataclass(frozen=True)
class SpontaneousEvent:
    """One spontaneous-emission event."""

    tau_event: float
    pre_state: AtomState
    recoil: float
    interval: float       # time since the previous jump (or trajectory start)
    post_energy: float


class AtomStateDerivative(NamedTuple):
    x: float
    p: float
    u: float
    v: float
    z: float


def coherent_derivs(state: AtomState, params: LatticeParams) -> AtomStateDerivative:
    """Right-hand side of the coherent flow (jump terms excluded).

    Satisfies u*du + v*dv + z*dz = 0 exactly, so the Bloch norm is conserved
    by the continuous dynamics.
    """
    sx = math.sin(state.x)
    cx = math.cos(state.x)
    hg = 0.5 * params.gamma
    return AtomStateDerivative(
        x=params.omega_r * state.p,
        p=-state.u * sx,
        u=params.delta * state.v + hg * state.u * state.z,
        v=(-params.delta * state.u + 2.0 * state.z * cx
           + hg * state.v * state.z),
        z=-2.0 * state.v * cx - hg * (state.u ** 2 + state.v ** 2),
    )


def rk4_step(state: AtomState, dtau: float, params: LatticeParams) -> AtomState:
    """One classical 4th-order Runge-Kutta step of the coherent flow."""
    x2, p2, u2, v2, z2, _ = _kernels.rk4_step_kernel(
        state.x, state.p, state.u, state.v, state.z, dtau,
        params.delta, params.gamma, params.omega_r)
    return AtomState(x=x2, p=p2, u=u2, v=v2, z=z2, tau=state.tau + dtau)


def sample_recoil(rng: np.random.Generator) -> float:
    """Draw one recoil momentum, uniform on [-1, 1] (so <p_j^2> = 1/3)."""
    return 2.0 * rng.random() - 1.0


def apply_jump(state: AtomState, recoil: float) -> AtomState:
    """Apply a spontaneous emission: kick p, reset internal state to ground."""
    if abs(recoil) > 1.0:
        raise ValueError(f"recoil must lie in [-1, 1], got {recoil}")
    return replace(state, p=state.p + recoil, u=0.0, v=0.0, z=-1.0)


class EventSink:
    """Consumer of trajectory events; methods receive batches.

    ``se`` rows use SE_DTYPE (pre-jump state, recoil, interval, post-jump H),
    ``samples`` rows use SAMPLE_DTYPE, sign changes are plain time arrays.
    """

    def on_se(self, rows: np.ndarray) -> None:
        pass

    def on_sign_change(self, taus: np.ndarray) -> None:
        pass

    def on_sample(self, rows: np.ndarray) -> None:
        pass


class MemorySink(EventSink):
    """Accumulates all events in memory (tests, small runs)."""

    def __init__(self):
        self._se = []
        self._sc = []
        self._samples = []

    def on_se(self, rows):
        self._se.append(rows)

    def on_sign_change(self, taus):
        self._sc.append(taus)

    def on_sample(self, rows):
        self._samples.append(rows)

    @property
    def se_events(self) -> np.ndarray:
        if not self._se:
            return np.empty(0, dtype=SE_DTYPE)
        return np.concatenate(self._se)

    @property
    def sign_changes(self) -> np.ndarray:
        if not self._sc:
            return np.empty(0)
        return np.concatenate(self._sc)

    @property
    def samples(self) -> np.ndarray:
        if not self._samples:
            return np.empty(0, dtype=SAMPLE_DTYPE)
        return np.concatenate(self._samples)

    def spontaneous_events(self):
        """Rows as SpontaneousEvent objects."""
        for r in self.se_events:
            yield SpontaneousEvent(
                tau_event=float(r["tau"]),
                pre_state=AtomState(x=float(r["x"]), p=float(r["p"]),
                                    u=float(r["u"]), v=float(r["v"]),
                                    z=float(r["z"]), tau=float(r["tau"])),
                recoil=float(r["recoil"]),
                interval=float(r["interval"]),
                post_energy=float(r["h_post"]),
            )


def _pack_se(buf: np.ndarray, n: int) -> np.ndarray:
    out = np.empty(n, dtype=SE_DTYPE)
    for i, name in enumerate(SE_DTYPE.names):
        out[name] = buf[:n, i]
    return out


def _pack_samples(buf: np.ndarray, n: int) -> np.ndarray:
    out = np.empty(n, dtype=SAMPLE_DTYPE)
    for i, name in enumerate(SAMPLE_DTYPE.names):
        out[name] = buf[:n, i]
    return out


def evolve(state: AtomState, tau_end: float, params: LatticeParams,
           rng: np.random.Generator, sink: EventSink | None = None,
           dtau: float = 0.01, sample_stride: int = 0,
           freeze_bloch: bool = False, _buf_cap: int | None = None,
           _draw_cap: int = 8192) -> AtomState:
    """Advance a trajectory to ``tau_end``, sampling spontaneous emissions.

    Jump times are located inside an RK4 step by bisection to 1e-6 in tau.
    Emission events, momentum sign changes and (optionally) every
    ``sample_stride``-th state sample are streamed to ``sink`` in batches.
    All randomness is consumed from ``rng`` as a flat uniform stream, so a
    given (state, config, generator state) reproduces bit-identically.

    Raises TrajectoryAborted if the state turns non-finite; events up to the
    last good step have already been flushed to the sink by then.

    ``freeze_bloch`` pins u, v, z (jumps then only kick p); it exists for
    test harnesses that need a constant emission rate.
    """
    if not tau_end > state.tau:
        raise ValueError(f"tau_end={tau_end} must exceed state.tau={state.tau}")
    if not 0.0 < dtau <= MAX_DTAU:
        raise ValueError(f"dtau must be in (0, {MAX_DTAU}], got {dtau}")
    norm_err = abs(state.bloch_norm_sq() - 1.0)
    if not norm_err <= 1e-9:
        raise ValueError(f"initial Bloch norm off unit sphere by {norm_err}")
    if sink is None:
        sink = EventSink()

    span = tau_end - state.tau
    cap_se = int(min(max(2048, 1.5 * params.gamma * span), 65536))
    cap_sc = cap_se
    cap_sm = 0
    if sample_stride > 0:
        cap_sm = int(min(max(1024, span / dtau / sample_stride + 2), 262144))
    if _buf_cap is not None:
        cap_se = cap_sc = max(_buf_cap, 2)  # sign-change check reserves 2 rows
        cap_sm = cap_se if sample_stride > 0 else 0
    _draw_cap = max(_draw_cap, 4)
    se_buf = np.empty((cap_se, SE_NCOLS))
    sc_buf = np.empty(cap_sc)
    sm_buf = np.empty((max(cap_sm, 1), SAMPLE_NCOLS))

    vec = state.as_array()
    draws = rng.random(_draw_cap)
    aux = np.zeros(AUX_SIZE)
    aux[AUX_LAM] = 0.0
    aux[AUX_TARGET] = -math.log1p(-draws[0])
    aux[AUX_TAU_JUMP] = state.tau
    aux[AUX_DRAW] = 1

    if sample_stride > 0:
        first = np.zeros(1, dtype=SAMPLE_DTYPE)
        from .observables import energy
        first["tau"] = state.tau
        first["x"] = state.x
        first["p"] = state.p
        first["u"] = state.u
        first["v"] = state.v
        first["z"] = state.z
        first["h"] = energy(state, params)
        sink.on_sample(first)

    while True:
        status, n_se, n_sc, n_sm = _kernels.evolve_kernel(
            vec, tau_end, dtau, params.delta, params.gamma, params.omega_r,
            draws, aux, se_buf, sc_buf, sm_buf, sample_stride, freeze_bloch)
        if n_se:
            sink.on_se(_pack_se(se_buf, n_se))
        if n_sc:
            sink.on_sign_change(sc_buf[:n_sc].copy())
        if n_sm:
            sink.on_sample(_pack_samples(sm_buf, n_sm))
        if status == STATUS_OK:
            break
        if status == STATUS_ABORTED:
            raise TrajectoryAborted(AtomState.from_array(vec))
        if status == STATUS_RNG_EMPTY:
            # carry over any unread tail so the stream stays sequential
            leftover = draws[int(aux[AUX_DRAW]):]
            draws = np.concatenate([leftover, rng.random(_draw_cap)])
            aux[AUX_DRAW] = 0
        # buffer-full statuses just need the flush above before re-entry

    return AtomState.from_array(vec)

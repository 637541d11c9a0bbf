"""Energy observables, analytic force formulas and SI conversions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dynamics import AtomState, LatticeParams

READING_DTYPE = np.dtype([("tau", "f8"), ("h", "f8"), ("h_tilde", "f8"),
                          ("z2_avg", "f8")])

# the trailing <1 - z^2> window, in units of 1/gamma; well beyond the O(pi)
# internal oscillation period, capped at the elapsed time since the last jump
Z2_WINDOW_OVER_GAMMA = 20.0


@dataclass(frozen=True)
class EnergyReading:
    tau: float
    h: float
    h_tilde: float
    z2_avg: float


def energy(state: AtomState, params: LatticeParams) -> float:
    """Total atomic energy H = (omega_r/2) p^2 - u cos x - (delta/2) z."""
    return (0.5 * params.omega_r * state.p ** 2
            - state.u * math.cos(state.x) - 0.5 * params.delta * state.z)


def coherent_energy_rate(state: AtomState, params: LatticeParams) -> float:
    """dH/dtau along the coherent flow (no jumps).

    Algebraic consequence of the equations of motion:
    (delta*gamma/4)(u^2+v^2) - (gamma/2) u z cos x.  Vanishes for gamma=0,
    where H is an exact constant.
    """
    return (0.25 * params.delta * params.gamma
            * (state.u ** 2 + state.v ** 2)
            - 0.5 * params.gamma * state.u * state.z * math.cos(state.x))


def pseudoenergy(h: float, z2_avg: float, tau: float, tau_jump: float,
                 params: LatticeParams) -> float:
    """Energy corrected by the detuning-decay drift accumulated since the
    last jump; approximately constant along a coherent segment."""
    if tau < tau_jump:
        raise ValueError(f"tau={tau} precedes the last jump at {tau_jump}")
    return h - 0.25 * params.delta * params.gamma * z2_avg * (tau - tau_jump)


def jump_energy_change(pre_state: AtomState, recoil: float,
                       params: LatticeParams) -> float:
    """Exact energy change of one emission event, H(post) - H(pre).

    Expands to omega_r*p*p_j + (omega_r/2)*p_j^2 + delta/2 + u*cos(x)
    + (delta/2)*z with all variables taken just before the jump.
    """
    if abs(recoil) > 1.0:
        raise ValueError(f"recoil must lie in [-1, 1], got {recoil}")
    return (params.omega_r * pre_state.p * recoil
            + 0.5 * params.omega_r * recoil ** 2
            + 0.5 * params.delta
            + pre_state.u * math.cos(pre_state.x)
            + 0.5 * params.delta * pre_state.z)


def trailing_z2_average(taus: np.ndarray, zs: np.ndarray, tau_jump: float,
                        params: LatticeParams,
                        window: float | None = None) -> np.ndarray:
    """Trailing time-average of (1 - z^2) over a window of 20/gamma.

    The window is restarted at each emission (``tau_jump``) and therefore
    capped at the elapsed time since it; pass dense samples of one coherent
    segment.  At the segment start the average degenerates to the
    instantaneous value.
    """
    taus = np.asarray(taus, dtype=float)
    zs = np.asarray(zs, dtype=float)
    if taus.ndim != 1 or taus.shape != zs.shape:
        raise ValueError("taus and zs must be matching 1-d arrays")
    if taus.size and taus[0] < tau_jump - 1e-12:
        raise ValueError("segment starts before the last jump")
    if window is None:
        if params.gamma <= 0:
            window = math.inf
        else:
            window = Z2_WINDOW_OVER_GAMMA / params.gamma
    q = 1.0 - zs ** 2
    if taus.size < 2:
        return q.copy()
    # cumulative trapezoid of q, then windowed means via interpolation
    dq = np.concatenate([[0.0], np.cumsum(0.5 * (q[1:] + q[:-1])
                                          * np.diff(taus))])
    elapsed = taus - tau_jump
    w = np.minimum(elapsed, window)
    lo = taus - w
    q_lo = np.interp(lo, taus, dq)
    out = np.empty_like(q)
    tiny = w <= 0
    out[tiny] = q[tiny]
    out[~tiny] = (dq[~tiny] - q_lo[~tiny]) / w[~tiny]
    return out


def energy_readings(taus, zs, hs, tau_jump: float,
                    params: LatticeParams) -> np.ndarray:
    """EnergyReading rows (tau, h, h_tilde, z2_avg) for one coherent segment."""
    taus = np.asarray(taus, dtype=float)
    hs = np.asarray(hs, dtype=float)
    z2 = trailing_z2_average(taus, zs, tau_jump, params)
    out = np.empty(taus.size, dtype=READING_DTYPE)
    out["tau"] = taus
    out["h"] = hs
    out["z2_avg"] = z2
    out["h_tilde"] = hs - (0.25 * params.delta * params.gamma * z2
                           * (taus - tau_jump))
    return out


class SiValue(NamedTuple):
    value: float
    unit: str


def to_si(value: float, kind: str, params: LatticeParams) -> SiValue:
    """Convert a normalized quantity to SI.

    time: tau -> seconds via 1/Omega; velocity: p -> m/s via hbar*k_f/m_a;
    momentum: passthrough in units of hbar*k_f.
    """
    if kind == "time":
        if not params.rabi_hz > 0:
            raise ValueError("rabi_hz must be set for time conversion")
        return SiValue(value / params.rabi_hz, "s")
    if kind == "velocity":
        if not (params.wavelength_m > 0 and params.atom_mass_kg > 0):
            raise ValueError("wavelength_m and atom_mass_kg must be set "
                             "for velocity conversion")
        return SiValue(value * params.recoil_velocity, "m/s")
    if kind == "momentum":
        return SiValue(value, "hbar*k_f")
    raise ValueError(f"unknown kind {kind!r}; expected time|velocity|momentum")


class FrictionValue(NamedTuple):
    value: float
    in_validity: bool


def analytic_friction(p: float, params: LatticeParams) -> FrictionValue:
    """Momentum-space friction force delta*gamma/(2*omega_r*p).

    Valid for omega_r*|p| >~ gamma/2; outside that range the value is still
    computed but flagged (slow atoms, where the estimate breaks down).
    """
    if p == 0:
        raise ValueError("friction force is undefined at p = 0")
    value = params.delta * params.gamma / (2.0 * params.omega_r * p)
    valid = abs(p) >= params.gamma / (2.0 * params.omega_r)
    return FrictionValue(value, valid)

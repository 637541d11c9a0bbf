"""Energy bookkeeping, windowed averages, SI conversions, friction."""

import math

import numpy as np
import pytest

from latticemc.dynamics import AtomState, LatticeParams, apply_jump, rk4_step
from latticemc.observables import (analytic_friction, coherent_energy_rate,
                                   energy, energy_readings,
                                   jump_energy_change, pseudoenergy, to_si,
                                   trailing_z2_average)


def test_energy_value():
    params = LatticeParams(delta=-0.1)
    s = AtomState(x=0.3, p=100.0, u=0.2, v=0.5, z=-0.5)
    expected = (0.5 * 1e-5 * 100.0 ** 2 - 0.2 * math.cos(0.3)
                - 0.5 * (-0.1) * (-0.5))
    assert energy(s, params) == pytest.approx(expected, abs=1e-15)


def test_coherent_rate_matches_finite_difference():
    params = LatticeParams(delta=-0.05, gamma=3.3e-3)
    s = AtomState(x=0.7, p=300.0, u=0.6, v=0.64, z=0.48)
    h = 1e-3
    fwd = energy(rk4_step(s, h, params), params)
    bwd = energy(rk4_step(s, -h, params), params)
    fd = (fwd - bwd) / (2.0 * h)
    rate = coherent_energy_rate(s, params)
    assert abs(rate) > 1e-5
    assert abs(fd - rate) / abs(rate) < 1e-6


def test_coherent_rate_vanishes_without_decay():
    params = LatticeParams(gamma=0.0)
    s = AtomState(x=1.0, p=10.0, u=0.6, v=0.64, z=0.48)
    assert coherent_energy_rate(s, params) == 0.0


def test_energy_drift_equals_integrated_rate():
    # cumulative trapezoid of the rate reproduces H(tau) - H(0) along a
    # coherent segment
    params = LatticeParams(delta=-0.01, gamma=3.3e-3)
    s = AtomState(x=0.7, p=300.0, u=0.6, v=0.64, z=0.48)
    dtau = 0.01
    hs, rates = [energy(s, params)], [coherent_energy_rate(s, params)]
    for _ in range(20000):
        s = rk4_step(s, dtau, params)
        hs.append(energy(s, params))
        rates.append(coherent_energy_rate(s, params))
    hs = np.array(hs)
    rates = np.array(rates)
    integral = np.cumsum(0.5 * (rates[1:] + rates[:-1])) * dtau
    drift = hs[1:] - hs[0]
    assert np.abs(drift).max() > 1e-4   # the drift is actually exercised
    # trapezoid quadrature error ~1.4e-8 at this dtau; identity holds below it
    np.testing.assert_allclose(drift, integral, atol=5e-8)


def test_jump_energy_change_matches_direct_difference():
    params = LatticeParams(delta=-0.1)
    rng = np.random.default_rng(4)
    for _ in range(50):
        vec = rng.normal(size=3)
        u, v, z = vec / np.linalg.norm(vec)
        s = AtomState(x=rng.uniform(0, 7), p=rng.uniform(-700, 700),
                      u=u, v=v, z=z)
        r = rng.uniform(-1, 1)
        direct = energy(apply_jump(s, r), params) - energy(s, params)
        assert jump_energy_change(s, r, params) == pytest.approx(
            direct, abs=1e-12)
    with pytest.raises(ValueError, match="recoil"):
        jump_energy_change(AtomState(), 1.2, params)


def test_pseudoenergy():
    params = LatticeParams(delta=-0.1, gamma=0.02)
    h, z2, tau, tj = 1.5, 0.5, 30.0, 10.0
    expected = h - 0.25 * (-0.1) * 0.02 * 0.5 * 20.0
    assert pseudoenergy(h, z2, tau, tj, params) == pytest.approx(expected)
    assert pseudoenergy(h, z2, tau, tau, params) == h
    with pytest.raises(ValueError, match="precedes"):
        pseudoenergy(h, z2, 5.0, tj, params)


def test_trailing_z2_average_constant():
    params = LatticeParams()
    taus = np.linspace(0.0, 100.0, 501)
    zs = np.full_like(taus, 0.3)
    out = trailing_z2_average(taus, zs, 0.0, params)
    np.testing.assert_allclose(out, 1.0 - 0.09, rtol=1e-12)


def test_trailing_z2_average_window_caps_at_elapsed():
    # grid-aligned window: the vectorized result equals a brute-force
    # windowed trapezoid
    params = LatticeParams()
    dt = 0.5
    taus = np.arange(0.0, 200.0 + dt / 2, dt)
    zs = np.cos(0.05 * taus)
    window = 40.0   # exactly 80 grid steps
    out = trailing_z2_average(taus, zs, 0.0, params, window=window)
    q = 1.0 - zs ** 2
    for i in (0, 1, 40, 80, 200, 400):
        lo = max(0.0, taus[i] - window)
        j = int(round(lo / dt))
        if i == j:
            expected = q[i]
        else:
            expected = np.trapezoid(q[j:i + 1], taus[j:i + 1]) / (taus[i]
                                                              - taus[j])
        assert out[i] == pytest.approx(expected, rel=1e-10)


def test_trailing_z2_average_validation():
    params = LatticeParams()
    with pytest.raises(ValueError, match="matching"):
        trailing_z2_average(np.arange(3.0), np.arange(4.0), 0.0, params)
    with pytest.raises(ValueError, match="before the last jump"):
        trailing_z2_average(np.array([1.0, 2.0]), np.zeros(2), 5.0, params)


def test_energy_readings_columns():
    params = LatticeParams(delta=-0.1, gamma=0.02)
    taus = np.linspace(10.0, 20.0, 11)
    zs = np.zeros(11)
    hs = np.linspace(1.0, 2.0, 11)
    out = energy_readings(taus, zs, hs, 10.0, params)
    np.testing.assert_array_equal(out["tau"], taus)
    np.testing.assert_array_equal(out["h"], hs)
    np.testing.assert_allclose(out["z2_avg"], 1.0)
    np.testing.assert_allclose(
        out["h_tilde"], hs - 0.25 * (-0.1) * 0.02 * (taus - 10.0))


def test_to_si_conversions():
    params = LatticeParams()
    t = to_si(1e6, "time", params)
    assert (t.value, t.unit) == (1e-4, "s")
    v = to_si(550.0, "velocity", params)
    assert v.unit == "m/s"
    assert v.value == pytest.approx(550.0 * 3.52e-3, rel=1e-2)
    m = to_si(550.0, "momentum", params)
    assert m.value == 550.0 and m.unit == "hbar*k_f"
    with pytest.raises(ValueError, match="unknown kind"):
        to_si(1.0, "energy", params)


def test_analytic_friction():
    params = LatticeParams()
    f = analytic_friction(500.0, params)
    assert f.value == pytest.approx(-0.001 * 3.3e-3 / (2e-5 * 500.0))
    assert f.in_validity
    slow = analytic_friction(100.0, params)   # below gamma/(2 omega_r) = 165
    assert not slow.in_validity
    assert analytic_friction(-500.0, params).value == -f.value
    with pytest.raises(ValueError, match="p = 0"):
        analytic_friction(0.0, params)

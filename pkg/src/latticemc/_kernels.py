"""Compiled inner loops for trajectory integration.

The trajectory kernel advances the five dynamical variables with fixed-step
RK4 and samples spontaneous-emission jumps by accumulating the integrated
rate against an exponential threshold.  It is written against preallocated
event buffers so a long trajectory can be streamed in chunks: whenever a
buffer (or the uniform-draw buffer) is exhausted the kernel returns with a
status code and can be re-entered with the same ``state``/``aux`` arrays to
continue bit-exactly where it stopped.
"""

import math

from numba import njit

STATUS_OK = 0
STATUS_SE_FULL = 1
STATUS_SC_FULL = 2
STATUS_SAMPLE_FULL = 3
STATUS_RNG_EMPTY = 4
STATUS_ABORTED = -1

# layout of the float64 aux vector threaded through kernel calls
AUX_LAM = 0        # hazard integral accumulated since the last jump
AUX_TARGET = 1     # current -log(1-r) threshold
AUX_TAU_JUMP = 2   # time of the last jump (or trajectory start)
AUX_STEP = 3       # committed full-step counter (drives sample decimation)
AUX_DRAW = 4       # next unread index in the uniform draw buffer
AUX_SIZE = 5

# columns of the SE event buffer: pre-jump state, recoil, interval, post-jump H
SE_NCOLS = 9
# columns of the sample buffer: tau, x, p, u, v, z, H
SAMPLE_NCOLS = 7

# locating a jump inside a step: bisection tolerance in normalized time
JUMP_TIME_TOL = 1e-6


@njit(cache=True, nogil=True, inline="always")
def _rk4(x, p, u, v, z, h, delta, gamma, omega_r, bf):
    # bf=0 freezes the internal (Bloch) variables; used by test harnesses.
    hg = 0.5 * gamma

    s1 = math.sin(x)
    c1 = math.cos(x)
    k1x = omega_r * p
    k1p = -u * s1
    k1u = bf * (delta * v + hg * u * z)
    k1v = bf * (-delta * u + 2.0 * z * c1 + hg * v * z)
    k1z = bf * (-2.0 * v * c1 - hg * (u * u + v * v))

    h2 = 0.5 * h
    xa = x + h2 * k1x
    pa = p + h2 * k1p
    ua = u + h2 * k1u
    va = v + h2 * k1v
    za = z + h2 * k1z
    s2 = math.sin(xa)
    c2 = math.cos(xa)
    k2x = omega_r * pa
    k2p = -ua * s2
    k2u = bf * (delta * va + hg * ua * za)
    k2v = bf * (-delta * ua + 2.0 * za * c2 + hg * va * za)
    k2z = bf * (-2.0 * va * c2 - hg * (ua * ua + va * va))

    xb = x + h2 * k2x
    pb = p + h2 * k2p
    ub = u + h2 * k2u
    vb = v + h2 * k2v
    zb = z + h2 * k2z
    s3 = math.sin(xb)
    c3 = math.cos(xb)
    k3x = omega_r * pb
    k3p = -ub * s3
    k3u = bf * (delta * vb + hg * ub * zb)
    k3v = bf * (-delta * ub + 2.0 * zb * c3 + hg * vb * zb)
    k3z = bf * (-2.0 * vb * c3 - hg * (ub * ub + vb * vb))

    xc = x + h * k3x
    pc = p + h * k3p
    uc = u + h * k3u
    vc = v + h * k3v
    zc = z + h * k3z
    s4 = math.sin(xc)
    c4 = math.cos(xc)
    k4x = omega_r * pc
    k4p = -uc * s4
    k4u = bf * (delta * vc + hg * uc * zc)
    k4v = bf * (-delta * uc + 2.0 * zc * c4 + hg * vc * zc)
    k4z = bf * (-2.0 * vc * c4 - hg * (uc * uc + vc * vc))

    h6 = h / 6.0
    x2 = x + h6 * (k1x + 2.0 * (k2x + k3x) + k4x)
    p2 = p + h6 * (k1p + 2.0 * (k2p + k3p) + k4p)
    u2 = u + h6 * (k1u + 2.0 * (k2u + k3u) + k4u)
    v2 = v + h6 * (k1v + 2.0 * (k2v + k3v) + k4v)
    z2 = z + h6 * (k1z + 2.0 * (k2z + k3z) + k4z)
    # midpoint z from the two half-step stages, feeds the Simpson hazard rule
    zmid = z + 0.25 * h * (k1z + k2z)
    return x2, p2, u2, v2, z2, zmid


@njit(cache=True, nogil=True)
def rk4_step_kernel(x, p, u, v, z, h, delta, gamma, omega_r):
    return _rk4(x, p, u, v, z, h, delta, gamma, omega_r, 1.0)


@njit(cache=True, nogil=True)
def evolve_kernel(state, tau_end, dtau, delta, gamma, omega_r, draws, aux,
                  se, sc, samples, sample_stride, freeze_bloch):
    """Advance ``state`` toward ``tau_end``, logging events into the buffers.

    state : float64[6] -- x, p, u, v, z, tau; mutated in place.
    draws : float64[:] -- uniform [0,1) stream, consumed from aux[AUX_DRAW].
    se    : float64[:, 9] -- tau, x, p, u, v, z (pre-jump), recoil, interval, H_post.
    sc    : float64[:] -- times of momentum sign changes.
    samples : float64[:, 7] -- tau, x, p, u, v, z, H every sample_stride steps.

    Returns (status, n_se, n_sc, n_samples) with counts of rows written in
    this call.  Any status other than STATUS_OK/STATUS_ABORTED means a buffer
    ran out; flush and call again.
    """
    x = state[0]
    p = state[1]
    u = state[2]
    v = state[3]
    z = state[4]
    tau = state[5]
    lam = aux[AUX_LAM]
    target = aux[AUX_TARGET]
    tau_jump = aux[AUX_TAU_JUMP]
    nstep = aux[AUX_STEP]
    idraw = int(aux[AUX_DRAW])
    cap_se = se.shape[0]
    cap_sc = sc.shape[0]
    cap_sm = samples.shape[0]
    n_se = 0
    n_sc = 0
    n_sm = 0
    status = STATUS_OK
    bf = 0.0 if freeze_bloch else 1.0
    g12 = gamma / 12.0

    while tau < tau_end:
        # reserve room for the worst case of one step before doing any work
        if n_se >= cap_se:
            status = STATUS_SE_FULL
            break
        if n_sc + 2 > cap_sc:
            status = STATUS_SC_FULL
            break
        if sample_stride > 0 and n_sm >= cap_sm:
            status = STATUS_SAMPLE_FULL
            break
        if idraw + 2 > draws.shape[0]:
            status = STATUS_RNG_EMPTY
            break

        h = tau_end - tau
        if h > dtau:
            h = dtau
        if tau + h <= tau:
            # remaining span below float resolution at this tau
            tau = tau_end
            break

        x2, p2, u2, v2, z2, zmid = _rk4(x, p, u, v, z, h, delta, gamma,
                                        omega_r, bf)
        if not (math.isfinite(x2) and math.isfinite(p2) and math.isfinite(u2)
                and math.isfinite(v2) and math.isfinite(z2)):
            status = STATUS_ABORTED
            break

        # Simpson rule for the step's integral of the SE rate gamma*(z+1)/2
        dlam = h * g12 * (z + 4.0 * zmid + z2 + 6.0)

        if gamma > 0.0 and lam + dlam >= target:
            # jump inside this step: bisect the partial-step hazard integral
            lo = 0.0
            hi = h
            while hi - lo > JUMP_TIME_TOL:
                mid = 0.5 * (lo + hi)
                xm, pm, um, vm, zm, zq = _rk4(x, p, u, v, z, mid, delta,
                                              gamma, omega_r, bf)
                if lam + mid * g12 * (z + 4.0 * zq + zm + 6.0) >= target:
                    hi = mid
                else:
                    lo = mid
            s = hi
            xj, pj, uj, vj, zj, _ = _rk4(x, p, u, v, z, s, delta, gamma,
                                         omega_r, bf)
            tau_j = tau + s
            if p * pj < 0.0:
                sc[n_sc] = tau + s * p / (p - pj)
                n_sc += 1
            recoil = 2.0 * draws[idraw] - 1.0
            target = -math.log1p(-draws[idraw + 1])
            idraw += 2
            p_new = pj + recoil
            if freeze_bloch:
                u_new = uj
                v_new = vj
                z_new = zj
            else:
                u_new = 0.0
                v_new = 0.0
                z_new = -1.0
            h_post = (0.5 * omega_r * p_new * p_new
                      - u_new * math.cos(xj) - 0.5 * delta * z_new)
            se[n_se, 0] = tau_j
            se[n_se, 1] = xj
            se[n_se, 2] = pj
            se[n_se, 3] = uj
            se[n_se, 4] = vj
            se[n_se, 5] = zj
            se[n_se, 6] = recoil
            se[n_se, 7] = tau_j - tau_jump
            se[n_se, 8] = h_post
            n_se += 1
            if pj * p_new < 0.0:
                sc[n_sc] = tau_j
                n_sc += 1
            x = xj
            p = p_new
            u = u_new
            v = v_new
            z = z_new
            tau = tau_j
            tau_jump = tau_j
            lam = 0.0
            continue

        if p * p2 < 0.0:
            sc[n_sc] = tau + h * p / (p - p2)
            n_sc += 1
        x = x2
        p = p2
        u = u2
        v = v2
        z = z2
        tau += h
        lam += dlam
        nstep += 1.0
        if sample_stride > 0 and int(nstep) % sample_stride == 0:
            samples[n_sm, 0] = tau
            samples[n_sm, 1] = x
            samples[n_sm, 2] = p
            samples[n_sm, 3] = u
            samples[n_sm, 4] = v
            samples[n_sm, 5] = z
            samples[n_sm, 6] = (0.5 * omega_r * p * p - u * math.cos(x)
                                - 0.5 * delta * z)
            n_sm += 1

    state[0] = x
    state[1] = p
    state[2] = u
    state[3] = v
    state[4] = z
    state[5] = tau
    aux[AUX_LAM] = lam
    aux[AUX_TARGET] = target
    aux[AUX_TAU_JUMP] = tau_jump
    aux[AUX_STEP] = nstep
    aux[AUX_DRAW] = idraw
    return status, n_se, n_sc, n_sm

"""Shared fixtures: a small real ensemble plus synthetic-log helpers."""

import numpy as np
import pytest

from latticemc.dynamics import SAMPLE_DTYPE, SE_DTYPE, AtomState, LatticeParams
from latticemc.ensemble import (EnsembleConfig, InitialConditions,
                                TrajectoryLog, run_ensemble)


@pytest.fixture(scope="session")
def default_params():
    return LatticeParams()


@pytest.fixture(scope="session")
def fast_ensemble(default_params):
    """Small seeded run with fast atoms; SE events, sign changes, samples."""
    config = EnsembleConfig(
        n_trajectories=8, tau_end=2.0e4, master_seed=1234,
        params=default_params,
        initial=InitialConditions(p0=550.0, p0_half_width=100.0),
        dtau=0.02, sample_stride=200,
    )
    return run_ensemble(config)


def make_log(sign_changes=(), tau_reached=0.0, se=None, samples=None,
             trajectory_id=0):
    """TrajectoryLog with synthetic event arrays (zeros where unspecified)."""
    if se is None:
        se_arr = np.empty(0, dtype=SE_DTYPE)
    else:
        n = len(next(iter(se.values())))
        se_arr = np.zeros(n, dtype=SE_DTYPE)
        for name, vals in se.items():
            se_arr[name] = vals
    if samples is None:
        sm_arr = np.empty(0, dtype=SAMPLE_DTYPE)
    else:
        n = len(next(iter(samples.values())))
        sm_arr = np.zeros(n, dtype=SAMPLE_DTYPE)
        for name, vals in samples.items():
            sm_arr[name] = vals
    return TrajectoryLog(
        trajectory_id=trajectory_id, se_events=se_arr,
        sign_changes=np.asarray(sign_changes, dtype=float),
        samples=sm_arr, final_state=AtomState(tau=tau_reached),
        aborted=False, tau_reached=float(tau_reached),
    )

"""Shared fixtures: gallery access and the expensive long-horizon runs.

The full-horizon trajectories are integrated once per session and shared
between the module tests and the acceptance suite.
"""

import numpy as np
import pytest

import penflow as pf

# Canonical run settings for the long-horizon verification: per-instance
# penalty scale keeps the explicit-integrator budget bounded while driving
# beta(T) high enough for the endpoint tolerances.
LONG_HORIZON = 2000.0
LONG_CADENCE = 0.5
RUN_SETTINGS = {
    "G2": dict(params=pf.DynamicsParams(3.0, 2.0, 0.9),
               schedule=pf.PenaltySchedule.shifted_power(1.5, 12.0, 0.04),
               u0=np.array([2.0, 1.0])),
    "G3": dict(params=pf.DynamicsParams(3.0, 2.0, 0.9),
               schedule=pf.PenaltySchedule.shifted_power(1.5, 12.0, 0.01),
               u0=np.array([1.0, 1.0, 0.0, 0.0, 0.7])),
    "G5": dict(params=pf.DynamicsParams(3.0, 2.0, 0.9),
               schedule=pf.PenaltySchedule.shifted_power(1.5, 12.0, 0.005),
               u0=np.zeros(50)),
    # gamma*lam = 1: the smaller perfect-square energy weight vanishes.
    "G4": dict(params=pf.DynamicsParams(1.0, 1.0, 0.9),
               schedule=pf.PenaltySchedule.shifted_power(1.5, 6.0, 0.04),
               u0=np.array([2.0, 1.0])),
}


@pytest.fixture(scope="session")
def gallery():
    return {g.name: g for g in pf.standard_gallery()}


@pytest.fixture(scope="session")
def long_run(gallery):
    """Factory for cached T=2000 trajectories keyed by instance name."""
    cache = {}

    def get(name):
        if name not in cache:
            cfg = RUN_SETTINGS[name]
            inst = gallery[name]
            traj = pf.integrate(
                inst.problem, inst.constraint, cfg["schedule"], cfg["params"],
                cfg["u0"], np.zeros(inst.dimension), LONG_HORIZON,
                pf.IntegratorControls(), cadence=LONG_CADENCE,
                reference=inst.reference())
            cache[name] = (traj, cfg["schedule"], cfg["params"])
        return cache[name]

    return get


@pytest.fixture(scope="session")
def tight_run(gallery):
    """Factory for short-horizon, tight-tolerance, dense-cadence runs.

    Integration error and interpolation noise sit far below the
    finite-difference tolerances these runs feed.
    """
    cache = {}

    def get(name, t_end=20.0, cadence=1e-3):
        key = (name, t_end, cadence)
        if key not in cache:
            cfg = RUN_SETTINGS[name]
            inst = gallery[name]
            controls = pf.IntegratorControls(rel_tol=1e-10, abs_tol=1e-12)
            cache[key] = (
                pf.integrate(inst.problem, inst.constraint, cfg["schedule"],
                             cfg["params"], cfg["u0"], np.zeros(inst.dimension),
                             t_end, controls, cadence=cadence,
                             reference=inst.reference()),
                cfg["schedule"], cfg["params"])
        return cache[key]

    return get

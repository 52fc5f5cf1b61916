"""Shared, session-scoped simulation results.

The expensive pipelines (calibration, error budget, readout-delay scan, tau
sweep, Ramsey records) run once and feed both the module tests and the
acceptance suite.
"""

import numpy as np
import pytest

from magnon_qnd.detection import (detector_metrics, error_budget, exactly_one_scheme,
                                  readout_delay_sensitivity, tau_sweep)
from magnon_qnd.dynamics import ramsey_evolve
from magnon_qnd.hilbert import MHZ
from magnon_qnd.pulses import calibrate_pi_amplitude
from magnon_qnd.readout import bound_readout_fidelity
from magnon_qnd.system import SystemParams, improved_device

TAU_GRID = (40e-9, 80e-9, 120e-9, 200e-9, 320e-9, 480e-9)
IMPROVED_TAU_GRID = (200e-9, 240e-9, 280e-9, 320e-9)
RAMSEY_TAUS = np.arange(0.0, 2.56e-6, 10e-9)
RAMSEY_DELTA_S = -4.0 * MHZ
RAMSEY_NBAR = 0.53


@pytest.fixture(scope="session")
def system():
    return SystemParams()


@pytest.fixture(scope="session")
def pi_amp_200(system):
    return calibrate_pi_amplitude(system, 200e-9)


@pytest.fixture(scope="session")
def budget(system):
    return error_budget(system, 200e-9)


@pytest.fixture(scope="session")
def bounds(system):
    return bound_readout_fidelity(system)


@pytest.fixture(scope="session")
def delay_sensitivity(system, bounds):
    return readout_delay_sensitivity(system, bounds, 200e-9)


@pytest.fixture(scope="session")
def tau_curve(system):
    return tau_sweep(system, TAU_GRID)


@pytest.fixture(scope="session")
def exactly_one(system, pi_amp_200):
    return detector_metrics(system, exactly_one_scheme(system), 200e-9, pi_amplitude=pi_amp_200)[0]


@pytest.fixture(scope="session")
def pi_amp_12(system):
    return calibrate_pi_amplitude(system, 12e-9)


@pytest.fixture(scope="session")
def ramsey_driven(system, pi_amp_12):
    omega_d = np.sqrt(RAMSEY_NBAR) * system.magnon.gamma_m / 2
    return RAMSEY_TAUS, ramsey_evolve(system, RAMSEY_DELTA_S, RAMSEY_TAUS, omega_d, pi_amp_12, 12e-9)


@pytest.fixture(scope="session")
def ramsey_undriven(system, pi_amp_12):
    return RAMSEY_TAUS, ramsey_evolve(system, RAMSEY_DELTA_S, RAMSEY_TAUS, 0.0, pi_amp_12, 12e-9)


@pytest.fixture(scope="session")
def improved_curve(system):
    return tau_sweep(improved_device(system), IMPROVED_TAU_GRID)

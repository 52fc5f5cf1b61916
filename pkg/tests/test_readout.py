import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from magnon_qnd.readout import (InconsistentReadoutError, MeasuredProbabilities, ReadoutModel,
                                apply_readout_correction, bound_readout_fidelity, forward_probabilities,
                                rotate_to_signal, sample_shots, solve_readout_errors)

small = st.floats(0.0, 0.2)


def test_correction_values():
    assert apply_readout_correction(0.3, ReadoutModel(0.0, 0.0)) == 0.3
    m = ReadoutModel(0.043, 0.040)
    assert apply_readout_correction(1.0, m) == pytest.approx(0.957)
    assert apply_readout_correction(0.5, m) == pytest.approx(0.4985)
    assert apply_readout_correction(0.0, m) == pytest.approx(0.040)


@pytest.mark.parametrize("p", [-0.1, 1.2])
def test_correction_rejects_out_of_range(p):
    with pytest.raises(ValueError):
        apply_readout_correction(p, ReadoutModel())


@settings(max_examples=100, deadline=None)
@given(small, small, st.floats(0, 1), st.floats(0, 1))
def test_correction_is_affine_and_monotone(eg, ee, p1, p2):
    m = ReadoutModel(eg, ee)
    a, b = apply_readout_correction(p1, m), apply_readout_correction(p2, m)
    assert (b - a) == pytest.approx(m.fidelity * (p2 - p1), abs=1e-12)
    assert 0 <= a <= 1


def test_readout_model_validation():
    with pytest.raises(ValueError):
        ReadoutModel(-0.01, 0.0)
    with pytest.raises(ValueError):
        ReadoutModel(0.6, 0.5)
    with pytest.raises(ValueError):
        MeasuredProbabilities(0.9, 0.1)


@settings(max_examples=200, deadline=None)
@given(small, small, st.floats(0, 0.1), st.floats(0, 0.1))
def test_solve_inverts_forward_model(eg, ee, eps_ini, eps_pi):
    model = ReadoutModel(eg, ee, 5e-9)
    p_eg, p_ee = forward_probabilities(model, eps_ini, eps_pi)
    got = solve_readout_errors(MeasuredProbabilities(p_eg, p_ee, eps_ini), eps_pi, 5e-9)
    assert got.eps_g == pytest.approx(eg, abs=1e-12)
    assert got.eps_e == pytest.approx(ee, abs=1e-12)
    assert got.delta_t_r == 5e-9


def test_solve_with_ideal_preparation_reads_errors_directly():
    got = solve_readout_errors(MeasuredProbabilities(0.05, 0.9, 0.0), eps_pi=0.0)
    assert (got.eps_g, got.eps_e) == pytest.approx((0.05, 0.1), abs=1e-15)


def test_solve_rejects_inconsistent_inputs():
    with pytest.raises(InconsistentReadoutError):
        solve_readout_errors(MeasuredProbabilities(0.01, 0.84, 0.2), eps_pi=0.0)
    with pytest.raises(ValueError):
        solve_readout_errors(MeasuredProbabilities())


def test_bounds_ordering_and_values(bounds):
    assert bounds.F_r_min <= bounds.midrange.fidelity <= bounds.F_r_max
    assert bounds.model_min.eps_g == pytest.approx(0.045, abs=2e-3)
    assert bounds.model_min.eps_e == pytest.approx(0.079, abs=2e-3)
    assert bounds.F_r_min == pytest.approx(0.87580, abs=5e-5)
    assert bounds.F_r_max == pytest.approx(0.958125, abs=5e-5)
    assert bounds.max_delay == pytest.approx(61.90e-9, abs=0.05e-9)
    assert min(bounds.model_max.eps_g, bounds.model_max.eps_e) == 0.0
    # relaxation during the delay grows the apparent control error
    k = int(np.searchsorted(bounds.delays, bounds.max_delay))
    assert np.all(np.diff(bounds.eps_pi[:k]) > 0)


def test_bounds_without_relaxation_have_no_crossing(system):
    s = system.without_decoherence().without_initialization_error()
    with pytest.raises(InconsistentReadoutError):
        bound_readout_fidelity(s)


def test_shot_separation_noise_free_assignment():
    v_g, v_e, sigma = 0.0 + 0.0j, 37.0 * np.exp(0.7j), 1.8
    assert norm.sf(37.0 / 2 / 1.8) < 1e-9
    for p in (0.0, 1.0):
        shots = sample_shots(p, 20000, v_g, v_e, sigma, seed=4)
        assert np.all(shots.states == int(p))
        assert shots.p_e_threshold == p


def test_rotation_maps_centers_to_axis():
    dv, span = rotate_to_signal(np.array([1 + 2j, 4 + 6j]), 1 + 2j, 4 + 6j)
    assert span == pytest.approx(5.0)
    assert dv == pytest.approx([0.0, 5.0], abs=1e-14)


def test_noiseless_ground_shots_have_zero_signal():
    shots = sample_shots(0.0, 100, 2 - 1j, 10 + 3j, 0.0)
    assert np.all(shots.delta_v == 0.0)
    assert shots.p_e_estimate == 0.0


def test_voltage_estimator_statistics():
    n = 100_000
    shots = sample_shots(0.3, n, 0j, 37 + 0j, 1.8, seed=11)
    assert abs(shots.p_e_estimate - 0.3) < 3 * np.sqrt(0.3 * 0.7 / n) + 3 * 1.8 / 37 / np.sqrt(n)
    means = [sample_shots(0.3, 2000, 0j, 37 + 0j, 1.8, seed=s).p_e_estimate for s in range(200)]
    assert abs(np.mean(means) - 0.3) < 4 * np.std(means) / np.sqrt(len(means))


def test_shot_validation():
    with pytest.raises(ValueError):
        sample_shots(1.5, 10, 0j, 1 + 0j, 0.1)
    with pytest.raises(ValueError):
        sample_shots(0.5, 10, 0j, 1 + 0j, -0.1)


def test_shot_csv(tmp_path):
    shots = sample_shots(0.5, 50, 0j, 37 + 0j, 1.8, seed=1)
    path = tmp_path / "shots.csv"
    shots.to_csv(path, ["seed 1"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed 1"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["re_V", "im_V", "dV", "state"]
    assert len(rows) == 51
    assert {r[3] for r in rows[1:]} <= {"g", "e"}
    assert float(rows[1][2]) == shots.delta_v[0]

from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from magnon_qnd.detection import (DetectionScheme, SweepResult, at_least_one_scheme, detector_metrics,
                                  exactly_one_scheme, fit_metrics, fock_detection_probability, generalized_sweep,
                                  run_protocol, spurious_efficiency_correction, weighted_magnon_population)
from magnon_qnd.hilbert import MHZ
from magnon_qnd.pulses import calibrate_pi_amplitude, protocol_schedule

from conftest import IMPROVED_TAU_GRID


def _sweep(nbar, p, name="s", click="g"):
    nbar = np.asarray(nbar, float)
    return SweepResult(nbar, np.asarray(p, float), np.zeros_like(nbar), name, click, 200e-9)


def test_weighted_population_of_constant():
    sched = protocol_schedule(200e-9, 1.0, 1.0)
    t = np.linspace(0.0, sched.t_r, 801)
    traj = SimpleNamespace(times=t, n_m=np.full_like(t, 0.37))
    assert weighted_magnon_population(traj, sched) == pytest.approx(0.37, rel=1e-14)


def test_weighted_population_needs_overlap():
    sched = protocol_schedule(200e-9, 1.0, 1.0)
    t = np.linspace(0.0, 1e-7, 11)
    with pytest.raises(ValueError):
        weighted_magnon_population(SimpleNamespace(times=t, n_m=np.ones_like(t)), sched)


def test_fit_round_trip():
    n = np.linspace(0.0, 1.5, 8)
    m = fit_metrics(_sweep(n, 0.24 + 0.7 * (1 - np.exp(-n))))
    assert m.dark_count == pytest.approx(0.24, abs=1e-10)
    assert m.efficiency == pytest.approx(0.7, abs=1e-10)
    assert m.residual_rms < 1e-12


def test_fit_rejects_degenerate_design():
    with pytest.raises(ValueError):
        fit_metrics(_sweep([0.1, 0.1, 0.1], [0.2, 0.3, 0.4]))
    with pytest.raises(ValueError):
        fit_metrics(_sweep([0.0, 0.1], [0.2, 0.3]))


def _single_magnon_slope_ratio(nbar_max):
    n = np.linspace(0.0, nbar_max, 8)
    return fit_metrics(_sweep(n, 0.1 + 0.7 * n * np.exp(-n), click="e")).efficiency / 0.7


@pytest.mark.parametrize("nbar_max", [0.02, 0.04, 0.1, 0.2])
def test_single_magnon_data_under_at_least_one_fit(nbar_max):
    # n e^-n = x - x^2/2 + O(x^3) with x = 1 - e^-n, so the line through
    # uniformly spaced points underestimates the slope by about nbar_max / 2
    ratio = _single_magnon_slope_ratio(nbar_max)
    assert ratio - 1 == pytest.approx(-nbar_max / 2, abs=0.1 * nbar_max)
    if nbar_max <= 0.04:
        assert abs(ratio - 1) < 0.02


def test_sweep_validation():
    with pytest.raises(ValueError):
        _sweep([0.0, -0.1], [0.1, 0.2])
    with pytest.raises(ValueError):
        SweepResult(np.zeros(2), np.zeros(3), np.zeros(2), "s", "g", 1e-7)
    with pytest.raises(ValueError):
        DetectionScheme("x", "f")


def test_undriven_dark_count(system, pi_amp_200):
    r = run_protocol(system, at_least_one_scheme(), 0.0, 200e-9, pi_amp_200)
    assert r.p_click == pytest.approx(0.221, abs=0.01)
    assert r.nbar == 0.0


def test_error_free_dark_count_is_small(system):
    ideal = system.without_qubit_errors()
    amp = calibrate_pi_amplitude(ideal, 200e-9)
    assert run_protocol(ideal, at_least_one_scheme(), 0.0, 200e-9, amp).p_click < 1e-3


def test_fock_probe_long_lived_magnon(system):
    ideal = system.replace(magnon=replace(system.magnon, gamma_m=1e-3 * MHZ)).without_qubit_errors()
    amp = calibrate_pi_amplitude(ideal, 200e-9)
    one = exactly_one_scheme(ideal)
    assert fock_detection_probability(ideal, one, 200e-9, amp, 1) > 1 - 0.039
    # number selective: two magnons detune the control again
    assert fock_detection_probability(ideal, one, 200e-9, amp, 2) < 0.05
    assert fock_detection_probability(ideal, at_least_one_scheme(), 200e-9, amp, 2) > 1 - 0.039


def test_fock_probe_device_monotone(system, pi_amp_200):
    p = [fock_detection_probability(system, at_least_one_scheme(), 200e-9, pi_amp_200, n) for n in (0, 1, 2)]
    assert p[0] < p[1] < p[2]
    with pytest.raises(ValueError):
        run_protocol(system, at_least_one_scheme(), 1e6, 200e-9, pi_amp_200, magnon_fock=1)


def test_no_dispersive_shift_no_detection(system):
    m, _ = detector_metrics(system.replace(chi_qm=0.0), at_least_one_scheme(), 200e-9)
    assert abs(m.efficiency) <= max(2 * m.efficiency_stderr, 1e-10)


def test_efficiency_bounded_by_fock_probability(budget):
    for m in budget.metrics.values():
        assert m.efficiency + m.dark_count <= 1 + 2 * m.efficiency_stderr + 2 * m.dark_count_stderr
        assert 0 <= m.dark_count <= 1


@pytest.mark.parametrize("field,ladder", [("T1", (0.797e-6, 0.6e-6, 0.5e-6)),
                                          ("T2_star", (0.970e-6, 0.7e-6, 0.5e-6))])
def test_dark_count_grows_with_decoherence(system, field, ladder):
    p = []
    for v in ladder:
        s = system.with_qubit(**{field: v})
        amp = calibrate_pi_amplitude(s, 200e-9)
        p.append(run_protocol(s, at_least_one_scheme(), 0.0, 200e-9, amp).p_click)
    assert np.all(np.diff(p) > 0)


def test_far_detuned_control_floor(system, pi_amp_200):
    r = run_protocol(system, DetectionScheme("far", "e", 200 * MHZ), 0.0, 200e-9, pi_amp_200)
    eg, ee, ei = system.readout.eps_g, system.readout.eps_e, system.qubit.eps_ini
    assert r.p_click == pytest.approx(1 - ((1 - eg) * (1 - ei) + ee * ei), abs=1e-4)


def test_generalized_classification(system):
    pts = generalized_sweep(system, [0.0, -2 * system.chi_qm], n_points=4)
    assert [p.click_state for p in pts] == ["g", "e"]
    assert pts[1].dark_count < 0.6 * pts[0].dark_count
    assert all(p.dark_count <= 0.5 for p in pts)


def test_exactly_one_scheme_halves_dark_count(exactly_one, budget):
    assert exactly_one.click_state == "e"
    assert exactly_one.dark_count == pytest.approx(0.104, abs=2e-3)
    assert exactly_one.dark_count < 0.6 * budget.metrics["full"].dark_count
    assert exactly_one.efficiency > 0


def test_spurious_correction_constant_reference():
    n = np.linspace(0, 0.1, 5)
    p = _sweep(n, 0.3 + 0.5 * n)
    out = spurious_efficiency_correction(p, _sweep(n, np.full(5, 0.4)), 0.7)
    assert np.array_equal(out.probability, p.probability)


def test_spurious_correction_zero_polarization():
    n = np.linspace(0, 0.1, 5)
    p = _sweep(n, 0.3 + 0.5 * n)
    out = spurious_efficiency_correction(p, _sweep(n, 0.4 + 0.2 * n), 0.0)
    assert np.array_equal(out.probability, p.probability)


def test_spurious_correction_inverts_injected_slope():
    n = np.linspace(0, 0.1, 8)
    x = 1 - np.exp(-n)
    clean = 0.22 + 0.66 * x
    spurious = 0.05 + 0.3 * x
    pol = -0.8
    contaminated = _sweep(n, clean - pol * (spurious - spurious[0]))
    out = spurious_efficiency_correction(contaminated, _sweep(n, spurious), pol)
    assert fit_metrics(out).efficiency == pytest.approx(0.66, abs=1e-9)


def test_spurious_correction_rejects_mismatched_grids():
    with pytest.raises(ValueError):
        spurious_efficiency_correction(_sweep([0, 0.1, 0.2], [0.1] * 3), _sweep([0, 0.1, 0.3], [0.1] * 3), 1.0)
    with pytest.raises(ValueError):
        spurious_efficiency_correction(_sweep([0.1, 0.2, 0.3], [0.1] * 3), _sweep([0.1, 0.2, 0.3], [0.1] * 3), 1.0)


def test_improved_device_projection(improved_curve):
    eta = [m.efficiency for m in improved_curve]
    best = improved_curve[int(np.argmax(eta))]
    assert best.tau_pi == IMPROVED_TAU_GRID[2]
    assert best.dark_count < 0.03
    assert best.efficiency > 0.96


def test_sweep_csv_is_deterministic(system, pi_amp_200, tmp_path):
    from magnon_qnd.detection import sweep
    a = sweep(system, at_least_one_scheme(), 200e-9, pi_amp_200, n_points=3)
    b = sweep(system, at_least_one_scheme(), 200e-9, pi_amp_200, n_points=3)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "scheme,tau_pi_ns,omega_d_rad_per_s,nbar_m,p_g"

"""Classical readout-error model, its calibration from measured probabilities,
and single-shot sampling with mid-range thresholding."""

from dataclasses import dataclass
import csv

import numpy as np


class InconsistentReadoutError(ValueError):
    pass


@dataclass(frozen=True)
class ReadoutModel:
    eps_g: float = 0.043
    eps_e: float = 0.040
    delta_t_r: float = 31e-9

    def __post_init__(self):
        if self.eps_g < 0 or self.eps_e < 0:
            raise ValueError("readout errors must be non-negative")
        if not self.eps_g + self.eps_e < 1:
            raise ValueError("readout fidelity must be positive (eps_g + eps_e < 1)")

    @property
    def fidelity(self):
        return 1.0 - self.eps_g - self.eps_e


@dataclass(frozen=True)
class MeasuredProbabilities:
    p_e_given_g_prep: float = 0.0802
    p_e_given_e_prep: float = 0.8409
    eps_ini: float = 0.04
    eps_pi: float | None = None

    def __post_init__(self):
        for name in ("p_e_given_g_prep", "p_e_given_e_prep", "eps_ini"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.visibility < 0:
            raise ValueError("visibility must be non-negative")

    @property
    def visibility(self):
        return self.p_e_given_e_prep - self.p_e_given_g_prep


def apply_readout_correction(p_tilde_g, model):
    """Observed ground probability from the ideal one."""
    p = np.asarray(p_tilde_g, dtype=float)
    if np.any(p < -1e-9) or np.any(p > 1 + 1e-9):
        raise ValueError("probability out of range")
    out = (1.0 - model.eps_g) * p + model.eps_e * (1.0 - p)
    return float(out) if out.ndim == 0 else out


def forward_probabilities(model, eps_ini, eps_pi):
    """(p_e | no pulse, p_e | pi pulse) implied by a readout model."""
    x = eps_pi + eps_ini
    p_eg = model.eps_g * (1 - eps_ini) + (1 - model.eps_e) * eps_ini
    p_ee = model.eps_g * x + (1 - model.eps_e) * (1 - x)
    return p_eg, p_ee


def solve_readout_errors(measured, eps_pi=None, delta_t_r=0.0):
    if eps_pi is None:
        eps_pi = measured.eps_pi
    if eps_pi is None:
        raise ValueError("eps_pi is required")
    ei = measured.eps_ini
    x = eps_pi + ei
    # unknowns (eps_g, eps_e)
    a = np.array([[1 - ei, -ei], [x, -(1 - x)]])
    rhs = np.array([measured.p_e_given_g_prep - ei, measured.p_e_given_e_prep - (1 - x)])
    if abs(np.linalg.det(a)) < 1e-12:
        raise InconsistentReadoutError("readout-error system is singular")
    eps_g, eps_e = np.linalg.solve(a, rhs)
    if not (-1e-12 <= eps_g <= 1 and -1e-12 <= eps_e <= 1):
        raise InconsistentReadoutError(f"readout errors outside [0, 1]: eps_g={eps_g:.4g}, eps_e={eps_e:.4g}")
    return ReadoutModel(max(eps_g, 0.0), max(eps_e, 0.0), delta_t_r)


def _raw_solution(measured, eps_pi):
    ei = measured.eps_ini
    x = eps_pi + ei
    a = np.array([[1 - ei, -ei], [x, -(1 - x)]])
    rhs = np.array([measured.p_e_given_g_prep - ei, measured.p_e_given_e_prep - (1 - x)])
    return np.linalg.solve(a, rhs)


@dataclass(frozen=True)
class ReadoutBounds:
    F_r_min: float
    F_r_max: float
    max_delay: float
    midrange: ReadoutModel
    model_min: ReadoutModel
    model_max: ReadoutModel
    delays: np.ndarray
    eps_pi: np.ndarray
    pi_amplitude: float


def bound_readout_fidelity(system, measured=None, tau_pi=12e-9, cap=200e-9, step=1e-9):
    """Scan the readout delay until one readout error reaches zero.

    eps_pi(delay) = 1 - p~_e(t_r) - eps_ini from a calibrated short pi pulse,
    with p~_e the |e> population (leakage to |f> is control error).
    The mid-range model sits at half the maximal delay on the scan grid.
    """
    from .dynamics import readout_delay_scan
    from .pulses import calibrate_pi_amplitude

    measured = measured or system.measured
    amp = calibrate_pi_amplitude(system, tau_pi, delta_t_r=0.0)
    delays = np.arange(0.0, cap + 0.5 * step, step)
    p_e = readout_delay_scan(system, tau_pi, amp, delays)
    eps_pi = 1.0 - p_e - measured.eps_ini
    sol = np.array([_raw_solution(measured, e) for e in eps_pi])
    hit = np.flatnonzero(np.min(sol, axis=1) <= 0.0)
    if hit.size == 0:
        raise InconsistentReadoutError(f"no zero crossing of the readout errors below {cap * 1e9:.0f} ns")
    k = int(hit[0])
    if k == 0:
        max_delay = 0.0
        eps_cross = sol[0]
    else:
        # linear interpolation of the crossing between grid points
        col = int(np.argmin(sol[k]))
        f = sol[k - 1, col] / (sol[k - 1, col] - sol[k, col])
        max_delay = delays[k - 1] + f * step
        eps_cross = sol[k - 1] + f * (sol[k] - sol[k - 1])
    eps_cross = np.clip(eps_cross, 0.0, None)
    model_max = ReadoutModel(float(eps_cross[0]), float(eps_cross[1]), float(max_delay))
    mid_index = int(round(max_delay / step / 2.0))
    model_mid = solve_readout_errors(measured, eps_pi[mid_index], delays[mid_index])
    model_min = solve_readout_errors(measured, eps_pi[0], 0.0)
    return ReadoutBounds(model_min.fidelity, model_max.fidelity, float(max_delay), model_mid,
                         model_min, model_max, delays, eps_pi, amp)


@dataclass(frozen=True)
class ShotSet:
    voltages: np.ndarray
    delta_v: np.ndarray
    states: np.ndarray  # 1 for e
    p_e_estimate: float
    p_e_threshold: float
    threshold: float

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["re_V", "im_V", "dV", "state"])
            for v, dv, s in zip(self.voltages, self.delta_v, self.states):
                w.writerow([repr(float(v.real)), repr(float(v.imag)), repr(float(dv)), "e" if s else "g"])


def rotate_to_signal(voltages, v_g, v_e):
    """Translate by V_g and rotate so V_e - V_g lies on the positive real axis."""
    theta = np.angle(v_e - v_g)
    dv = np.real(np.exp(-1j * theta) * (np.asarray(voltages) - v_g))
    return dv, abs(v_e - v_g)


def sample_shots(p_e, n_shots, v_g, v_e, sigma_v, seed=0):
    if not sigma_v >= 0:
        raise ValueError("sigma_v must be non-negative")
    if not 0 <= p_e <= 1:
        raise ValueError("p_e must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    excited = rng.random(n_shots) < p_e
    centers = np.where(excited, v_e, v_g)
    noise = sigma_v * (rng.standard_normal(n_shots) + 1j * rng.standard_normal(n_shots))
    v = centers + noise
    dv, dv_e = rotate_to_signal(v, v_g, v_e)
    threshold = dv_e / 2.0
    states = (dv > threshold).astype(np.int8)
    return ShotSet(v, dv, states, float(np.mean(dv) / dv_e), float(np.mean(states)), threshold)

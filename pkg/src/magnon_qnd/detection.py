"""Detection protocols, detector metrics and the error budget."""

from dataclasses import dataclass, field, replace
import csv

import numpy as np

from .dynamics import simulate_protocol
from .parallel import ordered_map
from .pulses import calibrate_pi_amplitude, gaussian_envelope
from .readout import apply_readout_correction

DEFAULT_NBAR_MAX = 0.1
DEFAULT_N_POINTS = 8


@dataclass(frozen=True)
class DetectionScheme:
    """click_state is the qubit outcome counted as a detection; delta_s = omega_q0 - omega_s."""
    name: str
    click_state: str
    delta_s: float = 0.0

    def __post_init__(self):
        if self.click_state not in ("g", "e"):
            raise ValueError("click_state must be 'g' or 'e'")


def at_least_one_scheme():
    return DetectionScheme("at_least_one", "g", 0.0)


def exactly_one_scheme(system):
    # control resonant with the one-magnon qubit line omega_q0 + 2 chi
    return DetectionScheme("exactly_one", "e", -2.0 * system.chi_qm)


@dataclass(frozen=True)
class SweepResult:
    nbar: np.ndarray
    probability: np.ndarray
    amplitudes: np.ndarray
    scheme: str
    click_state: str
    tau_pi: float

    def __post_init__(self):
        if not (len(self.nbar) == len(self.probability) == len(self.amplitudes)):
            raise ValueError("sweep arrays must have equal lengths")
        if np.any(np.asarray(self.nbar) < -1e-12):
            raise ValueError("magnon populations must be non-negative")

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["scheme", "tau_pi_ns", "omega_d_rad_per_s", "nbar_m", f"p_{self.click_state}"])
            for a, n, p in zip(self.amplitudes, self.nbar, self.probability):
                w.writerow([self.scheme, f"{self.tau_pi * 1e9:.12g}", f"{a:.12g}", f"{n:.12g}", f"{p:.12g}"])


@dataclass(frozen=True)
class DetectorMetrics:
    scheme: str
    click_state: str
    tau_pi: float
    dark_count: float
    efficiency: float
    dark_count_stderr: float
    efficiency_stderr: float
    residual_rms: float

    def summary(self):
        return {"scheme": self.scheme, "tau_pi_ns": self.tau_pi * 1e9, "dark_count": self.dark_count,
                "efficiency": self.efficiency,
                "fit_stderr": {"dark_count": self.dark_count_stderr, "efficiency": self.efficiency_stderr}}


@dataclass(frozen=True)
class ProtocolResult:
    p_click: float
    p_tilde_g: float
    nbar: float


def weighted_magnon_population(traj, schedule):
    """Magnon population averaged with the qubit control envelope as weight."""
    q = schedule.qubit_pulse
    if q is None:
        raise ValueError("schedule has no qubit pulse")
    t = np.asarray(traj.times)
    lo, hi = q.bounds
    w = np.where((t >= lo) & (t <= hi), gaussian_envelope(t, 1.0, q.center, q.duration), 0.0)
    norm = np.trapezoid(w, t)
    if norm <= 0:
        raise ValueError("trajectory does not overlap the qubit pulse window")
    return float(np.trapezoid(np.asarray(traj.n_m) * w, t) / norm)


def click_probability(p_tilde_g, click_state, model):
    p_g = apply_readout_correction(min(max(p_tilde_g, 0.0), 1.0), model)
    return p_g if click_state == "g" else 1.0 - p_g


def run_protocol(system, scheme, omega_d, tau_pi, pi_amplitude, delta_t_r=None, readout=None,
                 magnon_fock=None):
    """Observed click probability and control-weighted magnon population."""
    model = readout or system.readout
    dtr = model.delta_t_r if delta_t_r is None else delta_t_r
    dense = omega_d > 0 or magnon_fock not in (None, 0)
    run = simulate_protocol(system, tau_pi, pi_amplitude, omega_d, scheme.delta_s, dtr, dense=dense,
                            magnon_fock=magnon_fock)
    nbar = weighted_magnon_population(run.trajectory, run.schedule) if dense else 0.0
    return ProtocolResult(click_probability(run.p_tilde_g, scheme.click_state, model), run.p_tilde_g, nbar)


def amplitudes_for_populations(system, tau_pi, targets, delta_s=0.0, pi_amplitude=0.0):
    """Drive amplitudes giving the requested weighted populations.

    The population is quadratic in the drive for a linear oscillator; one probe
    run fixes the scale.
    """
    probe = 0.5 * system.magnon.gamma_m
    res = run_protocol(system, DetectionScheme("probe", "g", delta_s), probe, tau_pi, pi_amplitude)
    return probe * np.sqrt(np.asarray(targets, dtype=float) / res.nbar)


def sweep(system, scheme, tau_pi, pi_amplitude, amplitudes=None, nbar_max=DEFAULT_NBAR_MAX,
          n_points=DEFAULT_N_POINTS, delta_t_r=None, readout=None, jobs=1):
    if amplitudes is None:
        targets = np.linspace(0.0, nbar_max, n_points)
        amplitudes = amplitudes_for_populations(system, tau_pi, targets, scheme.delta_s, pi_amplitude)
    amplitudes = np.asarray(amplitudes, dtype=float)
    results = ordered_map(lambda a: run_protocol(system, scheme, a, tau_pi, pi_amplitude, delta_t_r, readout),
                          amplitudes, jobs)
    return SweepResult(np.array([r.nbar for r in results]), np.array([r.p_click for r in results]),
                       amplitudes, scheme.name, scheme.click_state, tau_pi)


def fit_metrics(sweep_result, scheme=None):
    """Least-squares line of p_i against 1 - exp(-nbar): intercept p_i(0), slope eta_i."""
    x = 1.0 - np.exp(-np.asarray(sweep_result.nbar, dtype=float))
    y = np.asarray(sweep_result.probability, dtype=float)
    if len(x) < 3:
        raise ValueError("at least three sweep points are needed")
    if np.ptp(x) == 0:
        raise ValueError("degenerate design: all magnon populations are equal")
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(design.T @ design)
    name = scheme.name if scheme is not None else sweep_result.scheme
    click = scheme.click_state if scheme is not None else sweep_result.click_state
    return DetectorMetrics(name, click, sweep_result.tau_pi, float(coef[1]), float(coef[0]),
                           float(np.sqrt(cov[1, 1])), float(np.sqrt(cov[0, 0])),
                           float(np.sqrt(np.mean(resid ** 2))))


def detector_metrics(system, scheme, tau_pi, pi_amplitude=None, nbar_max=DEFAULT_NBAR_MAX,
                     n_points=DEFAULT_N_POINTS, delta_t_r=None, readout=None, jobs=1):
    """Calibrate (unless given), sweep the drive and fit."""
    if pi_amplitude is None:
        pi_amplitude = calibrate_pi_amplitude(system, tau_pi)
    sw = sweep(system, scheme, tau_pi, pi_amplitude, None, nbar_max, n_points, delta_t_r, readout, jobs)
    return fit_metrics(sw, scheme), sw


@dataclass(frozen=True)
class BudgetRow:
    source: str
    dark_count: float
    inefficiency: float


@dataclass(frozen=True)
class ErrorBudget:
    tau_pi: float
    metrics: dict
    rows: tuple

    def row(self, source):
        for r in self.rows:
            if r.source == source:
                return r
        raise KeyError(source)


BUDGET_VARIANTS = ("full", "no_initialization", "no_decoherence", "no_readout", "entanglement")


def budget_systems(system):
    return {
        "full": system,
        "no_initialization": system.without_initialization_error(),
        "no_decoherence": system.without_decoherence(),
        "no_readout": system.without_readout_error(),
        "entanglement": system.without_qubit_errors(),
    }


def error_budget(system, tau_pi=200e-9, nbar_max=DEFAULT_NBAR_MAX, n_points=DEFAULT_N_POINTS, jobs=1):
    """Rerun the pipeline with each error source switched off and difference the metrics."""
    scheme = at_least_one_scheme()
    systems = budget_systems(system)
    metrics = dict(zip(BUDGET_VARIANTS, ordered_map(
        lambda k: detector_metrics(systems[k], scheme, tau_pi, nbar_max=nbar_max, n_points=n_points)[0],
        BUDGET_VARIANTS, jobs)))
    full = metrics["full"]
    rows = []
    for source, key in (("initialization", "no_initialization"), ("decoherence", "no_decoherence"),
                        ("readout", "no_readout")):
        m = metrics[key]
        rows.append(BudgetRow(source, full.dark_count - m.dark_count, m.efficiency - full.efficiency))
    ent = metrics["entanglement"]
    rows.append(BudgetRow("entanglement", ent.dark_count, 1.0 - ent.efficiency))
    rows.append(BudgetRow("total", full.dark_count, 1.0 - full.efficiency))
    return ErrorBudget(tau_pi, metrics, tuple(rows))


def readout_delay_sensitivity(system, bounds, tau_pi=200e-9, nbar_max=DEFAULT_NBAR_MAX,
                              n_points=DEFAULT_N_POINTS, jobs=1):
    """Metric spread between the two extreme readout delays and their error models."""
    scheme = at_least_one_scheme()
    out = []
    for model in (bounds.model_min, bounds.model_max):
        s = replace(system, readout=model)
        out.append(detector_metrics(s, scheme, tau_pi, nbar_max=nbar_max, n_points=n_points, jobs=jobs)[0])
    return (abs(out[1].dark_count - out[0].dark_count), abs(out[1].efficiency - out[0].efficiency), out)


@dataclass(frozen=True)
class ProjectionPoint:
    tau_pi: float
    base: DetectorMetrics
    improved: DetectorMetrics


def tau_sweep(system, tau_grid, scheme=None, nbar_max=DEFAULT_NBAR_MAX, n_points=DEFAULT_N_POINTS, jobs=1):
    scheme = scheme or at_least_one_scheme()
    return ordered_map(lambda t: detector_metrics(system, scheme, t, nbar_max=nbar_max, n_points=n_points)[0],
                       tau_grid, jobs)


def improved_device_projection(base, improved, tau_grid, nbar_max=DEFAULT_NBAR_MAX,
                               n_points=DEFAULT_N_POINTS, jobs=1):
    a = tau_sweep(base, tau_grid, nbar_max=nbar_max, n_points=n_points, jobs=jobs)
    b = tau_sweep(improved, tau_grid, nbar_max=nbar_max, n_points=n_points, jobs=jobs)
    return [ProjectionPoint(t, x, y) for t, x, y in zip(tau_grid, a, b)]


@dataclass(frozen=True)
class GeneralizedPoint:
    delta_s: float
    click_state: str
    dark_count: float
    efficiency: float
    metrics: DetectorMetrics = field(repr=False)


def generalized_sweep(system, delta_s_grid, tau_pi=200e-9, nbar_max=DEFAULT_NBAR_MAX,
                      n_points=DEFAULT_N_POINTS, jobs=1):
    """Metrics versus control detuning omega_q0 - omega_s with the pi amplitude
    calibrated once on resonance with omega_q0.

    The click state is g when the undriven p_g(0) is at most 1/2, e otherwise,
    so the dark count never exceeds 1/2.
    """
    amp = calibrate_pi_amplitude(system, tau_pi)

    def one(ds):
        p_g0 = run_protocol(system, DetectionScheme("generalized", "g", ds), 0.0, tau_pi, amp).p_click
        click = "g" if p_g0 <= 0.5 else "e"
        scheme = DetectionScheme("generalized", click, ds)
        m = fit_metrics(sweep(system, scheme, tau_pi, amp, None, nbar_max, n_points), scheme)
        return GeneralizedPoint(ds, click, m.dark_count, m.efficiency, m)

    return ordered_map(one, list(delta_s_grid), jobs)


def spurious_efficiency_correction(p_prime, p_zero, polarization):
    """Remove the slope seen with an unpolarized-equivalent reference sweep.

    p_i = p_i' + (2 p_e - 1) (p_i0(nbar) - p_i0(0)), with p_zero holding p_i0.
    """
    a, b = np.asarray(p_prime.nbar, float), np.asarray(p_zero.nbar, float)
    if a.shape != b.shape or not np.allclose(a, b, rtol=1e-9, atol=1e-12):
        raise ValueError("sweeps must share the same magnon-population grid")
    ref = np.asarray(p_zero.probability, float)
    i0 = int(np.argmin(b))
    if b[i0] != 0:
        raise ValueError("reference sweep needs a zero-population point")
    corrected = np.asarray(p_prime.probability, float) + polarization * (ref - ref[i0])
    return replace(p_prime, probability=corrected)


def fock_detection_probability(system, scheme, tau_pi, pi_amplitude, n=1, readout=None):
    """Click probability with the magnon prepared in Fock state n (sanity probe)."""
    return run_protocol(system, scheme, 0.0, tau_pi, pi_amplitude, readout=readout, magnon_fock=n).p_click

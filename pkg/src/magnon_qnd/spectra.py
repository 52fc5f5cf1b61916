"""Closed-form spectrum models and their least-squares fits."""

from dataclasses import dataclass, field, replace
import csv
import math

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .hilbert import MHZ

MAX_FOCK_TERMS = 400


class FitError(RuntimeError):
    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


@dataclass(frozen=True)
class FitResult:
    params: dict
    stderr: dict
    cost: float
    nfev: int
    status: int

    def report(self):
        return {"params": self.params, "stderr": self.stderr, "cost": self.cost, "nfev": self.nfev,
                "status": self.status}


def _lm_fit(model, names, p0, scales, x, y, fixed=None, max_iter=200, ftol=1e-10):
    """Levenberg-Marquardt on parameters divided by ``scales`` (finite-difference Jacobian)."""
    fixed = fixed or {}
    p0 = np.asarray([p0[n] for n in names], dtype=float)
    scales = np.asarray([scales[n] for n in names], dtype=float)
    y = np.asarray(y, dtype=float)

    def unpack(u):
        return {**fixed, **dict(zip(names, u * scales))}

    def resid(u):
        return model(x, unpack(u)) - y

    res = least_squares(resid, p0 / scales, method="lm", ftol=ftol, xtol=1e-15, gtol=1e-15,
                        max_nfev=max_iter * (len(names) + 1))
    params = {n: float(v) for n, v in zip(names, res.x * scales)}
    if res.status <= 0:
        raise FitError(f"fit did not converge: {res.message}", {**fixed, **params})
    dof = max(len(y) - len(names), 1)
    s2 = 2 * res.cost / dof
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac) * s2
        err = np.sqrt(np.clip(np.diag(cov), 0, None)) * scales
    except np.linalg.LinAlgError:
        err = np.full(len(names), np.nan)
    return FitResult({**fixed, **params}, {n: float(e) for n, e in zip(names, err)}, float(res.cost),
                     int(res.nfev), int(res.status))


# cavity transmission

@dataclass(frozen=True)
class TransmissionModelParams:
    omega_c: float
    kappa_c: float
    omega_m: float
    gamma_m: float
    g_mc: float
    kappa_c_in: float | None = None
    kappa_c_out: float | None = None

    def __post_init__(self):
        if not (self.kappa_c > 0 and self.gamma_m > 0):
            raise ValueError("linewidths must be positive")


def cavity_transmission(omega, p):
    """|t|/|t0| of a cavity mode hybridized with the Kittel mode."""
    omega = np.asarray(omega, dtype=float)
    denom = 1j * (omega - p.omega_c) - p.kappa_c / 2 + abs(p.g_mc) ** 2 / (1j * (omega - p.omega_m) - p.gamma_m / 2)
    return (p.kappa_c / 2) / np.abs(denom)


def fit_transmission(omega, data, guess, fit_omega_m=True):
    names = ["omega_c", "g_mc", "gamma_m"] + (["omega_m"] if fit_omega_m else [])
    fixed = {k: getattr(guess, k) for k in ("kappa_c", "kappa_c_in", "kappa_c_out")}
    if not fit_omega_m:
        fixed["omega_m"] = guess.omega_m
    scales = {"omega_c": MHZ, "g_mc": MHZ, "gamma_m": MHZ, "omega_m": MHZ}
    # frequencies are fitted as offsets from the guess to keep the scaled problem well conditioned
    ref = {"omega_c": guess.omega_c, "omega_m": guess.omega_m}

    def model(x, q):
        # the lineshape depends on |gamma_m|; trial steps may cross zero
        full = {**q, "omega_c": q["omega_c"] + ref["omega_c"], "omega_m": q["omega_m"] + ref["omega_m"],
                "gamma_m": abs(q["gamma_m"])}
        return cavity_transmission(x, TransmissionModelParams(**full))

    p0 = {"omega_c": 0.0, "omega_m": 0.0, "g_mc": guess.g_mc, "gamma_m": guess.gamma_m}
    fixed0 = {**fixed}
    if not fit_omega_m:
        fixed0["omega_m"] = 0.0
    res = _lm_fit(model, names, p0, scales, omega, data, fixed0)
    params = dict(res.params)
    params["omega_c"] += ref["omega_c"]
    params["omega_m"] += ref["omega_m"]
    params["gamma_m"] = abs(params["gamma_m"])
    return replace(res, params=params)


def fit_coil_calibration(currents, omega_m):
    """Linear fit omega_m(I) = omega_m(0) + xi I; returns (omega_m0, xi)."""
    xi, w0 = np.polyfit(np.asarray(currents, float), np.asarray(omega_m, float), 1)
    return float(w0), float(xi)


def coil_slope(current_a, omega_a, current_b, omega_b):
    if current_a == current_b:
        raise ValueError("currents must differ")
    return (omega_b - omega_a) / (current_b - current_a)


# dressed-dephasing qubit spectrum

@dataclass(frozen=True)
class GambettaSpectrumParams:
    gamma_q: float
    gamma_m: float
    chi_qm: float
    delta_d: float
    delta_s: float
    omega_d: float

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not np.isfinite(v):
                raise ValueError(f"{k} must be finite")
        if not self.gamma_m > 0 or not self.gamma_q >= 0:
            raise ValueError("linewidths must be positive")

    @classmethod
    def from_population(cls, gamma_q, gamma_m, chi_qm, delta_d, delta_s, nbar_g):
        """Drive amplitude giving steady-state population nbar_g with the qubit in |g>."""
        if nbar_g < 0:
            raise ValueError("population must be non-negative")
        return cls(gamma_q, gamma_m, chi_qm, delta_d, delta_s,
                   math.sqrt(nbar_g * ((gamma_m / 2) ** 2 + delta_d ** 2)))

    @property
    def nbar_g(self):
        return self.omega_d ** 2 / ((self.gamma_m / 2) ** 2 + self.delta_d ** 2)

    @property
    def nbar_e(self):
        return self.omega_d ** 2 / ((self.gamma_m / 2) ** 2 + (self.delta_d + 2 * self.chi_qm) ** 2)

    @property
    def D(self):
        chi, g2 = self.chi_qm, (self.gamma_m / 2) ** 2
        return 2 * (self.nbar_g + self.nbar_e) * chi ** 2 / (g2 + chi ** 2 + (chi + self.delta_d) ** 2)

    @property
    def A(self):
        z = 2 * self.chi_qm + self.delta_d
        return self.D * (self.gamma_m / 2 - 1j * z) / (self.gamma_m / 2 + 1j * z)

    @property
    def delta_omega_q(self):
        return self.chi_qm * (self.nbar_g + self.nbar_e - self.D)

    def linewidth(self, n):
        return self.gamma_q + self.gamma_m * (n + self.D)

    def detuning(self, n):
        """Delta_s^n: detuning of the n-magnon line from the control frequency."""
        return self.delta_s + n * (2 * self.chi_qm + self.delta_d) + self.delta_omega_q


def fock_weights(params, rel_tol=1e-10):
    """Complex weights (-A)^n e^A / n!, truncated once the prefactor
    |A|^n e^|A| / n! drops below rel_tol of the accumulated sum."""
    a = params.A
    mag = abs(a)
    term = complex(np.exp(a))
    pref = math.exp(mag)
    weights = [term]
    acc = pref
    for n in range(1, MAX_FOCK_TERMS):
        if n > mag and pref < rel_tol * acc:
            return np.array(weights)
        term *= -a / n
        pref *= mag / n
        weights.append(term)
        acc += pref
    raise ArithmeticError("Fock sum did not converge")


def gambetta_spectrum(omega, params):
    """Re of a Fock-number sum of complex Lorentzians, one per magnon number."""
    omega = np.asarray(omega, dtype=float)
    w = fock_weights(params)
    out = np.zeros(omega.shape)
    for n, wn in enumerate(w):
        lor = 1.0 / (params.linewidth(n) / 2 - 1j * (omega - params.detuning(n)))
        out += np.real(wn * lor) / math.pi
    return out


GAMBETTA_FREE = ("delta_s", "gamma_m", "chi_qm", "nbar", "scale", "offset")


def _gambetta_model(x, q):
    # lineshapes depend on |gamma|; trial steps may cross zero
    p = GambettaSpectrumParams.from_population(abs(q["gamma_q"]), abs(q["gamma_m"]), q["chi_qm"], q["delta_d"],
                                               q["delta_s"], max(q["nbar"], 0.0))
    return q["scale"] * gambetta_spectrum(x, p) + q["offset"]


def spectrum_model(omega, gamma_q, gamma_m, chi_qm, delta_d, delta_s, nbar, scale=1.0, offset=0.0):
    return _gambetta_model(np.asarray(omega, float), dict(gamma_q=gamma_q, gamma_m=gamma_m, chi_qm=chi_qm,
                                                          delta_d=delta_d, delta_s=delta_s, nbar=nbar,
                                                          scale=scale, offset=offset))


def fit_spectrum(omega, data, guess, gamma_q, delta_d, free=GAMBETTA_FREE):
    """Fit S = scale * s(omega) + offset with gamma_q and delta_d held fixed.

    ``guess`` maps parameter names to initial values; frequencies in rad/s.
    """
    names = list(free)
    fixed = {"gamma_q": gamma_q, "delta_d": delta_d}
    fixed.update({k: v for k, v in guess.items() if k not in names})
    amp = max(abs(guess.get("scale", 1.0)), 1e-300)
    scales = {"delta_s": MHZ, "gamma_m": MHZ, "chi_qm": MHZ, "nbar": 1.0, "scale": amp,
              "offset": max(abs(np.max(data) - np.min(data)), 1e-300), "gamma_q": MHZ}
    return _abs_linewidths(_lm_fit(_gambetta_model, names, guess, scales, omega, data, fixed))


def _abs_linewidths(res):
    params = dict(res.params)
    for k in ("gamma_q", "gamma_m"):
        if k in params:
            params[k] = abs(params[k])
    return replace(res, params=params)


def fit_lorentzian_linewidth(omega, data, guess):
    """Zero-drive limit: single Lorentzian; returns fit with gamma_q free."""
    fixed = {"gamma_m": guess.get("gamma_m", 1.0 * MHZ), "chi_qm": 0.0, "delta_d": 0.0, "nbar": 0.0}
    names = ["gamma_q", "delta_s", "scale", "offset"]
    scales = {"gamma_q": MHZ, "delta_s": MHZ, "scale": max(abs(guess["scale"]), 1e-300),
              "offset": max(abs(np.max(data) - np.min(data)), 1e-300)}
    return _abs_linewidths(_lm_fit(_gambetta_model, names, guess, scales, omega, data, fixed))


def normalized_fft_spectrum(taus, series, subtract_mean=False):
    """Real part of the one-sided DFT of p_e(tau), divided by its maximum.

    Returns angular frequencies (rad/s) and S.
    """
    taus = np.asarray(taus, dtype=float)
    y = np.asarray(series, dtype=float)
    if len(taus) != len(y) or len(taus) < 2:
        raise ValueError("time grid and series must match")
    dt = np.diff(taus)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError("time grid must be uniform")
    if subtract_mean:
        y = y - y.mean()
    spec = np.real(np.fft.rfft(y))
    freqs = 2 * np.pi * np.fft.rfftfreq(len(y), dt[0])
    peak = np.max(spec)
    if peak <= 0:
        raise ValueError("spectrum has no positive maximum")
    return freqs, spec / peak


def find_peaks_simple(x, y, min_height=0.1):
    """Indices of local maxima above min_height (relative to max)."""
    y = np.asarray(y, dtype=float)
    idx, _ = find_peaks(y, height=min_height * np.max(y))
    return idx


# calibration spectrum convolved with the pulse spectrum

@dataclass(frozen=True)
class CalibrationSpectrumParams:
    """Lab-frame spectrum relative to omega_q0 plus visibility and floor."""
    gamma_q: float
    gamma_m: float
    chi_qm: float
    delta_d: float
    nbar: float
    visibility: float
    floor: float


def pulse_spectrum(omega, omega_s, tau_pulse):
    return np.exp(-tau_pulse ** 2 * (omega - omega_s) ** 2 / (4 * np.pi))


def convolved_calibration_spectrum(omega_s, params, tau_pulse, grid_factor=10):
    """V (s * s_pi)(omega_s) + floor, by direct quadrature; omega measured from omega_q0."""
    omega_s = np.asarray(omega_s, dtype=float)
    gp = GambettaSpectrumParams.from_population(params.gamma_q, params.gamma_m, params.chi_qm,
                                                params.delta_d, 0.0, max(params.nbar, 0.0))
    widest = max(params.gamma_q, 1e-3 * MHZ)
    step = widest / grid_factor
    kernel_half = 6.0 * math.sqrt(4 * math.pi) / tau_pulse
    n_max = len(fock_weights(gp))
    line_span = abs(gp.detuning(n_max)) + abs(gp.detuning(0)) + 50 * gp.linewidth(n_max)
    lo = min(omega_s.min() - kernel_half, -line_span)
    hi = max(omega_s.max() + kernel_half, line_span)
    grid = np.arange(lo, hi + step, step)
    s = gambetta_spectrum(grid, gp)
    out = np.array([np.trapezoid(s * pulse_spectrum(grid, w, tau_pulse), grid) for w in omega_s])
    return params.visibility * out + params.floor


CALIBRATION_FREE = ("nbar", "visibility", "floor")


def fit_calibration_spectrum(omega_s, data, guess, tau_pulse, free=CALIBRATION_FREE):
    names = list(free)
    fixed = {k: v for k, v in guess.__dict__.items() if k not in names}
    scales = {"nbar": 1.0, "visibility": 1.0, "floor": 1.0, "gamma_m": MHZ, "chi_qm": MHZ, "gamma_q": MHZ,
              "delta_d": MHZ}

    def model(x, q):
        return convolved_calibration_spectrum(x, CalibrationSpectrumParams(**q), tau_pulse)

    return _lm_fit(model, names, guess.__dict__, scales, omega_s, data, fixed)


# magnon population calibration

@dataclass(frozen=True)
class CalibrationFitResult:
    lam0: float
    T1_m: float
    fit: FitResult = field(repr=False)

    @property
    def implied_linewidth(self):
        """gamma_m = 1/T1_m in rad/s."""
        return 1.0 / self.T1_m


def lambda_decay(tau, lam0, T1_m):
    return lam0 * np.exp(-np.asarray(tau, dtype=float) / (4.0 * T1_m))


def fit_lambda_decay(tau, lam, guess=(5.0, 100e-9)):
    tau = np.asarray(tau, float)
    if len(tau) < 3:
        raise ValueError("at least three points are needed")
    lam = np.asarray(lam, float)
    if np.any(lam <= 0) or np.polyfit(tau, np.log(lam), 1)[0] >= 0:
        raise FitError("lambda does not decay with the delay")

    def model(x, q):
        return lambda_decay(x, q["lam0"], q["T1_m"])

    res = _lm_fit(model, ["lam0", "T1_m"], {"lam0": guess[0], "T1_m": guess[1]},
                  {"lam0": 1.0, "T1_m": 1e-9}, tau, lam)
    if not res.params["T1_m"] > 0:
        raise FitError("fitted magnon lifetime is not positive", res.params)
    return CalibrationFitResult(res.params["lam0"], res.params["T1_m"], res)


def signal_vs_amplitude(amplitudes, dv_e, lam):
    return dv_e * np.exp(-(lam * np.asarray(amplitudes, float)) ** 2)


@dataclass(frozen=True)
class SpectroscopyFit:
    omega_d: np.ndarray
    lam2: np.ndarray
    center: float
    fit: FitResult = field(repr=False)


def gaussian_line(x, q):
    return q["height"] * np.exp(-0.5 * ((x - q["center"]) / q["width"]) ** 2) + q["offset"]


def qubit_assisted_spectroscopy_fit(omega_d, amplitudes, signals, omega_ef, exclusion=3.0 * MHZ,
                                    line_guess=None):
    """Per-frequency lambda^2 from dV = dV_e exp(-(lambda A_d)^2), then a
    Gaussian-plus-offset fit of lambda^2 versus drive frequency.

    ``signals`` has shape (n_freq, n_amp). Frequencies within ``exclusion`` of
    the qubit e-f transition are skipped.
    """
    omega_d = np.asarray(omega_d, float)
    amplitudes = np.asarray(amplitudes, float)
    signals = np.asarray(signals, float)
    if len(amplitudes) < 3:
        raise ValueError("at least three amplitudes per frequency are needed")
    keep = np.abs(omega_d - omega_ef) > exclusion
    lam2 = []
    for row in signals[keep]:
        # log-linear start, then a two-parameter refinement
        slope, icpt = np.polyfit(amplitudes ** 2, np.log(np.clip(row, 1e-300, None)), 1)
        res = _lm_fit(lambda x, q: signal_vs_amplitude(x, q["dv_e"], math.sqrt(max(q["lam2"], 0.0))),
                      ["dv_e", "lam2"], {"dv_e": math.exp(icpt), "lam2": max(-slope, 1e-12)},
                      {"dv_e": max(abs(math.exp(icpt)), 1e-300), "lam2": max(abs(slope), 1e-12)},
                      amplitudes, row)
        lam2.append(res.params["lam2"])
    lam2 = np.array(lam2)
    w = omega_d[keep]
    if line_guess is None:
        i = int(np.argmax(lam2))
        line_guess = {"height": lam2[i] - lam2.min(), "center": w[i], "width": (w.max() - w.min()) / 10,
                      "offset": lam2.min()}
    ref = line_guess["center"]

    def model(x, q):
        return gaussian_line(x, {**q, "center": q["center"] + ref})

    g0 = {**line_guess, "center": 0.0}
    scale_h = max(abs(line_guess["height"]), 1e-300)
    res = _lm_fit(model, ["height", "center", "width", "offset"], g0,
                  {"height": scale_h, "center": MHZ, "width": MHZ, "offset": scale_h}, w, lam2)
    params = {**res.params, "center": res.params["center"] + ref}
    return SpectroscopyFit(w, lam2, params["center"], replace(res, params=params))


def write_spectrum_csv(path, omega, values, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["omega_over_2pi_Hz", "value"])
        for x, v in zip(omega, values):
            w.writerow([f"{x / (2 * np.pi):.12g}", f"{v:.12g}"])

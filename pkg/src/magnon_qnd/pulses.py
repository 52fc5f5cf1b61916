"""Gaussian drive envelopes, protocol timing and pi-pulse calibration."""

from dataclasses import dataclass
import math

import numpy as np

from .kernels import PULSE_COLUMNS, SHAPE_FLAT, SHAPE_GAUSSIAN

WINDOW_HALF_WIDTH = 1.5  # in units of the pulse duration
TAU_D = 200e-9
READOUT_GAP = 20e-9
TARGETS = ("qubit", "magnon")


class CalibrationError(RuntimeError):
    pass


def gaussian_envelope(t, amplitude, center, duration):
    if not duration > 0:
        raise ValueError("duration must be positive")
    x = (np.asarray(t, dtype=float) - center) / duration
    return amplitude * np.exp(-np.pi * x * x)


@dataclass(frozen=True)
class Pulse:
    """One drive term. Gaussian pulses are cut to center ± 1.5·duration unless
    an explicit window is given; flat drives need the window."""
    target: str
    amplitude: float
    center: float
    duration: float
    shape: str = "gaussian"
    window: tuple | None = None

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}")
        if self.shape not in ("gaussian", "flat"):
            raise ValueError("shape must be 'gaussian' or 'flat'")
        if not self.duration > 0:
            raise ValueError("pulse duration must be positive")
        if not self.amplitude >= 0:
            raise ValueError("pulse amplitude must be non-negative")
        if self.shape == "flat" and self.window is None:
            raise ValueError("flat drives need an explicit window")

    @property
    def bounds(self):
        if self.window is not None:
            return float(self.window[0]), float(self.window[1])
        half = WINDOW_HALF_WIDTH * self.duration
        return self.center - half, self.center + half

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi = self.bounds
        inside = (t >= lo) & (t <= hi)
        if self.shape == "flat":
            value = np.full_like(t, self.amplitude)
        else:
            value = gaussian_envelope(t, self.amplitude, self.center, self.duration)
        return np.where(inside, value, 0.0)


@dataclass(frozen=True)
class PulseSchedule:
    pulses: tuple
    readout_start: float
    delta_t_r: float = 31e-9

    @property
    def t_r(self):
        return self.readout_start + self.delta_t_r

    def _first(self, target):
        for p in self.pulses:
            if p.target == target:
                return p
        return None

    @property
    def qubit_pulse(self):
        return self._first("qubit")

    @property
    def magnon_pulse(self):
        return self._first("magnon")

    def envelope(self, t, target):
        t = np.asarray(t, dtype=float)
        total = np.zeros_like(t)
        for p in self.pulses:
            if p.target == target:
                total = total + p(t)
        return total

    def packed(self):
        """Pulse table in the kernel layout (zero-amplitude pulses dropped)."""
        rows = []
        for p in self.pulses:
            if p.amplitude == 0:
                continue
            lo, hi = p.bounds
            shape = SHAPE_GAUSSIAN if p.shape == "gaussian" else SHAPE_FLAT
            rows.append([p.amplitude, p.center, p.duration, lo, hi, TARGETS.index(p.target), shape])
        return np.array(rows, dtype=float).reshape(-1, PULSE_COLUMNS)

    def breakpoints(self):
        pts = set()
        for p in self.pulses:
            if p.amplitude != 0:
                pts.update(p.bounds)
        return sorted(pts)

    def active_start(self):
        """Earliest time any drive is on (the state is stationary before it)."""
        starts = [p.bounds[0] for p in self.pulses if p.amplitude != 0]
        return min(starts) if starts else self.t_r

    def with_amplitude(self, target, amplitude):
        new = tuple(Pulse(p.target, amplitude, p.center, p.duration, p.shape, p.window)
                    if p.target == target else p for p in self.pulses)
        return PulseSchedule(new, self.readout_start, self.delta_t_r)

    def with_delay(self, delta_t_r):
        return PulseSchedule(self.pulses, self.readout_start, delta_t_r)


def protocol_schedule(tau_pi, omega_s=0.0, omega_d=0.0, tau_d=TAU_D, delta_t_r=31e-9,
                      readout_gap=READOUT_GAP):
    """Magnon pulse, then the qubit pulse starting where its half-duration ends.

    t = 0 is the start of the magnon window. The readout pulse starts
    ``readout_gap`` after the nominal end t_s + tau_pi/2 of the qubit pulse.
    """
    if not tau_pi > 0 or not tau_d > 0:
        raise ValueError("pulse durations must be positive")
    t_d = WINDOW_HALF_WIDTH * tau_d
    t_s = t_d + 0.5 * (tau_pi + tau_d)
    pulses = (Pulse("magnon", omega_d, t_d, tau_d), Pulse("qubit", omega_s, t_s, tau_pi))
    return PulseSchedule(pulses, t_s + 0.5 * tau_pi + readout_gap, delta_t_r)


def pi_amplitude_estimate(tau_pi):
    """Area pi/2 of Omega(t) rotates |g> to |e> under Omega(b + b^dag)."""
    return math.pi / (2.0 * tau_pi)


def golden_section_minimize(f, lo, hi, rtol=1e-4):
    """Minimize a unimodal scalar function on [lo, hi]; returns (x, f(x))."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rtol * 0.5 * abs(a + b):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def calibrate_pi_amplitude(system, tau_pi, delta_s=0.0, bracket=(0.5, 1.5), rtol=1e-4, delta_t_r=None):
    """Qubit drive amplitude minimizing the uncorrected ground population at t_r."""
    from .dynamics import simulate_protocol

    est = pi_amplitude_estimate(tau_pi)
    lo, hi = bracket[0] * est, bracket[1] * est
    dtr = system.readout.delta_t_r if delta_t_r is None else delta_t_r

    def objective(amp):
        return simulate_protocol(system, tau_pi, amp, 0.0, delta_s=delta_s, delta_t_r=dtr).p_tilde_g

    x, fx = golden_section_minimize(objective, lo, hi, rtol=rtol)
    edge = 10 * rtol * x
    if x - lo < edge or hi - x < edge:
        raise CalibrationError(f"pi amplitude minimum not bracketed in [{lo:.6g}, {hi:.6g}] rad/s")
    return x


def displacement_amplitude_for_population(lam, amplitude):
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not amplitude >= 0:
        raise ValueError("amplitude must be non-negative")
    return (lam * amplitude) ** 2

"""Lindblad evolution of the driven qubit-magnon system in the doubly rotating frame."""

from dataclasses import dataclass, field
import csv

import numpy as np

from . import kernels
from .hilbert import annihilation, embed, thermal_populations
from .pulses import WINDOW_HALF_WIDTH, Pulse, PulseSchedule, protocol_schedule


class IntegratorError(RuntimeError):
    def __init__(self, message, t):
        super().__init__(f"{message} at t = {t:.6e} s")
        self.t = t


@dataclass(frozen=True)
class EffectiveHamiltonianSpec:
    """Static part (Delta_s - alpha/2) n_b + alpha/2 n_b^2 + Delta_d n_c + 2 chi n_b n_c;
    drives enter as Omega_s(t)(b + b^dag) + Omega_d(t)(c + c^dag)."""
    delta_s: float = 0.0
    delta_d: float = 0.0
    alpha: float = 0.0
    chi_qm: float = 0.0
    n_levels_qubit: int = 3
    n_levels_magnon: int = 8

    def __post_init__(self):
        if self.n_levels_qubit < 2 or self.n_levels_magnon < 2:
            raise ValueError("truncations must be at least 2")

    @property
    def dims(self):
        return (self.n_levels_qubit, self.n_levels_magnon)

    @property
    def dim(self):
        return self.n_levels_qubit * self.n_levels_magnon

    def b(self):
        return embed(annihilation(self.n_levels_qubit), 0, self.dims)

    def c(self):
        return embed(annihilation(self.n_levels_magnon), 1, self.dims)

    def static(self):
        b, c = self.b(), self.c()
        nb = b.conj().T @ b
        nc = c.conj().T @ c
        return ((self.delta_s - self.alpha / 2) * nb + (self.alpha / 2) * nb @ nb
                + self.delta_d * nc + 2 * self.chi_qm * nb @ nc)

    def drive_operators(self):
        b, c = self.b(), self.c()
        return np.stack([b + b.conj().T, c + c.conj().T])

    @classmethod
    def from_system(cls, system, delta_s=0.0, n_levels_magnon=None):
        return cls(delta_s, system.delta_d, system.alpha, system.chi_qm, system.hilbert.n_levels_qubit,
                   n_levels_magnon or system.hilbert.n_levels_magnon)


@dataclass(frozen=True)
class CollapseChannel:
    rate: float
    operator: np.ndarray
    label: str = ""

    def __post_init__(self):
        if not self.rate >= 0:
            raise ValueError("collapse rate must be non-negative")


def collapse_channels(system, spec):
    """Qubit relaxation/excitation/dephasing and magnon relaxation/excitation."""
    q, m = system.qubit, system.magnon
    b, c = spec.b(), spec.c()
    nth_q = q.n_th_q(spec.n_levels_qubit)
    g1, gphi = q.gamma_1, q.gamma_phi
    chans = [
        CollapseChannel(g1 * (1 + nth_q), b, "qubit relaxation"),
        CollapseChannel(g1 * nth_q, b.conj().T, "qubit excitation"),
        CollapseChannel(2 * gphi, b.conj().T @ b, "qubit dephasing"),
        CollapseChannel(m.gamma_m * (1 + m.n_th_m), c, "magnon relaxation"),
        CollapseChannel(m.gamma_m * m.n_th_m, c.conj().T, "magnon excitation"),
    ]
    return tuple(ch for ch in chans if ch.rate > 0)


def initial_state(system, spec, magnon_fock=None):
    """Thermal qubit with P(g) = 1 - eps_ini times a thermal (or Fock) magnon state."""
    pq = thermal_populations(system.qubit.n_th_q(spec.n_levels_qubit), spec.n_levels_qubit)
    if magnon_fock is None:
        pm = thermal_populations(system.magnon.n_th_m, spec.n_levels_magnon)
    else:
        if not 0 <= magnon_fock < spec.n_levels_magnon:
            raise ValueError("magnon Fock state outside the truncation")
        pm = np.zeros(spec.n_levels_magnon)
        pm[magnon_fock] = 1.0
    return np.diag(np.kron(pq, pm)).astype(complex)


def _jump_stack(channels, dim):
    if not channels:
        return np.zeros((0, dim, dim), dtype=complex)
    return np.ascontiguousarray(np.stack([np.sqrt(ch.rate) * np.asarray(ch.operator, dtype=complex)
                                          for ch in channels]))


def _heff0(h_static, jumps):
    k = sum((l.conj().T @ l for l in jumps), np.zeros_like(h_static))
    return np.ascontiguousarray(h_static - 0.5j * k)


def _operator_bands(h_spec, channels):
    """Kernel operator tuple: effective Hamiltonian, drives and jumps in band form."""
    dim = h_spec.dim
    jumps = _jump_stack(channels, dim)
    heff0 = _heff0(h_spec.static().astype(complex), jumps)
    h = kernels.to_bands([heff0], dim)
    d = kernels.to_bands(list(h_spec.drive_operators().astype(complex)), dim)
    j = kernels.to_bands(list(jumps), dim)
    return tuple(np.ascontiguousarray(a) for a in (*h, *d, *j)), heff0, jumps


def _check_dims(rho, h_spec, channels):
    d = h_spec.dim
    if np.shape(rho) != (d, d):
        raise ValueError(f"density matrix shape {np.shape(rho)} does not match dimension {d}")
    for ch in channels:
        if np.shape(ch.operator) != (d, d):
            raise ValueError(f"collapse operator '{ch.label}' does not match dimension {d}")


def lindblad_rhs(rho, t, h_spec, channels, schedule=None):
    """Generator -i[H(t), rho] + sum_k gamma_k (L rho L^dag - {L^dag L, rho}/2)."""
    rho = np.ascontiguousarray(rho, dtype=complex)
    _check_dims(rho, h_spec, channels)
    ops, _, _ = _operator_bands(h_spec, channels)
    pulses = schedule.packed() if schedule is not None else np.zeros((0, kernels.PULSE_COLUMNS))
    return kernels.lindblad_rhs_kernel(rho, float(t), ops, np.ascontiguousarray(pulses))


@dataclass
class Trajectory:
    times: np.ndarray
    populations: np.ndarray  # (n_times, n_levels_qubit)
    n_m: np.ndarray
    final_state: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    states: np.ndarray | None = None

    @property
    def p_g(self):
        return self.populations[:, 0]

    @property
    def p_e(self):
        return self.populations[:, 1]

    @property
    def p_f(self):
        if self.populations.shape[1] < 3:
            return np.zeros(len(self.times))
        return self.populations[:, 2]

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["time_ns", "p_g", "p_e", "p_f", "n_m"])
            for row in zip(self.times * 1e9, self.p_g, self.p_e, self.p_f, self.n_m):
                w.writerow([f"{x:.12g}" for x in row])


def _stops(grid, breaks):
    grid = np.asarray(grid, dtype=float)
    span = grid[-1] - grid[0]
    tol = 1e-12 * max(span, abs(grid[-1]))
    flags = np.full(len(grid), kernels.STOP_RECORD, dtype=np.int64)
    extra = []
    for tb in breaks:
        if not grid[0] < tb < grid[-1]:
            continue
        j = int(np.argmin(np.abs(grid - tb)))
        if abs(grid[j] - tb) <= tol:
            flags[j] |= kernels.STOP_BREAK
        else:
            extra.append(tb)
    if not extra:
        return grid, flags
    t_all = np.concatenate([grid, extra])
    f_all = np.concatenate([flags, np.full(len(extra), kernels.STOP_BREAK, dtype=np.int64)])
    order = np.argsort(t_all, kind="stable")
    return t_all[order], f_all[order]


def reduced_observables(states, dims):
    nq, nm = dims
    diag = np.real(np.diagonal(states, axis1=1, axis2=2)).reshape(-1, nq, nm)
    pops = diag.sum(axis=2)
    n_m = (diag.sum(axis=1) * np.arange(nm)).sum(axis=1)
    return pops, n_m


def density_diagnostics(states):
    tr = np.real(np.trace(states, axis1=1, axis2=2))
    herm = np.max(np.abs(states - np.conj(np.swapaxes(states, 1, 2))), axis=(1, 2))
    herm_part = 0.5 * (states + np.conj(np.swapaxes(states, 1, 2)))
    min_eig = np.linalg.eigvalsh(herm_part).min(axis=1)
    return {"trace_error": float(np.max(np.abs(tr - 1.0))),
            "hermiticity_error": float(np.max(herm)),
            "min_eigenvalue": float(np.min(min_eig))}


def evolve(rho0, schedule, h_spec, channels, grid, rtol=1e-8, atol=1e-10, keep_states=False,
           max_steps=2_000_000):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("output grid must be strictly increasing with at least two points")
    rho0 = np.ascontiguousarray(rho0, dtype=complex)
    _check_dims(rho0, h_spec, channels)
    if abs(np.trace(rho0) - 1) > 1e-8 or np.max(np.abs(rho0 - rho0.conj().T)) > 1e-8:
        raise ValueError("initial state must be a unit-trace Hermitian matrix")
    if schedule is None:
        schedule = PulseSchedule((), grid[-1], 0.0)
    ops, heff0, _ = _operator_bands(h_spec, channels)
    drives = h_spec.drive_operators()
    pulses = np.ascontiguousarray(schedule.packed())
    t_stops, flags = _stops(grid, schedule.breakpoints())
    scale = np.linalg.norm(heff0, 2) + sum(abs(p[0]) * np.linalg.norm(drives[int(p[5])], 2) for p in pulses)
    h_init = min(0.01 / max(scale, 1e-300), t_stops[1] - t_stops[0])
    states, status, t_last, n_acc, n_rej = kernels.integrate(
        rho0, ops, pulses, t_stops, flags, float(rtol), float(atol), float(h_init), int(max_steps))
    if status != kernels.STATUS_OK:
        msg = {kernels.STATUS_MAX_STEPS: "step budget exhausted",
               kernels.STATUS_UNDERFLOW: "step size underflow",
               kernels.STATUS_NONFINITE: "non-finite state"}[int(status)]
        raise IntegratorError(msg, float(t_last))
    pops, n_m = reduced_observables(states, h_spec.dims)
    diag = density_diagnostics(states)
    diag.update(accepted_steps=int(n_acc), rejected_steps=int(n_rej))
    return Trajectory(grid, pops, n_m, states[-1].copy(), diag, states if keep_states else None)


@dataclass
class ProtocolRun:
    schedule: PulseSchedule
    trajectory: Trajectory

    @property
    def p_tilde_g(self):
        return float(self.trajectory.p_g[-1])

    @property
    def p_tilde_e(self):
        """Excited population with |f> folded in."""
        return 1.0 - self.p_tilde_g


def protocol_grid(schedule, dense, t0=0.0, max_spacing=1e-9):
    t_r = schedule.t_r
    if not dense:
        return np.array([t0, t_r])
    q = schedule.qubit_pulse
    spacing = min(max_spacing, q.duration / 40.0) if q is not None else max_spacing
    n = int(np.ceil((t_r - t0) / spacing)) + 1
    return np.linspace(t0, t_r, n)


def simulate_protocol(system, tau_pi, omega_s, omega_d, delta_s=0.0, delta_t_r=None, dense=False,
                      magnon_fock=None, n_levels_magnon=None):
    """Magnon pulse, conditional qubit pulse, evolution up to the readout instant."""
    dtr = system.readout.delta_t_r if delta_t_r is None else delta_t_r
    sched = protocol_schedule(tau_pi, omega_s, omega_d, system.tau_d, dtr, system.readout_gap)
    quiet_magnon = omega_d == 0 and magnon_fock in (None, 0) and system.magnon.n_th_m == 0
    if n_levels_magnon is None:
        # an undriven magnon in vacuum never leaves it
        n_levels_magnon = 2 if quiet_magnon else system.hilbert.n_levels_magnon
    spec = EffectiveHamiltonianSpec.from_system(system, delta_s, n_levels_magnon)
    chans = collapse_channels(system, spec)
    rho0 = initial_state(system, spec, magnon_fock)
    # rho0 is stationary before the first pulse when the magnon starts in its steady state
    t0 = 0.0
    if magnon_fock not in (None, 0):
        if omega_d != 0:
            raise ValueError("a prepared Fock state is probed without magnon drive")
        # the Fock state is prepared when the qubit pulse window opens
        t0 = sched.qubit_pulse.bounds[0]
    elif not dense:
        t0 = min(sched.active_start(), sched.t_r - 1e-12)
        t0 = max(t0, 0.0)
    grid = protocol_grid(sched, dense, t0)
    traj = evolve(rho0, sched, spec, chans, grid, system.rtol, system.atol)
    return ProtocolRun(sched, traj)


def readout_delay_scan(system, tau_pi, omega_s, delays, delta_s=0.0):
    """Population of |e> alone at readout start + each delay.

    Leakage to |f> is left out so that it counts as control error.
    """
    delays = np.asarray(delays, dtype=float)
    sched = protocol_schedule(tau_pi, omega_s, 0.0, system.tau_d, float(delays[-1]), system.readout_gap)
    spec = EffectiveHamiltonianSpec.from_system(system, delta_s, 2)
    chans = collapse_channels(system, spec)
    rho0 = initial_state(system, spec)
    t0 = sched.qubit_pulse.bounds[0]
    times = sched.readout_start + delays
    grid = np.concatenate([[t0], times]) if times[0] > t0 else times
    traj = evolve(rho0, sched, spec, chans, grid, system.rtol, system.atol)
    return traj.p_e[-len(times):]


def ramsey_evolve(system, delta_s, taus, omega_d, pi_amplitude, tau_pulse=12e-9, settle=None,
                  n_levels_magnon=None, jobs=1):
    """Excited probability 1 - p~_g after pi/2 - tau - pi/2 under a continuous magnon drive.

    tau is the separation between the pulse centers, so the oscillation has zero
    phase at tau = 0. Drives are time independent between the pulses, so one
    free-evolution run feeds every second-pulse run; separations shorter than a
    pulse window are run directly with overlapping pulses.
    """
    taus = np.asarray(taus, dtype=float)
    if np.any(np.diff(taus) <= 0) or taus[0] < 0:
        raise ValueError("pulse separations must be non-negative and increasing")
    if n_levels_magnon is None:
        n_levels_magnon = system.hilbert.n_levels_magnon if omega_d > 0 else 2
    spec = EffectiveHamiltonianSpec.from_system(system, delta_s, n_levels_magnon)
    chans = collapse_channels(system, spec)
    rho = initial_state(system, spec)
    half = 0.5 * pi_amplitude
    width = 2 * WINDOW_HALF_WIDTH * tau_pulse
    c1 = 0.5 * width
    if settle is None:
        settle = 20.0 / system.magnon.gamma_m if omega_d > 0 else 0.0
    big = 1e3

    def flat(lo, hi):
        return Pulse("magnon", omega_d, 0.5 * (lo + hi), hi - lo, "flat", (lo, hi))

    def clean(r):
        r = 0.5 * (r + r.conj().T)
        return r / np.trace(r).real

    if settle > 0:
        sched = PulseSchedule((flat(-1.0, big),), settle, 0.0)
        rho = clean(evolve(rho, sched, spec, chans, [0.0, settle], system.rtol, system.atol).final_state)
    settled = rho
    first = Pulse("qubit", half, c1, tau_pulse)
    sched = PulseSchedule((first, flat(-1.0, big)), width, 0.0)
    rho = clean(evolve(rho, sched, spec, chans, [0.0, width], system.rtol, system.atol).final_state)

    chained = taus >= width
    states = {}
    if np.any(chained):
        gaps = taus[chained] - width
        free = PulseSchedule((flat(-1.0, big),), max(gaps[-1], 1e-15), 0.0)
        if gaps[-1] > 0:
            grid = np.concatenate([[0.0], gaps]) if gaps[0] > 0 else gaps
            traj = evolve(rho, free, spec, chans, grid, system.rtol, system.atol, keep_states=True)
            found = traj.states[1:] if gaps[0] > 0 else traj.states
        else:
            found = rho[None]
        for k, st in zip(np.flatnonzero(chained), found):
            states[int(k)] = st
    second = PulseSchedule((Pulse("qubit", half, c1, tau_pulse), flat(-1.0, big)), width, 0.0)

    def finish(k):
        if k in states:
            tr = evolve(clean(states[k]), second, spec, chans, [0.0, width], system.rtol, system.atol)
        else:
            both = (first, Pulse("qubit", half, c1 + taus[k], tau_pulse), flat(-1.0, big))
            end = taus[k] + width
            tr = evolve(settled, PulseSchedule(both, end, 0.0), spec, chans, [0.0, end],
                        system.rtol, system.atol)
        return 1.0 - tr.p_g[-1]

    from .parallel import ordered_map
    return np.array(ordered_map(finish, range(len(taus)), jobs))

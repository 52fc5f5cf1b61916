"""Truncated Fock-space operators, the qubit-magnon-cavity Hamiltonian and the
couplings and dispersive shift extracted from it."""

from dataclasses import dataclass, field
from functools import reduce
import math

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq, minimize_scalar

TWO_PI = 2.0 * np.pi
MHZ = TWO_PI * 1e6
GHZ = TWO_PI * 1e9


class LabelingError(ValueError):
    """Dressed eigenstates could not be matched to bare product states."""


def _check_finite(**values):
    for name, v in values.items():
        if v is not None and not np.isfinite(v):
            raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class CavityModeParams:
    index_p: int
    omega_p: float
    g_qp: float
    g_mp: float
    kappa_total: float | None = None
    kappa_in: float | None = None
    kappa_out: float | None = None
    kappa_int: float | None = None

    def __post_init__(self):
        _check_finite(omega_p=self.omega_p, g_qp=self.g_qp, g_mp=self.g_mp,
                      kappa_total=self.kappa_total, kappa_in=self.kappa_in,
                      kappa_out=self.kappa_out, kappa_int=self.kappa_int)
        for name in ("kappa_total", "kappa_in", "kappa_out", "kappa_int"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")
        if None not in (self.kappa_total, self.kappa_in, self.kappa_out):
            if self.kappa_total < (self.kappa_in + self.kappa_out) * (1 - 1e-9):
                raise ValueError("kappa_total must be at least kappa_in + kappa_out")


@dataclass(frozen=True)
class QubitParams:
    omega_q: float = 7.96563 * GHZ
    alpha: float = -144.0 * MHZ
    alpha0: float = -123.0 * MHZ
    omega_q0: float = 7.92109 * GHZ
    T1: float = 0.797e-6
    T2_star: float = 0.970e-6
    eps_ini: float = 0.04

    def __post_init__(self):
        _check_finite(omega_q=self.omega_q, alpha=self.alpha, alpha0=self.alpha0, omega_q0=self.omega_q0)
        if not self.T1 > 0:
            raise ValueError("T1 must be positive")
        if not self.T2_star > 0:
            raise ValueError("T2_star must be positive")
        if self.T2_star > 2 * self.T1 * (1 + 1e-9):
            raise ValueError("T2_star must not exceed 2*T1")
        if not 0 <= self.eps_ini < 1:
            raise ValueError("eps_ini must lie in [0, 1)")

    @property
    def gamma_1(self):
        return 0.0 if math.isinf(self.T1) else 1.0 / self.T1

    @property
    def gamma_q(self):
        return 0.0 if math.isinf(self.T2_star) else 2.0 / self.T2_star

    @property
    def gamma_phi(self):
        return max(0.0, (self.gamma_q - self.gamma_1) / 2.0)

    def n_th_q(self, n_levels=3):
        return thermal_occupancy_for_ground_error(self.eps_ini, n_levels)


@dataclass(frozen=True)
class MagnonParams:
    # bare frequency placing the dressed ground-branch line at omega_m_g
    omega_m: float = 7.7895638 * GHZ
    omega_m_g: float = 7.78861 * GHZ
    gamma_m: float = 1.61 * MHZ
    n_th_m: float = 0.0
    T1_m: float = 82e-9
    omega_m0: float = 8.148 * GHZ
    xi: float = 48.2 * MHZ / 1e-3

    def __post_init__(self):
        _check_finite(omega_m=self.omega_m, omega_m_g=self.omega_m_g)
        if not self.gamma_m > 0:
            raise ValueError("gamma_m must be positive")
        if not self.n_th_m >= 0:
            raise ValueError("n_th_m must be non-negative")

    def frequency_at_current(self, current):
        return self.omega_m0 + self.xi * current


@dataclass(frozen=True)
class HilbertConfig:
    n_levels_qubit: int = 3
    n_levels_magnon: int = 8
    n_cavity_modes_included: int = 4
    n_levels_cavity: int = 3

    def __post_init__(self):
        if self.n_levels_qubit < 2:
            raise ValueError("n_levels_qubit must be at least 2")
        if self.n_levels_magnon < 2:
            raise ValueError("n_levels_magnon must be at least 2")
        if self.n_levels_cavity < 2:
            raise ValueError("n_levels_cavity must be at least 2")
        if self.n_cavity_modes_included < 0:
            raise ValueError("n_cavity_modes_included must be non-negative")


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense operator on a product space with subsystem truncations ``dims``."""
    entries: np.ndarray
    dims: tuple = field(default=())

    @property
    def dim(self):
        return self.entries.shape[0]


def table_cavity_modes():
    """The four lowest TE10p modes (rates unknown for the fourth)."""
    rows = [
        (1, 6.98985, 1.26, 0.27, 0.13, 0.85, 83.2, -15.3),
        (2, 8.41164, 2.06, 0.70, 0.51, 0.85, 128.8, 22.85),
        (3, 10.43852, 3.64, 0.27, 1.27, 2.10, 135.1, -21.5),
        (4, 12.9202, None, None, None, None, 116.4, 12.7),
    ]
    modes = []
    for p, f, k, ki, ko, kint, gq, gm in rows:
        scale = lambda x: None if x is None else x * MHZ
        modes.append(CavityModeParams(p, f * GHZ, gq * MHZ, gm * MHZ,
                                      scale(k), scale(ki), scale(ko), scale(kint)))
    return tuple(modes)


def thermal_occupancy_for_ground_error(eps_ini, n_levels=3):
    """Mean occupancy of a truncated thermal ladder with P(ground) = 1 - eps_ini."""
    if eps_ini <= 0:
        return 0.0
    if not eps_ini < 1 - 1.0 / n_levels:
        raise ValueError("eps_ini too large for a thermal state on this truncation")
    ks = np.arange(n_levels)
    r = brentq(lambda r: 1.0 / np.sum(r ** ks) - (1.0 - eps_ini), 0.0, 1.0 - 1e-12, xtol=1e-15)
    return r / (1.0 - r)


def thermal_populations(n_th, n_levels):
    """Boltzmann ladder p_k ∝ r^k with r = n/(1+n), truncated and renormalized."""
    if n_th <= 0:
        p = np.zeros(n_levels)
        p[0] = 1.0
        return p
    r = n_th / (1.0 + n_th)
    p = r ** np.arange(n_levels)
    return p / p.sum()


def annihilation(n_levels):
    if n_levels < 2:
        raise ValueError("n_levels must be at least 2")
    return np.diag(np.sqrt(np.arange(1, n_levels)), 1).astype(complex)


def embed(op, slot, dims):
    op = np.asarray(op)
    dims = [int(d) for d in dims]
    if not 0 <= slot < len(dims):
        raise ValueError("slot out of range")
    if op.shape != (dims[slot], dims[slot]):
        raise ValueError(f"operator shape {op.shape} does not match dims[{slot}] = {dims[slot]}")
    factors = [np.eye(d) for d in dims]
    factors[slot] = op
    return reduce(np.kron, factors)


def _embed_sparse(op, slot, dims):
    factors = [sp.identity(d, format="csr") for d in dims]
    factors[slot] = sp.csr_matrix(op)
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), factors)


def _parts(qubit, magnon, cavities, cfg):
    modes = list(cavities)[: cfg.n_cavity_modes_included]
    if not modes:
        raise ValueError("at least one cavity mode must be retained")
    for x in (qubit.omega_q, qubit.alpha, magnon.omega_m):
        _check_finite(value=x)
    dims = [cfg.n_levels_qubit, cfg.n_levels_magnon] + [cfg.n_levels_cavity] * len(modes)
    return modes, dims


def _hamiltonian_sparse(qubit, magnon, cavities, cfg):
    modes, dims = _parts(qubit, magnon, cavities, cfg)
    b = _embed_sparse(annihilation(dims[0]), 0, dims)
    c = _embed_sparse(annihilation(dims[1]), 1, dims)
    nb = b.getH() @ b
    h = qubit.omega_q * nb + 0.5 * qubit.alpha * (nb @ nb - nb) + magnon.omega_m * (c.getH() @ c)
    for k, mode in enumerate(modes):
        a = _embed_sparse(annihilation(dims[2 + k]), 2 + k, dims)
        h = h + mode.omega_p * (a.getH() @ a)
        h = h + mode.g_qp * (a.getH() @ b + b.getH() @ a)
        h = h + mode.g_mp * (a.getH() @ c + c.getH() @ a)
    return h.tocsr(), dims


def build_total_hamiltonian(qubit, magnon, cavities, cfg=HilbertConfig()):
    """Duffing transmon, Kittel mode and cavity modes with RWA exchange couplings."""
    h, dims = _hamiltonian_sparse(qubit, magnon, cavities, cfg)
    return OperatorMatrix(h.toarray(), tuple(dims))


def excitation_number(dims):
    """Total quantum number of each product basis state (conserved by the RWA)."""
    grids = np.meshgrid(*[np.arange(d) for d in dims], indexing="ij")
    return sum(grids).ravel()


def _bare_index(levels, dims):
    return int(np.ravel_multi_index(tuple(levels), tuple(dims)))


def _block_eig(h, dims, n_exc):
    nvec = excitation_number(dims)
    idx = np.flatnonzero(nvec == n_exc)
    if sp.issparse(h):
        block = h[idx][:, idx].toarray()
    else:
        block = np.asarray(h)[np.ix_(idx, idx)]
    evals, evecs = np.linalg.eigh(block)
    return idx, evals, evecs


def _labelled_energy(h, dims, levels):
    """Energy of the dressed state with maximal overlap with a bare product state."""
    n_exc = int(sum(levels))
    idx, evals, evecs = _block_eig(h, dims, n_exc)
    pos = int(np.flatnonzero(idx == _bare_index(levels, dims))[0])
    weights = np.abs(evecs[pos, :]) ** 2
    best = int(np.argmax(weights))  # first index on ties
    if weights[best] < 0.5:
        raise LabelingError(f"bare state {tuple(levels)} has maximal dressed overlap {weights[best]:.3f} < 0.5")
    return evals[best]


def _hamiltonian_input(h, dims):
    if isinstance(h, OperatorMatrix):
        return h.entries, h.dims
    if dims is None:
        raise ValueError("dims are required for a bare matrix")
    return h, tuple(dims)


def dressed_energy(h, levels, dims=None):
    mat, dims = _hamiltonian_input(h, dims)
    full = list(levels) + [0] * (len(dims) - len(levels))
    return _labelled_energy(mat, dims, full)


def dispersive_shift_numeric(h, dims=None):
    """Half the e/g difference of the one-magnon frequency shift of the dressed qubit."""
    mat, dims = _hamiltonian_input(h, dims)
    rest = [0] * (len(dims) - 2)
    e = {(q, m): _labelled_energy(mat, dims, [q, m] + rest) for q in (0, 1) for m in (0, 1)}
    return (e[1, 1] - e[0, 1] - e[1, 0] + e[0, 0]) / 2.0


def dressed_magnon_frequency(qubit, magnon, cavities, cfg=HilbertConfig()):
    h, dims = _hamiltonian_sparse(qubit, magnon, cavities, cfg)
    rest = [0] * (len(dims) - 2)
    return _labelled_energy(h, dims, [0, 1] + rest) - _labelled_energy(h, dims, [0, 0] + rest)


def dressed_qubit_frequency(qubit, magnon, cavities, cfg=HilbertConfig()):
    h, dims = _hamiltonian_sparse(qubit, magnon, cavities, cfg)
    rest = [0] * (len(dims) - 2)
    return _labelled_energy(h, dims, [1, 0] + rest) - _labelled_energy(h, dims, [0, 0] + rest)


def dispersive_shift_at(qubit, magnon, cavities, cfg=HilbertConfig()):
    h, dims = _hamiltonian_sparse(qubit, magnon, cavities, cfg)
    return dispersive_shift_numeric(h, dims)


def bare_magnon_frequency_for_dressed(target, qubit, magnon, cavities, cfg=HilbertConfig(),
                                      halfwidth=50.0 * MHZ):
    """Bare Kittel frequency whose dressed ground-branch line sits at ``target``."""
    def f(wm):
        m = MagnonParams(**{**magnon.__dict__, "omega_m": wm})
        return dressed_magnon_frequency(qubit, m, cavities, cfg) - target
    return brentq(f, target - halfwidth, target + halfwidth, xtol=1e-3, rtol=1e-15)


def operating_point(qubit=None, magnon=None, cavities=None, cfg=HilbertConfig()):
    """Magnon parameters re-tuned so the dressed line matches ``magnon.omega_m_g``."""
    qubit = qubit or QubitParams()
    magnon = magnon or MagnonParams()
    cavities = cavities if cavities is not None else table_cavity_modes()
    wm = bare_magnon_frequency_for_dressed(magnon.omega_m_g, qubit, magnon, cavities, cfg)
    return MagnonParams(**{**magnon.__dict__, "omega_m": wm})


def coupling_perturbative(qubit, cavities, omega_qm):
    total = 0.0
    for mode in cavities:
        det = omega_qm - mode.omega_p
        if det == 0:
            raise ValueError(f"omega_qm is resonant with cavity mode {mode.index_p}")
        total += mode.g_qp * mode.g_mp / det
    return total


def _single_excitation_splitting(h, dims):
    idx, evals, evecs = _block_eig(h, dims, 1)
    rest = [0] * (len(dims) - 2)
    iq = int(np.flatnonzero(idx == _bare_index([1, 0] + rest, dims))[0])
    im = int(np.flatnonzero(idx == _bare_index([0, 1] + rest, dims))[0])
    weight = np.abs(evecs[iq, :]) ** 2 + np.abs(evecs[im, :]) ** 2
    pair = np.sort(np.argsort(weight)[-2:])
    if weight[pair].sum() < 1.0:
        raise LabelingError("qubit-magnon doublet not identifiable in the single-excitation block")
    return abs(evals[pair[1]] - evals[pair[0]])


def coupling_numeric(qubit, magnon, cavities, cfg=HilbertConfig(), halfwidth=150.0 * MHZ, center=None):
    """Half the minimal qubit-magnon splitting found by tuning the bare Kittel frequency.

    Only the single-excitation block enters, so the search runs on that block.
    """
    cfg1 = HilbertConfig(2, 2, cfg.n_cavity_modes_included, 2)
    center = qubit.omega_q if center is None else center

    def split(wm):
        m = MagnonParams(**{**magnon.__dict__, "omega_m": wm})
        h, dims = _hamiltonian_sparse(qubit, m, cavities, cfg1)
        return _single_excitation_splitting(h, dims)

    res = minimize_scalar(split, bounds=(center - halfwidth, center + halfwidth), method="bounded",
                          options={"xatol": 1.0})
    if abs(res.x - (center - halfwidth)) < 10 or abs(res.x - (center + halfwidth)) < 10:
        raise LabelingError("avoided crossing not found inside the search window")
    return 0.5 * res.fun


def dispersive_shift_perturbative(g_qm, alpha0, delta_qm):
    if delta_qm == 0 or delta_qm + alpha0 == 0:
        raise ValueError("dispersive shift diverges at the straddling-regime boundary "
                         "(delta_qm = 0 or delta_qm = -alpha0)")
    return alpha0 * g_qm ** 2 / (delta_qm * (delta_qm + alpha0))


def purcell_limit(qubit, cavities, n_modes=3):
    """Qubit T1 bound from Purcell decay through the first ``n_modes`` modes."""
    rate = 0.0
    for mode in list(cavities)[:n_modes]:
        if mode.kappa_total is None:
            raise ValueError(f"cavity mode {mode.index_p} has no linewidth")
        det = qubit.omega_q - mode.omega_p
        if det == 0:
            raise ValueError(f"qubit is resonant with cavity mode {mode.index_p}")
        rate += mode.kappa_total * (mode.g_qp / det) ** 2
    return math.inf if rate == 0 else 1.0 / rate

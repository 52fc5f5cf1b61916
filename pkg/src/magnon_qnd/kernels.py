"""Hot loops: Lindblad right-hand side and an adaptive Dormand-Prince 5(4) stepper.

The same source runs under numba or as plain numpy (see ``_jit``). Pulses are
packed in a float array with one row per pulse:

    amplitude, center, duration, window_lo, window_hi, operator_index, shape

``shape`` is 0 for the Gaussian envelope and 1 for a flat (continuous) drive.

Operators are stored as diagonal bands: a matrix A is the sum over its nonzero
diagonals of diag(v) P, where P picks column cols[r] in row r. Ladder, number
and drive operators have one or two bands, so every product with rho is an
O(dim^2) gather instead of a dense matrix product.
"""

import numpy as np

from ._jit import USE_NUMBA, njit

PULSE_COLUMNS = 7
SHAPE_GAUSSIAN = 0
SHAPE_FLAT = 1

STOP_RECORD = 1
STOP_BREAK = 2

STATUS_OK = 0
STATUS_MAX_STEPS = 1
STATUS_UNDERFLOW = 2
STATUS_NONFINITE = 3

# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
# difference between the 5th and embedded 4th order weights
_E1 = 71.0 / 57600.0
_E3 = -71.0 / 16695.0
_E4 = 71.0 / 1920.0
_E5 = -17253.0 / 339200.0
_E6 = 22.0 / 525.0
_E7 = -1.0 / 40.0


@njit(cache=True, nogil=True)
def pulse_active(t, pulses):
    """Mask of pulses whose window contains t (closed interval)."""
    n = pulses.shape[0]
    mask = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        mask[k] = pulses[k, 3] <= t <= pulses[k, 4]
    return mask


@njit(cache=True, nogil=True)
def drive_coefficients(t, pulses, active, n_ops):
    coef = np.zeros(n_ops)
    for k in range(pulses.shape[0]):
        if not active[k]:
            continue
        amp = pulses[k, 0]
        op = int(pulses[k, 5])
        if int(pulses[k, 6]) == SHAPE_GAUSSIAN:
            x = (t - pulses[k, 1]) / pulses[k, 2]
            coef[op] += amp * np.exp(-np.pi * x * x)
        else:
            coef[op] += amp
    return coef


def to_bands(matrices, dim=None):
    """Band form (vals, cols) of a stack of matrices, padded to a common band count."""
    mats = [np.asarray(m, dtype=np.complex128) for m in matrices]
    if dim is None:
        dim = mats[0].shape[0] if mats else 1
    rows = np.arange(dim)
    per_op = []
    for m in mats:
        terms = []
        for d in range(-dim + 1, dim):
            diag = np.diagonal(m, offset=d)
            if not np.any(diag):
                continue
            v = np.zeros(dim, dtype=np.complex128)
            c = rows.copy()
            if d >= 0:
                v[:dim - d] = diag
                c[:dim - d] = rows[:dim - d] + d
            else:
                v[-d:] = diag
                c[-d:] = rows[-d:] + d
            terms.append((v, c))
        per_op.append(terms)
    n_terms = max([1] + [len(t) for t in per_op])
    vals = np.zeros((len(mats), n_terms, dim), dtype=np.complex128)
    cols = np.tile(rows, (len(mats), n_terms, 1)).astype(np.int64)
    for k, terms in enumerate(per_op):
        for t, (v, c) in enumerate(terms):
            vals[k, t] = v
            cols[k, t] = c
    return vals, cols


def _band_apply_numpy(vals, cols, rho):
    out = np.zeros_like(rho)
    for t in range(vals.shape[0]):
        out += vals[t][:, None] * rho[cols[t], :]
    return out


def _band_sandwich_numpy(vals, cols, rho):
    out = np.zeros_like(rho)
    for a in range(vals.shape[0]):
        rows_a = rho[cols[a], :]
        for b in range(vals.shape[0]):
            out += np.outer(vals[a], np.conj(vals[b])) * rows_a[:, cols[b]]
    return out


@njit(cache=True, nogil=True)
def _band_apply_loops(vals, cols, rho):
    d = rho.shape[0]
    out = np.zeros_like(rho)
    for t in range(vals.shape[0]):
        for r in range(d):
            v = vals[t, r]
            if v == 0:
                continue
            c = cols[t, r]
            for s in range(d):
                out[r, s] += v * rho[c, s]
    return out


@njit(cache=True, nogil=True)
def _band_sandwich_loops(vals, cols, rho):
    d = rho.shape[0]
    out = np.zeros_like(rho)
    for a in range(vals.shape[0]):
        for b in range(vals.shape[0]):
            for r in range(d):
                va = vals[a, r]
                if va == 0:
                    continue
                ca = cols[a, r]
                for s in range(d):
                    vb = vals[b, s]
                    if vb != 0:
                        out[r, s] += va * np.conj(vb) * rho[ca, cols[b, s]]
    return out


# explicit loops compile to tight code; the gathers vectorize in plain numpy
if USE_NUMBA:
    band_apply, band_sandwich = _band_apply_loops, _band_sandwich_loops
else:
    band_apply, band_sandwich = _band_apply_numpy, _band_sandwich_numpy
band_apply.__doc__ = "A @ rho for one operator in band form."
band_sandwich.__doc__ = "L @ rho @ L^dag for one operator in band form."


@njit(cache=True, nogil=True)
def rhs_active(rho, t, ops, pulses, active):
    """d(rho)/dt with the non-Hermitian effective Hamiltonian split.

    ops = (h_vals, h_cols, d_vals, d_cols, j_vals, j_cols) in band form, with
    h = H0 - (i/2) sum_k L_k^dag L_k, d the drive operators and j the jump
    operators. The generator reads -i (Heff rho - rho Heff^dag) + sum_k L_k rho L_k^dag.
    """
    h_vals, h_cols, d_vals, d_cols, j_vals, j_cols = ops
    coef = drive_coefficients(t, pulses, active, d_vals.shape[0])
    x = band_apply(h_vals[0], h_cols[0], rho)
    for k in range(d_vals.shape[0]):
        if coef[k] != 0.0:
            x += coef[k] * band_apply(d_vals[k], d_cols[k], rho)
    out = -1j * (x - np.conj(x.T))
    for k in range(j_vals.shape[0]):
        out += band_sandwich(j_vals[k], j_cols[k], rho)
    return out


@njit(cache=True, nogil=True)
def lindblad_rhs_kernel(rho, t, ops, pulses):
    return rhs_active(rho, t, ops, pulses, pulse_active(t, pulses))


@njit(cache=True, nogil=True)
def _error_norm(y, y_new, err, rtol, atol):
    sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    r = np.abs(err) / sc
    return np.sqrt(np.mean(r * r))


@njit(cache=True, nogil=True)
def integrate(rho0, ops, pulses, t_stops, stop_flags, rtol, atol, h_init, max_steps):
    """Integrate from t_stops[0] through every stop, recording flagged stops.

    Each step stays inside one segment between consecutive stops, and the set
    of active pulses is frozen per segment so truncated envelopes switch
    cleanly at their window edges.

    Returns (states, status, t_last, n_accepted, n_rejected).
    """
    d = rho0.shape[0]
    n_rec = 0
    for s in range(t_stops.shape[0]):
        if stop_flags[s] & STOP_RECORD:
            n_rec += 1
    states = np.zeros((n_rec, d, d), dtype=np.complex128)
    y = rho0.copy()
    t = t_stops[0]
    i_rec = 0
    if stop_flags[0] & STOP_RECORD:
        states[0] = y
        i_rec = 1
    n_acc = 0
    n_rej = 0
    span = t_stops[-1] - t_stops[0]
    h = h_init
    active = pulse_active(0.5 * (t_stops[0] + t_stops[min(1, t_stops.shape[0] - 1)]), pulses)
    k1 = rhs_active(y, t, ops, pulses, active)
    for s in range(1, t_stops.shape[0]):
        t_target = t_stops[s]
        new_active = pulse_active(0.5 * (t + t_target), pulses)
        changed = False
        for k in range(active.shape[0]):
            if new_active[k] != active[k]:
                changed = True
        if changed or (stop_flags[s - 1] & STOP_BREAK):
            active = new_active
            k1 = rhs_active(y, t, ops, pulses, active)
        facmax = 10.0
        while t < t_target:
            if n_acc + n_rej >= max_steps:
                return states, STATUS_MAX_STEPS, t, n_acc, n_rej
            if h < 1e-13 * max(abs(t), span):
                return states, STATUS_UNDERFLOW, t, n_acc, n_rej
            last = t_target - t <= h
            hs = t_target - t if last else h
            k2 = rhs_active(y + hs * _A21 * k1, t + _C2 * hs, ops, pulses, active)
            k3 = rhs_active(y + hs * (_A31 * k1 + _A32 * k2), t + _C3 * hs, ops, pulses, active)
            k4 = rhs_active(y + hs * (_A41 * k1 + _A42 * k2 + _A43 * k3), t + _C4 * hs,
                            ops, pulses, active)
            k5 = rhs_active(y + hs * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4), t + _C5 * hs,
                            ops, pulses, active)
            k6 = rhs_active(y + hs * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5), t + hs,
                            ops, pulses, active)
            y_new = y + hs * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
            k7 = rhs_active(y_new, t + hs, ops, pulses, active)
            err = hs * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
            en = _error_norm(y, y_new, err, rtol, atol)
            if not np.isfinite(en):
                return states, STATUS_NONFINITE, t, n_acc, n_rej
            if en <= 1.0:
                t = t_target if last else t + hs
                y = y_new
                k1 = k7
                n_acc += 1
                fac = facmax if en == 0.0 else min(facmax, max(0.2, 0.9 * en ** -0.2))
                if not last:
                    h = hs * fac
                elif fac < 1.0:
                    h = min(h, hs * fac)
                facmax = 10.0
            else:
                n_rej += 1
                h = hs * max(0.2, 0.9 * en ** -0.2)
                facmax = 1.0
        if stop_flags[s] & STOP_RECORD:
            states[i_rec] = y
            i_rec += 1
    return states, STATUS_OK, t, n_acc, n_rej

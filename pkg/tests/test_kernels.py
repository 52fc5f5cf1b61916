import json
import os
import subprocess
import sys

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from magnon_qnd import kernels
from magnon_qnd.dynamics import CollapseChannel, EffectiveHamiltonianSpec, lindblad_rhs
from magnon_qnd.hilbert import MHZ
from magnon_qnd.pulses import protocol_schedule


def _dense(vals, cols):
    d = vals.shape[-1]
    out = np.zeros((d, d), dtype=complex)
    for t in range(vals.shape[0]):
        out[np.arange(d), cols[t]] += vals[t]
    return out


@st.composite
def banded(draw, max_dim=6):
    d = draw(st.integers(1, max_dim))
    m = draw(arrays(np.complex128, (d, d), elements=st.complex_numbers(max_magnitude=5, allow_nan=False,
                                                                       allow_infinity=False)))
    keep = draw(arrays(np.bool_, (d, d)))
    return np.where(keep, m, 0)


@settings(max_examples=60, deadline=None)
@given(banded())
def test_band_form_reconstructs_matrix(m):
    vals, cols = kernels.to_bands([m])
    assert np.array_equal(_dense(vals[0], cols[0]), m)


@settings(max_examples=40, deadline=None)
@given(banded(5), st.data())
def test_band_products_match_dense(m, data):
    d = m.shape[0]
    rho = data.draw(arrays(np.complex128, (d, d), elements=st.complex_numbers(max_magnitude=3, allow_nan=False,
                                                                              allow_infinity=False)))
    vals, cols = kernels.to_bands([m])
    assert np.allclose(kernels.band_apply(vals[0], cols[0], rho), m @ rho, atol=1e-10)
    assert np.allclose(kernels.band_sandwich(vals[0], cols[0], rho), m @ rho @ m.conj().T, atol=1e-9)


def _dense_lindblad(rho, h, channels):
    out = -1j * (h @ rho - rho @ h)
    for ch in channels:
        l = np.sqrt(ch.rate) * ch.operator
        ld = l.conj().T
        out += l @ rho @ ld - 0.5 * (ld @ l @ rho + rho @ ld @ l)
    return out


def test_rhs_matches_dense_generator_during_pulses():
    spec = EffectiveHamiltonianSpec(delta_s=0.3 * MHZ, delta_d=-0.2 * MHZ, alpha=-120 * MHZ, chi_qm=-1.9 * MHZ,
                                    n_levels_qubit=3, n_levels_magnon=4)
    b, c = spec.b(), spec.c()
    chans = (CollapseChannel(1.3e6, b), CollapseChannel(0.1e6, b.conj().T), CollapseChannel(0.4e6, b.conj().T @ b),
             CollapseChannel(1e7, c))
    sched = protocol_schedule(40e-9, 3e7, 2e6, tau_d=60e-9)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(spec.dim, spec.dim)) + 1j * rng.normal(size=(spec.dim, spec.dim))
    rho = x @ x.conj().T
    rho /= np.trace(rho)
    q = sched.qubit_pulse
    for t in (q.center - 0.3 * q.duration, sched.magnon_pulse.center, q.center):
        h = spec.static() + sched.envelope(t, "qubit") * spec.drive_operators()[0] \
            + sched.envelope(t, "magnon") * spec.drive_operators()[1]
        got = lindblad_rhs(rho, t, spec, chans, sched)
        want = _dense_lindblad(rho, h, chans)
        assert np.allclose(got, want, atol=1e-12 * np.abs(want).max() * 10)


WORKER = r"""
import json
from magnon_qnd import _jit
from magnon_qnd.dynamics import simulate_protocol
from magnon_qnd.system import SystemParams
run = simulate_protocol(SystemParams(), 80e-9, 1.9953e7, 5e6, dense=False)
print(json.dumps({"backend": _jit.BACKEND, "p": run.p_tilde_g, "n": float(run.trajectory.n_m[-1])}))
"""


def _run_backend(flag):
    env = dict(os.environ, MAGNON_QND_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", WORKER], env=env, check=True, capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_numpy_fallback_agrees_with_numba():
    fast, slow = _run_backend("1"), _run_backend("0")
    assert fast["backend"] == "numba"
    assert slow["backend"] == "numpy"
    assert abs(fast["p"] - slow["p"]) < 1e-12
    assert abs(fast["n"] - slow["n"]) < 1e-12

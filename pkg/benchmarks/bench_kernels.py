"""Compare the numba and pure-numpy integrator backends.

Each backend runs in its own interpreter because the switch is read at import.
Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from magnon_qnd import _jit
from magnon_qnd.dynamics import simulate_protocol
from magnon_qnd.system import SystemParams

repeat = int(sys.argv[1])
s = SystemParams()
args = (s, 200e-9, 8.3746e6, 0.5 * s.magnon.gamma_m)
t0 = time.perf_counter()
run = simulate_protocol(*args, dense=True)   # includes compilation for numba
first = time.perf_counter() - t0
times = []
for _ in range(repeat):
    t0 = time.perf_counter()
    run = simulate_protocol(*args, dense=True)
    times.append(time.perf_counter() - t0)
print(json.dumps({"backend": _jit.BACKEND, "first_s": first, "best_s": min(times),
                  "p_tilde_g": run.p_tilde_g, "steps": run.trajectory.diagnostics["accepted_steps"]}))
"""


def run_backend(flag, repeat):
    env = dict(os.environ, MAGNON_QND_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    fast = run_backend("1", args.repeat)
    slow = run_backend("0", max(1, args.repeat // 3))
    for r in (fast, slow):
        print(f"{r['backend']:>6}: first {r['first_s']:.2f} s, best {r['best_s']:.3f} s, "
              f"{r['steps']} steps, p~_g = {r['p_tilde_g']:.12f}")
    print(f"speedup {slow['best_s'] / fast['best_s']:.1f}x, "
          f"|delta p~_g| = {abs(fast['p_tilde_g'] - slow['p_tilde_g']):.2e}")
    return fast, slow


if __name__ == "__main__":
    main()

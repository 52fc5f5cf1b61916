"""Command-line entry point: magnon-qnd <subcommand> --config path [...]."""

import argparse
import csv
import io
import json
import math
import os
import sys
import traceback
from dataclasses import replace

import numpy as np

from . import __version__
from .config import ConfigError, config_from_dict, load_config, with_run_overrides
from .detection import at_least_one_scheme, error_budget, exactly_one_scheme, tau_sweep
from .parallel import default_jobs, ordered_map
from .readout import bound_readout_fidelity, sample_shots

SUBCOMMANDS = ("detect", "sweep-tau", "budget", "spectrum", "readout-bounds", "calibrate")

DEFAULT_TOLERANCE = {"abs": 1e-9, "rel": 1e-9}


class GridPointError(RuntimeError):
    def __init__(self, point, cause):
        super().__init__(f"{type(cause).__name__} at {point}: {cause}")
        self.point = point
        self.cause = cause


class SchemaMismatch(ValueError):
    pass


def _at(point, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except GridPointError:
        raise
    except Exception as exc:
        raise GridPointError(point, exc) from exc


def _num(x):
    """Round-trippable JSON number; non-finite values become strings."""
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _ns(t):
    return round(float(t) * 1e9, 6)


def _provenance(cfg, subcommand):
    return {"config_sha256": cfg.physics_hash(), "version": __version__, "seed": cfg.run.seed,
            "subcommand": subcommand}


def _header_lines(prov):
    return [f"{k}={prov[k]}" for k in sorted(prov)]


def _write_csv(path, header, columns, rows):
    buf = io.StringIO(newline="")
    for line in _header_lines(header):
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _write_json(path, payload):
    with open(path, "w") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2, allow_nan=False))
        fh.write("\n")


def _system(cfg, jobs):
    if not cfg.readout_from_bounds:
        return cfg.system, None
    b = cfg.readout_bounds
    bounds = bound_readout_fidelity(cfg.system, tau_pi=b.tau_pi, cap=b.cap, step=b.step)
    return replace(cfg.system, readout=bounds.midrange), bounds


def _scheme(cfg, system):
    return at_least_one_scheme() if cfg.protocol.scheme == "at_least_one" else exactly_one_scheme(system)


def _metrics_dict(m):
    return {"scheme": m.scheme, "click_state": m.click_state, "tau_pi_ns": _ns(m.tau_pi),
            "dark_count": _num(m.dark_count), "efficiency": _num(m.efficiency),
            "dark_count_stderr": _num(m.dark_count_stderr), "efficiency_stderr": _num(m.efficiency_stderr),
            "residual_rms": _num(m.residual_rms)}


def _readout_dict(model):
    return {"eps_g": _num(model.eps_g), "eps_e": _num(model.eps_e), "delta_t_r_ns": _ns(model.delta_t_r),
            "fidelity": _num(model.fidelity)}


def run_detect(cfg, jobs, out, prov):
    from .dynamics import simulate_protocol
    from .pulses import calibrate_pi_amplitude

    system, _ = _system(cfg, jobs)
    scheme = _scheme(cfg, system)
    p = cfg.protocol
    point = {"tau_pi_ns": _ns(p.tau_pi)}
    amp = _at(point, calibrate_pi_amplitude, system, p.tau_pi)
    from .detection import fit_metrics, sweep
    sw = _at(point, sweep, system, scheme, p.tau_pi, amp, p.amplitudes, p.nbar_max, p.n_points, jobs=jobs)
    m = _at(point, fit_metrics, sw, scheme)
    columns = ["scheme", "tau_pi_ns", "omega_d_over_2pi_Hz", "nbar_m", f"p_{sw.click_state}"]
    rows = [[scheme.name, p.tau_pi * 1e9, float(a) / (2 * math.pi), float(n), float(q)]
            for a, n, q in zip(sw.amplitudes, sw.nbar, sw.probability)]
    if p.shots > 0:
        columns.append(f"p_{sw.click_state}_shots")
        for k, row in enumerate(rows):
            shots = sample_shots(row[4], p.shots, 0.0, 1.0, 0.25, seed=cfg.run.seed + k)
            row.append(float(shots.p_e_threshold))
    _write_csv(os.path.join(out, "sweep.csv"), prov, columns, rows)
    if cfg.run.emit_trajectory:
        run = simulate_protocol(system, p.tau_pi, amp, float(sw.amplitudes[-1]), scheme.delta_s, dense=True)
        run.trajectory.to_csv(os.path.join(out, "trajectory.csv"), _header_lines(prov))
    return {"metrics": _metrics_dict(m), "pi_amplitude_rad_per_s": _num(amp),
            "readout": _readout_dict(system.readout)}


def run_sweep_tau(cfg, jobs, out, prov):
    system, _ = _system(cfg, jobs)
    scheme = _scheme(cfg, system)
    p = cfg.protocol
    per_tau = ordered_map(lambda t: _at({"tau_pi_ns": _ns(t)}, tau_sweep, system, [t], scheme, p.nbar_max,
                                        p.n_points)[0], p.tau_pi_list, jobs)
    rows = [[m.scheme, m.tau_pi * 1e9, m.dark_count, m.efficiency, m.dark_count_stderr, m.efficiency_stderr]
            for m in per_tau]
    _write_csv(os.path.join(out, "sweep.csv"), prov,
               ["scheme", "tau_pi_ns", "dark_count", "efficiency", "dark_count_stderr", "efficiency_stderr"], rows)
    best = max(per_tau, key=lambda m: m.efficiency)
    return {"points": [_metrics_dict(m) for m in per_tau], "optimal_tau_pi_ns": _ns(best.tau_pi)}


def run_budget(cfg, jobs, out, prov):
    system, _ = _system(cfg, jobs)
    p = cfg.protocol
    budget = _at({"tau_pi_ns": _ns(p.tau_pi)}, error_budget, system, p.tau_pi, p.nbar_max, p.n_points, jobs)
    rows = [[r.source, r.dark_count, r.inefficiency] for r in budget.rows]
    _write_csv(os.path.join(out, "sweep.csv"), prov, ["source", "dark_count", "inefficiency"], rows)
    return {"tau_pi_ns": _ns(p.tau_pi),
            "rows": {r.source: {"dark_count": _num(r.dark_count), "inefficiency": _num(r.inefficiency)}
                     for r in budget.rows},
            "variants": {k: _metrics_dict(m) for k, m in budget.metrics.items()}}


def run_spectrum(cfg, jobs, out, prov):
    from .spectra import (GambettaSpectrumParams, find_peaks_simple, fock_weights, gambetta_spectrum,
                          normalized_fft_spectrum)

    system, _ = _system(cfg, jobs)
    s = cfg.spectrum
    gp = GambettaSpectrumParams.from_population(system.qubit.gamma_q, system.magnon.gamma_m, system.chi_qm,
                                                system.delta_d, s.delta_s, s.nbar)
    summary = {"kind": s.kind, "nbar": _num(s.nbar), "delta_s_over_2pi_Hz": _num(s.delta_s / (2 * math.pi)),
               "line_spacing_over_2pi_Hz": _num(abs(2 * system.chi_qm + system.delta_d) / (2 * math.pi)),
               "fock_terms": len(fock_weights(gp))}
    if s.kind == "gambetta":
        omega = np.linspace(s.omega_min, s.omega_max, s.n_omega)
        model = gambetta_spectrum(omega, gp)
        model = model / np.max(model)
        columns = ["omega_over_2pi_Hz", "s_model"]
        rows = [[float(w / (2 * math.pi)), float(v)] for w, v in zip(omega, model)]
        peaks = omega[find_peaks_simple(omega, model, 0.05)]
    else:
        from .dynamics import ramsey_evolve
        from .pulses import calibrate_pi_amplitude

        point = {"spectrum": "ramsey"}
        amp = _at(point, calibrate_pi_amplitude, system, s.tau_pulse)
        taus = np.arange(0.0, s.tau_max + 0.5 * s.tau_step, s.tau_step)
        p_e = _at(point, ramsey_evolve, system, s.delta_s, taus, gp.omega_d, amp, s.tau_pulse, jobs=jobs)
        freq, S = normalized_fft_spectrum(taus, p_e, subtract_mean=True)
        # the Ramsey record sees |detuning|; compare on the matching sign
        sign = 1.0 if s.delta_s >= 0 else -1.0
        model = gambetta_spectrum(sign * freq, gp)
        model = model / np.max(model)
        columns = ["omega_over_2pi_Hz", "S_ramsey", "s_model"]
        rows = [[float(sign * w / (2 * math.pi)), float(a), float(b)] for w, a, b in zip(freq, S, model)]
        idx = find_peaks_simple(freq, S, 0.1)
        # the lowest bins carry the slowly relaxing population baseline
        peaks = sign * freq[idx[idx >= 2]]
        summary["bin_over_2pi_Hz"] = _num((freq[1] - freq[0]) / (2 * math.pi))
        if cfg.run.emit_trajectory:
            _write_csv(os.path.join(out, "trajectory.csv"), prov, ["tau_ns", "p_e"],
                       [[float(t * 1e9), float(v)] for t, v in zip(taus, p_e)])
    _write_csv(os.path.join(out, "sweep.csv"), prov, columns, rows)
    summary["peaks_over_2pi_Hz"] = [_num(w / (2 * math.pi)) for w in sorted(peaks)]
    return summary


def run_readout_bounds(cfg, jobs, out, prov):
    from .detection import readout_delay_sensitivity

    b = cfg.readout_bounds
    bounds = _at({"scan": "readout_delay"}, bound_readout_fidelity, cfg.system, tau_pi=b.tau_pi, cap=b.cap,
                 step=b.step)
    from .readout import _raw_solution
    rows = []
    for d, e in zip(bounds.delays, bounds.eps_pi):
        if d > bounds.max_delay + b.step:
            break
        eg, ee = _raw_solution(cfg.system.measured, e)
        rows.append([float(d * 1e9), float(e), float(eg), float(ee)])
    _write_csv(os.path.join(out, "sweep.csv"), prov, ["delay_ns", "eps_pi", "eps_g", "eps_e"], rows)
    p = cfg.protocol
    d_dark, d_eff, _ = _at({"tau_pi_ns": _ns(p.tau_pi)}, readout_delay_sensitivity, cfg.system, bounds,
                           p.tau_pi, p.nbar_max, p.n_points, jobs)
    return {"F_r_min": _num(bounds.F_r_min), "F_r_max": _num(bounds.F_r_max),
            "max_delay_ns": _ns(bounds.max_delay), "midrange": _readout_dict(bounds.midrange),
            "pi_amplitude_rad_per_s": _num(bounds.pi_amplitude),
            "sensitivity": {"dark_count": _num(d_dark), "efficiency": _num(d_eff)}}


def run_calibrate(cfg, jobs, out, prov):
    from .detection import amplitudes_for_populations
    from .pulses import calibrate_pi_amplitude, pi_amplitude_estimate

    system, _ = _system(cfg, jobs)

    def one(t):
        amp = calibrate_pi_amplitude(system, t)
        # drive amplitude giving one control-weighted magnon
        unit = float(amplitudes_for_populations(system, t, [1.0], 0.0, amp)[0])
        return t, amp, unit

    res = ordered_map(lambda t: _at({"tau_pi_ns": _ns(t)}, one, t), cfg.protocol.tau_pi_list, jobs)
    rows = [[t * 1e9, a, a / pi_amplitude_estimate(t), u / (2 * math.pi)] for t, a, u in res]
    _write_csv(os.path.join(out, "sweep.csv"), prov,
               ["tau_pi_ns", "pi_amplitude_rad_per_s", "ratio_to_estimate", "omega_d_unit_over_2pi_Hz"], rows)
    return {"points": [{"tau_pi_ns": _ns(t), "pi_amplitude_rad_per_s": _num(a),
                        "omega_d_for_one_magnon_over_2pi_Hz": _num(u / (2 * math.pi))} for t, a, u in res]}


RUNNERS = {"detect": run_detect, "sweep-tau": run_sweep_tau, "budget": run_budget, "spectrum": run_spectrum,
           "readout-bounds": run_readout_bounds, "calibrate": run_calibrate}


def execute(subcommand, cfg):
    """Run one subcommand; returns the metrics payload written to metrics.json."""
    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    jobs = cfg.run.jobs or default_jobs()
    prov = _provenance(cfg, subcommand)
    payload = RUNNERS[subcommand](cfg, jobs, out, prov)
    doc = {"provenance": prov, "result": payload}
    _write_json(os.path.join(out, "metrics.json"), doc)
    return doc


# regression comparison

def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}.{k}" if prefix else k))
        return out
    if isinstance(obj, list):
        out = {}
        for i, v in enumerate(obj):
            out.update(_flatten(v, f"{prefix}[{i}]"))
        return out
    return {prefix: obj}


def regression_compare(result, baseline, tolerances=None, default=None):
    """Field-by-field comparison of two metrics documents (provenance ignored).

    ``tolerances`` maps a flattened field path to {"abs": a, "rel": r}; a field
    passes when |x - x0| <= max(abs, rel * |x0|). Returns (passed, violations).
    """
    tolerances = tolerances or {}
    default = default or DEFAULT_TOLERANCE
    a = _flatten(result.get("result", result))
    b = _flatten(baseline.get("result", baseline))
    if set(a) != set(b):
        missing = sorted(set(b) - set(a))
        extra = sorted(set(a) - set(b))
        raise SchemaMismatch(f"fields differ: missing {missing}, unexpected {extra}")
    violations = []
    for key in sorted(b):
        x, x0 = a[key], b[key]
        numeric = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (x, x0))
        if not numeric:
            if x != x0:
                violations.append({"field": key, "value": x, "baseline": x0})
            continue
        tol = tolerances.get(key, default)
        bound = max(tol.get("abs", 0.0), tol.get("rel", 0.0) * abs(x0))
        if not abs(x - x0) <= bound:
            violations.append({"field": key, "value": x, "baseline": x0, "difference": x - x0, "tolerance": bound})
    return not violations, violations


def _error_record(subcommand, exc):
    rec = {"error": type(exc).__name__, "message": str(exc), "subcommand": subcommand}
    if isinstance(exc, GridPointError):
        rec["grid_point"] = exc.point
        rec["error"] = type(exc.cause).__name__
        rec["message"] = str(exc.cause)
    if isinstance(exc, ConfigError):
        rec["path"] = exc.path
    return rec


def build_parser():
    parser = argparse.ArgumentParser(prog="magnon-qnd", description="Single-magnon detector simulations.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config; omitted means all defaults")
        p.add_argument("--jobs", type=int, help="worker threads (default: logical cores)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed for shot sampling")
        p.add_argument("--emit-trajectory", action="store_true", help="also write trajectory.csv")
    cmp_ = sub.add_parser("compare", help="compare a metrics.json against a baseline")
    cmp_.add_argument("result")
    cmp_.add_argument("baseline")
    cmp_.add_argument("--abs", type=float, default=DEFAULT_TOLERANCE["abs"], help="default absolute tolerance")
    cmp_.add_argument("--rel", type=float, default=DEFAULT_TOLERANCE["rel"], help="default relative tolerance")
    cmp_.add_argument("--tolerances", help="JSON file mapping field paths to {abs, rel}")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.subcommand == "compare":
            with open(args.result) as fh:
                result = json.load(fh)
            with open(args.baseline) as fh:
                baseline = json.load(fh)
            tolerances = {}
            if args.tolerances:
                with open(args.tolerances) as fh:
                    tolerances = json.load(fh)
            ok, violations = regression_compare(result, baseline, tolerances, {"abs": args.abs, "rel": args.rel})
            print(json.dumps({"passed": ok, "violations": violations}, sort_keys=True, indent=2))
            return 0 if ok else 1
        cfg = load_config(args.config) if args.config else config_from_dict({})
        cfg = with_run_overrides(cfg, out=args.out, seed=args.seed, jobs=args.jobs,
                                 emit_trajectory=args.emit_trajectory)
        doc = execute(args.subcommand, cfg)
        print(json.dumps(doc["result"], sort_keys=True, indent=2))
        return 0
    except Exception as exc:  # noqa: BLE001 - every failure becomes a machine-readable record
        rec = _error_record(args.subcommand, exc)
        if os.environ.get("MAGNON_QND_TRACEBACK"):
            traceback.print_exc()
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, SchemaMismatch, OSError, json.JSONDecodeError)) else 1


if __name__ == "__main__":
    sys.exit(main())

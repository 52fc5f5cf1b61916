import json
import subprocess
import sys
from importlib import resources

import pytest

from magnon_qnd.cli import SchemaMismatch, main, regression_compare
from magnon_qnd.config import ConfigError, config_from_dict, load_config, parse_config_text, with_run_overrides
from magnon_qnd.hilbert import MHZ
from magnon_qnd.system import SystemParams

QUICK = {"protocol": {"tau_pi_list": [80e-9]}}


def test_empty_config_is_default_device():
    cfg = config_from_dict({})
    assert cfg.system == SystemParams()
    assert cfg.protocol.tau_pi == 200e-9
    assert not cfg.readout_from_bounds


def test_invalid_physics_names_the_invariant():
    with pytest.raises(ConfigError, match="T1 must be positive") as exc:
        config_from_dict({"qubit": {"T1": -1e-6}})
    assert exc.value.path == "qubit"


@pytest.mark.parametrize("doc,path", [({"qubit_colour": "blue"}, "qubit_colour"),
                                      ({"qubit": {"colour": 1}}, "qubit.colour"),
                                      ({"cavities": [{"index_p": 1}]}, "cavities[0]"),
                                      ({"protocol": {"n_points": 2.5}}, "protocol.n_points"),
                                      ({"readout": "midrange"}, "readout")])
def test_strict_parsing(doc, path):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(doc)
    assert exc.value.path == path


def test_parse_error_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config_text('{\n  "qubit": {\n    "T1": ,\n  }\n}')
    with pytest.raises(ConfigError):
        parse_config_text('{"qubit": {"T1": NaN}}')
    with pytest.raises(ConfigError, match="top level"):
        parse_config_text("[1, 2]")


def test_frequencies_are_read_in_hz(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"chi_qm": -2.0e6, "magnon": {"gamma_m": 1.5e6}, "qubit": {"T1": 1e-6},
                                "protocol": {"amplitudes": [0.0, 1e6, 2e6]}, "readout": "bounds"}))
    cfg = load_config(path)
    assert cfg.system.chi_qm == pytest.approx(-2.0 * MHZ)
    assert cfg.system.magnon.gamma_m == pytest.approx(1.5 * MHZ)
    assert cfg.system.qubit.T1 == 1e-6
    assert cfg.protocol.amplitudes[2] == pytest.approx(2 * MHZ)
    assert cfg.readout_from_bounds


def test_flags_override_run_section():
    cfg = config_from_dict({"run": {"out": "a", "seed": 3, "jobs": 2}})
    new = with_run_overrides(cfg, out="b", seed=None, jobs=1, emit_trajectory=False)
    assert (new.run.out, new.run.seed, new.run.jobs) == ("b", 3, 1)
    # output placement and worker count do not change the physics hash
    assert new.physics_hash() == cfg.physics_hash()
    assert with_run_overrides(cfg, seed=4).physics_hash() != cfg.physics_hash()
    with pytest.raises(ConfigError):
        with_run_overrides(cfg, jobs=0)


def _run(tmp_path, name, doc, sub="calibrate", extra=()):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / name
    code = main([sub, "--config", str(cfg), "--out", str(out), "--jobs", "1", *extra])
    return code, out


def test_calibrate_outputs_are_reproducible(tmp_path, capsys):
    code_a, a = _run(tmp_path, "a", QUICK)
    code_b, b = _run(tmp_path, "b", QUICK)
    capsys.readouterr()
    assert code_a == code_b == 0
    for f in ("metrics.json", "sweep.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    lines = (a / "sweep.csv").read_text().splitlines()
    assert [l.split("=")[0] for l in lines[:4]] == ["# config_sha256", "# seed", "# subcommand", "# version"]
    assert lines[4] == "tau_pi_ns,pi_amplitude_rad_per_s,ratio_to_estimate,omega_d_unit_over_2pi_Hz"
    doc = json.loads((a / "metrics.json").read_text())
    assert doc["provenance"]["subcommand"] == "calibrate"
    assert doc["result"]["points"][0]["pi_amplitude_rad_per_s"] == pytest.approx(1.9953e7, rel=1e-4)


def test_spectrum_subcommand_reports_two_lines(tmp_path, capsys):
    code, out = _run(tmp_path, "s", {}, sub="spectrum")
    res = json.loads(capsys.readouterr().out)
    assert code == 0
    peaks = res["peaks_over_2pi_Hz"]
    assert len(peaks) == 2
    assert abs(abs(peaks[1] - peaks[0]) - res["line_spacing_over_2pi_Hz"]) < 0.390625e6
    assert (out / "sweep.csv").exists()


def test_config_error_record(tmp_path, capsys):
    code, _ = _run(tmp_path, "bad", {"qubit": {"T1": -1.0}})
    rec = json.loads(capsys.readouterr().err)
    assert code == 2
    assert rec["error"] == "ConfigError" and rec["path"] == "qubit" and rec["subcommand"] == "calibrate"


def test_failing_grid_point_record(tmp_path, capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("integrator exploded")
    monkeypatch.setattr("magnon_qnd.pulses.calibrate_pi_amplitude", broken)
    code, _ = _run(tmp_path, "fail", QUICK)
    rec = json.loads(capsys.readouterr().err)
    assert code == 1
    assert rec["grid_point"] == {"tau_pi_ns": 80.0}
    assert rec["error"] == "RuntimeError" and "exploded" in rec["message"]


def _metrics(**rows):
    return {"provenance": {"seed": 0}, "result": {"rows": rows}}


def test_compare_identical_and_offset():
    base = _metrics(total={"dark_count": 0.22, "inefficiency": 0.33})
    assert regression_compare(base, base) == (True, [])
    off = _metrics(total={"dark_count": 0.27, "inefficiency": 0.33})
    ok, bad = regression_compare(off, base, default={"abs": 0.01})
    assert not ok
    assert [v["field"] for v in bad] == ["rows.total.dark_count"]
    ok, _ = regression_compare(off, base, {"rows.total.dark_count": {"abs": 0.06}}, {"abs": 0.01})
    assert ok


def test_compare_schema_mismatch(tmp_path, capsys):
    with pytest.raises(SchemaMismatch):
        regression_compare(_metrics(a={"x": 1.0}), _metrics(a={"y": 1.0}))
    (tmp_path / "r.json").write_text(json.dumps(_metrics(a={"x": 1.0})))
    (tmp_path / "b.json").write_text(json.dumps(_metrics(a={"y": 1.0})))
    assert main(["compare", str(tmp_path / "r.json"), str(tmp_path / "b.json")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "SchemaMismatch"


def test_fresh_budget_matches_shipped_baseline(tmp_path, capsys):
    code, out = _run(tmp_path, "budget", {}, sub="budget")
    capsys.readouterr()
    assert code == 0
    baseline = resources.files("magnon_qnd").joinpath("data/budget_baseline.json")
    assert main(["compare", str(out / "metrics.json"), str(baseline), "--abs", "1e-6", "--rel", "0"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"]
    rows = json.loads((out / "metrics.json").read_text())["result"]["rows"]
    assert rows["decoherence"]["dark_count"] == pytest.approx(0.15, abs=0.01)


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "magnon_qnd.cli", "--version"], capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "0.1.0"
    bad = subprocess.run([sys.executable, "-m", "magnon_qnd.cli", "detect", "--config", "/nonexistent.json"],
                         capture_output=True, text=True)
    assert bad.returncode == 2
    assert json.loads(bad.stderr.strip().splitlines()[-1])["error"] == "FileNotFoundError"

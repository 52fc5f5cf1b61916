"""Strict JSON run configuration.

Frequencies, detunings and rates are given in Hz (value / 2 pi) and converted
to rad/s at load. Times are in seconds. Omitted fields take the default device
parameters.
"""

from dataclasses import dataclass, field, fields, replace
import hashlib
import json
import math

from .hilbert import CavityModeParams, HilbertConfig, MagnonParams, QubitParams, table_cavity_modes
from .readout import MeasuredProbabilities, ReadoutModel
from .system import SystemParams

TWO_PI = 2 * math.pi


class ConfigError(ValueError):
    """Invalid configuration; ``path`` locates the offending key."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.reason = message


# (field name, scale applied to the JSON value) per section
QUBIT_FIELDS = {"omega_q": TWO_PI, "alpha": TWO_PI, "alpha0": TWO_PI, "omega_q0": TWO_PI,
                "T1": 1.0, "T2_star": 1.0, "eps_ini": 1.0}
MAGNON_FIELDS = {"omega_m": TWO_PI, "omega_m_g": TWO_PI, "gamma_m": TWO_PI, "n_th_m": 1.0, "T1_m": 1.0,
                 "omega_m0": TWO_PI, "xi": TWO_PI}
CAVITY_FIELDS = {"index_p": 1, "omega_p": TWO_PI, "g_qp": TWO_PI, "g_mp": TWO_PI, "kappa_total": TWO_PI,
                 "kappa_in": TWO_PI, "kappa_out": TWO_PI, "kappa_int": TWO_PI}
READOUT_FIELDS = {"eps_g": 1.0, "eps_e": 1.0, "delta_t_r": 1.0}
MEASURED_FIELDS = {"p_e_given_g_prep": 1.0, "p_e_given_e_prep": 1.0, "eps_ini": 1.0}
HILBERT_FIELDS = {"n_levels_qubit": 1, "n_levels_magnon": 1, "n_cavity_modes_included": 1, "n_levels_cavity": 1}
TOP_FIELDS = {"chi_qm": TWO_PI, "delta_d": TWO_PI, "tau_d": 1.0, "readout_gap": 1.0}
INTEGRATOR_FIELDS = {"rtol": 1.0, "atol": 1.0}

SCHEMES = ("at_least_one", "exactly_one")
SPECTRUM_KINDS = ("gambetta", "ramsey")


@dataclass(frozen=True)
class ProtocolConfig:
    scheme: str = "at_least_one"
    tau_pi: float = 200e-9
    tau_pi_list: tuple = (40e-9, 80e-9, 120e-9, 200e-9, 320e-9, 480e-9)
    nbar_max: float = 0.1
    n_points: int = 8
    amplitudes: tuple | None = None   # rad/s
    shots: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {', '.join(SCHEMES)}", "protocol.scheme")
        if not self.tau_pi > 0 or any(not t > 0 for t in self.tau_pi_list):
            raise ConfigError("tau_pi must be positive", "protocol.tau_pi")
        if not self.tau_pi_list:
            raise ConfigError("tau_pi_list must not be empty", "protocol.tau_pi_list")
        if not self.nbar_max > 0:
            raise ConfigError("nbar_max must be positive", "protocol.nbar_max")
        if self.n_points < 3:
            raise ConfigError("n_points must be at least 3", "protocol.n_points")
        if self.amplitudes is not None and (len(self.amplitudes) < 3 or any(a < 0 for a in self.amplitudes)):
            raise ConfigError("amplitudes need at least three non-negative values", "protocol.amplitudes")
        if self.shots < 0:
            raise ConfigError("shots must be non-negative", "protocol.shots")


@dataclass(frozen=True)
class SpectrumConfig:
    kind: str = "gambetta"
    nbar: float = 0.53
    delta_s: float = -4.0 * TWO_PI * 1e6
    omega_min: float = -12.0 * TWO_PI * 1e6
    omega_max: float = 4.0 * TWO_PI * 1e6
    n_omega: int = 801
    tau_max: float = 2.55e-6
    tau_step: float = 10e-9
    tau_pulse: float = 12e-9

    def __post_init__(self):
        if self.kind not in SPECTRUM_KINDS:
            raise ConfigError(f"kind must be one of {', '.join(SPECTRUM_KINDS)}", "spectrum.kind")
        if not self.nbar >= 0:
            raise ConfigError("nbar must be non-negative", "spectrum.nbar")
        if not self.omega_max > self.omega_min or self.n_omega < 2:
            raise ConfigError("frequency grid must be increasing with at least two points", "spectrum")
        if not (self.tau_step > 0 and self.tau_max > self.tau_step and self.tau_pulse > 0):
            raise ConfigError("Ramsey grid must be positive with tau_max > tau_step", "spectrum")


@dataclass(frozen=True)
class BoundsConfig:
    tau_pi: float = 12e-9
    cap: float = 200e-9
    step: float = 1e-9

    def __post_init__(self):
        if not (self.tau_pi > 0 and self.step > 0 and self.cap > self.step):
            raise ConfigError("bounds scan needs tau_pi > 0 and cap > step > 0", "readout_bounds")


@dataclass(frozen=True)
class RunOptions:
    out: str = "run"
    seed: int = 0
    jobs: int | None = None
    emit_trajectory: bool = False

    def __post_init__(self):
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError("jobs must be at least 1", "run.jobs")


@dataclass(frozen=True)
class RunConfig:
    system: SystemParams = field(default_factory=SystemParams)
    readout_from_bounds: bool = False
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    readout_bounds: BoundsConfig = field(default_factory=BoundsConfig)
    run: RunOptions = field(default_factory=RunOptions)
    raw: dict = field(default_factory=dict, compare=False)

    def physics_hash(self):
        """SHA-256 of the canonical resolved input, excluding output placement and worker count."""
        doc = {k: v for k, v in self.raw.items() if k != "run"}
        doc["run"] = {"seed": self.run.seed}
        return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _expect(kind, value, path):
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind is str:
        ok = isinstance(value, str)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ConfigError(f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}", path)
    return value


def _section(doc, name, allowed, path):
    if not isinstance(doc, dict):
        raise ConfigError("expected an object", path)
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", f"{path}.{unknown[0]}" if path else unknown[0])
    return doc


def _scaled(doc, spec, path):
    out = {}
    for key, scale in spec.items():
        if key not in doc:
            continue
        v = doc[key]
        p = f"{path}.{key}" if path else key
        if v is None and key.startswith("kappa"):
            out[key] = None
            continue
        if scale == 1 and isinstance(scale, int):
            out[key] = _expect(int, v, p)
        else:
            v = _expect(float, v, p)
            if v is not None and not math.isfinite(v):
                raise ConfigError("must be finite", p)
            out[key] = float(v) * scale
    return out


def _build(cls, kwargs, path, base=None):
    try:
        return replace(base, **kwargs) if base is not None else cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path) from None


TOP_KEYS = ("qubit", "magnon", "cavities", "readout", "measured", "hilbert", "integrator", "protocol",
            "spectrum", "readout_bounds", "run") + tuple(TOP_FIELDS)


def _seconds_list(values, path):
    _expect(list, values, path)
    return tuple(float(_expect(float, v, f"{path}[{i}]")) for i, v in enumerate(values))


def config_from_dict(doc):
    """Validate a parsed JSON document and resolve defaults."""
    _section(doc, "", TOP_KEYS, "")
    qubit = _build(QubitParams, _scaled(_section(doc.get("qubit", {}), "qubit", QUBIT_FIELDS, "qubit"),
                                        QUBIT_FIELDS, "qubit"), "qubit")
    magnon = _build(MagnonParams, _scaled(_section(doc.get("magnon", {}), "magnon", MAGNON_FIELDS, "magnon"),
                                          MAGNON_FIELDS, "magnon"), "magnon")
    if "cavities" in doc:
        _expect(list, doc["cavities"], "cavities")
        cavities = []
        for i, row in enumerate(doc["cavities"]):
            p = f"cavities[{i}]"
            _section(row, p, CAVITY_FIELDS, p)
            missing = [k for k in ("index_p", "omega_p", "g_qp", "g_mp") if k not in row]
            if missing:
                raise ConfigError(f"missing key {missing[0]!r}", p)
            cavities.append(_build(CavityModeParams, _scaled(row, CAVITY_FIELDS, p), p))
        cavities = tuple(cavities)
    else:
        cavities = table_cavity_modes()
    readout_from_bounds = False
    readout_doc = doc.get("readout", {})
    if readout_doc == "bounds":
        readout_from_bounds = True
        readout = ReadoutModel()
    elif isinstance(readout_doc, str):
        raise ConfigError('readout must be an object or the string "bounds"', "readout")
    else:
        readout = _build(ReadoutModel, _scaled(_section(readout_doc, "readout", READOUT_FIELDS, "readout"),
                                               READOUT_FIELDS, "readout"), "readout")
    measured = _build(MeasuredProbabilities,
                      _scaled(_section(doc.get("measured", {}), "measured", MEASURED_FIELDS, "measured"),
                              MEASURED_FIELDS, "measured"), "measured")
    hilbert = _build(HilbertConfig, _scaled(_section(doc.get("hilbert", {}), "hilbert", HILBERT_FIELDS, "hilbert"),
                                            HILBERT_FIELDS, "hilbert"), "hilbert")
    integ = _scaled(_section(doc.get("integrator", {}), "integrator", INTEGRATOR_FIELDS, "integrator"),
                    INTEGRATOR_FIELDS, "integrator")
    top = _scaled({k: doc[k] for k in TOP_FIELDS if k in doc}, TOP_FIELDS, "")
    system = _build(SystemParams, dict(qubit=qubit, magnon=magnon, cavities=cavities, readout=readout,
                                       measured=measured, hilbert=hilbert, **top, **integ), "")

    proto_doc = _section(doc.get("protocol", {}), "protocol", [f.name for f in fields(ProtocolConfig)],
                         "protocol")
    proto = {}
    for key, val in proto_doc.items():
        p = f"protocol.{key}"
        if key == "scheme":
            proto[key] = _expect(str, val, p)
        elif key in ("n_points", "shots"):
            proto[key] = _expect(int, val, p)
        elif key == "tau_pi_list":
            proto[key] = _seconds_list(val, p)
        elif key == "amplitudes":
            proto[key] = None if val is None else tuple(TWO_PI * a for a in _seconds_list(val, p))
        else:
            proto[key] = float(_expect(float, val, p))
    protocol = _build(ProtocolConfig, proto, "protocol")

    spec_doc = _section(doc.get("spectrum", {}), "spectrum", [f.name for f in fields(SpectrumConfig)], "spectrum")
    spec = {}
    for key, val in spec_doc.items():
        p = f"spectrum.{key}"
        if key == "kind":
            spec[key] = _expect(str, val, p)
        elif key == "n_omega":
            spec[key] = _expect(int, val, p)
        elif key in ("delta_s", "omega_min", "omega_max"):
            spec[key] = TWO_PI * float(_expect(float, val, p))
        else:
            spec[key] = float(_expect(float, val, p))
    spectrum = _build(SpectrumConfig, spec, "spectrum")

    b_doc = _section(doc.get("readout_bounds", {}), "readout_bounds", [f.name for f in fields(BoundsConfig)],
                     "readout_bounds")
    bounds = _build(BoundsConfig, {k: float(_expect(float, v, f"readout_bounds.{k}")) for k, v in b_doc.items()},
                    "readout_bounds")

    r_doc = _section(doc.get("run", {}), "run", [f.name for f in fields(RunOptions)], "run")
    run = {}
    for key, val in r_doc.items():
        p = f"run.{key}"
        if key == "out":
            run[key] = _expect(str, val, p)
        elif key == "emit_trajectory":
            run[key] = _expect(bool, val, p)
        elif key == "jobs" and val is None:
            run[key] = None
        else:
            run[key] = _expect(int, val, p)
    run = _build(RunOptions, run, "run")
    return RunConfig(system, readout_from_bounds, protocol, spectrum, bounds, run, raw=doc)


def parse_config_text(text, source="<config>"):
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        context = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise ConfigError(f"{exc.msg} at line {exc.lineno} column {exc.colno}: {context.strip()!r}",
                          source) from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object", source)
    return config_from_dict(doc)


def _reject_constant(name):
    raise ConfigError(f"non-finite constant {name} is not allowed")


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text, str(path))


def with_run_overrides(cfg, **overrides):
    """Command-line flags override the run section; None means not given."""
    given = {k: v for k, v in overrides.items() if v is not None and v is not False}
    if not given:
        return cfg
    raw = dict(cfg.raw)
    raw["run"] = {**raw.get("run", {}), **given}
    return replace(cfg, run=_build(RunOptions, {**cfg.run.__dict__, **given}, "run"), raw=raw)

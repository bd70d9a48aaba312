"""Run configuration: YAML schema, defaults and validation.

Schema (version 1); only ``system`` is required::

    version: 1
    system:    {n_perp, a1, delta_a, L, delta_half, dimer_mode}
    drive:     {rabi_amplitude, directions, frequency_offset}
    solver:    {method: auto|quantum|semiclassical, tol, t_max}
    sweep:     {axis: power|frequency, start, stop, points, log}
    fieldmap:  {plane: xy|xz, offset, extent: [u0, u1, v0, v1], resolution: [nu, nv], direction}
    optimizer: {initial: {...}, bounds: {...}, frozen: [...], settings: {...}, n_perp}
    output:    {directory}
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import yaml

from .errors import ConfigError
from .lattice import SystemConfig, build_system, validate_config
from .quantum import MAX_ATOMS

SCHEMA_VERSION = 1

DRIVE_DEFAULTS = {"rabi_amplitude": 0.5, "directions": ["forward", "backward"],
                  "frequency_offset": 0.0}
SOLVER_DEFAULTS = {"method": "auto", "tol": 1e-9, "t_max": 1e5}
SWEEP_DEFAULTS = {"axis": "power", "start": 0.01, "stop": 20.0, "points": 40, "log": True}
FIELDMAP_DEFAULTS = {"plane": "xz", "offset": 0.0, "extent": [-2.0, 2.0, -3.0, 4.0],
                     "resolution": [41, 71], "direction": "forward"}
OUTPUT_DEFAULTS = {"directory": "."}
SECTIONS = {"version", "system", "drive", "solver", "sweep", "fieldmap", "optimizer", "output"}


@dataclass
class RunConfig:
    system: SystemConfig
    drive: dict = field(default_factory=lambda: dict(DRIVE_DEFAULTS))
    solver: dict = field(default_factory=lambda: dict(SOLVER_DEFAULTS))
    sweep: dict = field(default_factory=lambda: dict(SWEEP_DEFAULTS))
    fieldmap: dict = field(default_factory=lambda: dict(FIELDMAP_DEFAULTS))
    optimizer: dict = field(default_factory=dict)
    output: dict = field(default_factory=lambda: dict(OUTPUT_DEFAULTS))
    version: int = SCHEMA_VERSION

    @property
    def n_atoms(self) -> int:
        return build_system(self.system).n_total

    def to_dict(self) -> dict:
        out = asdict(self)
        out["system"] = self.system.to_dict()
        return out


def _merge(name, defaults, given, violations, numeric=(), integer=(), boolean=()):
    if given is None:
        given = {}
    if not isinstance(given, dict):
        violations.append({"field": name, "message": "must be a mapping"})
        return dict(defaults)
    out = dict(defaults)
    for key, value in given.items():
        path = f"{name}.{key}"
        if defaults and key not in defaults:
            violations.append({"field": path, "message": "unknown field"})
            continue
        if key in numeric:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                violations.append({"field": path, "message": f"malformed numeric value {value!r}"})
                continue
            value = float(value)
        elif key in integer:
            if isinstance(value, bool) or not isinstance(value, int):
                violations.append({"field": path, "message": f"must be an integer, got {value!r}"})
                continue
        elif key in boolean and not isinstance(value, bool):
            violations.append({"field": path, "message": f"must be true/false, got {value!r}"})
            continue
        out[key] = value
    return out


def parse_config(data) -> RunConfig:
    """Validate a parsed mapping and apply defaults; collects all violations."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping with a 'system' section",
                          [{"field": "<root>", "message": "not a mapping"}])
    violations = []
    for key in sorted(set(data) - SECTIONS):
        violations.append({"field": key, "message": "unknown section"})
    version = data.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        violations.append({"field": "version", "message": f"unsupported version {version!r}"})
    if "system" not in data:
        violations.append({"field": "system", "message": "required section missing"})
        raise ConfigError("invalid config", violations)

    system = None
    try:
        system = SystemConfig.from_dict(data["system"] or {})
    except ConfigError as exc:
        violations.extend({"field": f"system.{v['field']}", "message": v["message"]}
                          for v in exc.violations)
    except AttributeError:
        violations.append({"field": "system", "message": "must be a mapping"})
    if system is not None:
        violations.extend({"field": f"system.{v['field']}", "message": v["message"]}
                          for v in validate_config(system))

    drive = _merge("drive", DRIVE_DEFAULTS, data.get("drive"), violations,
                   numeric=("rabi_amplitude", "frequency_offset"))
    solver = _merge("solver", SOLVER_DEFAULTS, data.get("solver"), violations,
                    numeric=("tol", "t_max"))
    sweep = _merge("sweep", SWEEP_DEFAULTS, data.get("sweep"), violations,
                   numeric=("start", "stop"), integer=("points",), boolean=("log",))
    fmap = _merge("fieldmap", FIELDMAP_DEFAULTS, data.get("fieldmap"), violations,
                  numeric=("offset",))
    opt = data.get("optimizer") or {}
    if not isinstance(opt, dict):
        violations.append({"field": "optimizer", "message": "must be a mapping"})
        opt = {}
    output = _merge("output", OUTPUT_DEFAULTS, data.get("output"), violations)

    if drive["rabi_amplitude"] < 0:
        violations.append({"field": "drive.rabi_amplitude", "message": "must be >= 0"})
    dirs = drive["directions"]
    if isinstance(dirs, str):
        dirs = drive["directions"] = [dirs]
    if not dirs or any(d not in ("forward", "backward") for d in dirs):
        violations.append({"field": "drive.directions",
                           "message": "must be a non-empty list of forward/backward"})
    if solver["method"] not in ("auto", "quantum", "semiclassical"):
        violations.append({"field": "solver.method", "message": f"unknown method {solver['method']!r}"})
    if solver["tol"] <= 0:
        violations.append({"field": "solver.tol", "message": "must be > 0"})
    if solver["t_max"] <= 0:
        violations.append({"field": "solver.t_max", "message": "must be > 0"})
    if system is not None and not validate_config(system):
        n_atoms = build_system(system).n_total
        if solver["method"] == "auto":
            solver["method"] = "quantum" if n_atoms <= MAX_ATOMS else "semiclassical"
        elif solver["method"] == "quantum" and n_atoms > MAX_ATOMS:
            violations.append({"field": "solver.method",
                               "message": f"quantum method needs N <= {MAX_ATOMS}, got {n_atoms}"})
    if sweep["axis"] not in ("power", "frequency"):
        violations.append({"field": "sweep.axis", "message": "must be power or frequency"})
    if sweep["points"] < 1:
        violations.append({"field": "sweep.points", "message": "sweep grid must be non-empty"})
    if sweep["log"] and (sweep["start"] <= 0 or sweep["stop"] <= 0):
        violations.append({"field": "sweep.start", "message": "log sweep needs positive bounds"})
    if fmap["plane"] not in ("xy", "xz"):
        violations.append({"field": "fieldmap.plane", "message": "must be xy or xz"})
    if len(fmap["extent"]) != 4:
        violations.append({"field": "fieldmap.extent", "message": "needs 4 numbers"})
    res = fmap["resolution"]
    if len(res) != 2 or any(not isinstance(r, int) or r < 1 for r in res):
        violations.append({"field": "fieldmap.resolution", "message": "needs 2 positive integers"})

    if violations:
        raise ConfigError("invalid config: " + "; ".join(
            f"{v['field']}: {v['message']}" for v in violations), violations)
    return RunConfig(system=system, drive=drive, solver=solver, sweep=sweep, fieldmap=fmap,
                     optimizer=opt, output=output, version=version)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}",
                          [{"field": "<file>", "message": str(exc)}]) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"cannot parse {path}{where}: {getattr(exc, 'problem', exc)}",
                          [{"field": "<syntax>", "message": f"parse error{where}"}]) from exc
    return parse_config(data)


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)

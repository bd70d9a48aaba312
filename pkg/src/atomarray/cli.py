"""Command-line entry point.

Every run writes ``manifest.json`` into the output directory, listing the
config echo (with defaults applied), package versions, wall time, seeds and
each file written. Errors are printed to stderr as one JSON object.

Exit codes: 0 success, 1 usage, 2 config, 3 solver, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__, meanfield, quantum, scattering, spectral
from .config import RunConfig, dump_config, load_config, parse_config
from .coupling import coupling_matrices
from .errors import AtomArrayError, CapacityError, ConfigError, ConvergenceError, SingularityError
from .lattice import build_system
from .optimizer import DIMER_BOUNDS, PARAM_NAMES, ObjectiveError, OptParams, OptSettings, optimize

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4
WORKERS_ENV = "ATOMARRAY_WORKERS"
COMMANDS = ("spectrum", "steady", "xsection", "sweep", "fieldmap", "optimize",
            "single-atom", "scaling")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class OutputWriter:
    """Collects output files for the manifest; every path is written once."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.files: list[str] = []
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.directory}: {exc.strerror}") from exc

    def _path(self, name: str) -> Path:
        if name in self.files:
            raise ValueError(f"output {name} written twice")
        self.files.append(name)
        return self.directory / name

    def json(self, name: str, payload) -> None:
        with open(self._path(name), "w", encoding="utf-8") as fh:
            json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def csv(self, name: str, header, rows) -> None:
        with open(self._path(name), "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])

    def text(self, name: str, content: str) -> None:
        with open(self._path(name), "w", encoding="utf-8") as fh:
            fh.write(content)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}",
                          [{"field": WORKERS_ENV, "message": "not an integer"}]) from exc


def _solver_options(cfg: RunConfig, method: str) -> dict:
    if method == "quantum":
        return {"rtol": cfg.solver["tol"], "t_max": cfg.solver["t_max"]}
    return {"tol": cfg.solver["tol"], "t_max": cfg.solver["t_max"]}


def _system(cfg: RunConfig):
    return build_system(cfg.system).with_detuning_shift(cfg.drive["frequency_offset"])


def _load(args) -> RunConfig:
    if args.config is None:
        raise UsageError("--config is required for this command")
    cfg = load_config(args.config)
    if getattr(args, "power", None) is not None:
        cfg.drive["rabi_amplitude"] = float(args.power)
    if getattr(args, "method", None):
        solver = dict(cfg.solver)
        solver["method"] = args.method
        cfg = parse_config({**cfg.to_dict(), "solver": solver})
    return cfg


def _dark_mode(system):
    return spectral.classify_dark_bright(spectral.single_excitation_modes(system))["dark"]


def _quantum_diagnostics(system, rho, dark) -> dict:
    out = {
        "c_D": quantum.dark_state_population(rho, dark),
        "S_vN": quantum.von_neumann_entropy(rho),
        "populations_product_basis": np.real(np.diag(rho.data)),
    }
    if system.n_total <= spectral.MAX_FULL_ATOMS:
        h_full = spectral.effective_hamiltonian(system, coupling_matrices(system), spectral.FULL)
        eig = quantum.to_eigenbasis(rho, h_full)
        out["populations_eigen_basis"] = np.real(np.diag(eig.data))
        out["eigen_decay_rates"] = [m.decay_rate for m in eig.modes]
    return out


# ---------------------------------------------------------------- commands


def cmd_spectrum(args, out: OutputWriter, manifest: dict):
    cfg = _load(args)
    system = _system(cfg)
    couplings = coupling_matrices(system)
    h = spectral.effective_hamiltonian(system, couplings, args.subspace)
    modes = spectral.eigenmodes(h)
    out.csv("spectrum.csv", ["mode_index", "re_energy", "im_energy", "decay_rate"],
            ([i, m.energy.real, m.energy.imag, m.decay_rate] for i, m in enumerate(modes)))
    if args.amplitudes:
        out.csv("amplitudes.csv", ["mode_index", "component", "re", "im"],
                ([i, j, c.real, c.imag] for i, m in enumerate(modes)
                 for j, c in enumerate(m.vector)))
    roles = spectral.classify_dark_bright(modes)
    out.json("spectrum.json", {"subspace": h.subspace, "n_modes": len(modes),
                               "dark_decay_rate": roles["dark"].decay_rate,
                               "bright_decay_rate": roles["bright"].decay_rate,
                               "system": system.metadata()})
    manifest["config"] = cfg.to_dict()


def cmd_steady(args, out: OutputWriter, manifest: dict):
    cfg = _load(args)
    system = _system(cfg)
    method = cfg.solver["method"]
    rabi = cfg.drive["rabi_amplitude"]
    directions = [args.direction] if args.direction else cfg.drive["directions"]
    dark = _dark_mode(system) if method == "quantum" else None
    report = {"method": method, "rabi_amplitude": rabi, "system": system.metadata(),
              "results": {}}
    for direction in directions:
        res = scattering.solve_direction(system, rabi, direction, method,
                                         _solver_options(cfg, method))
        entry = {"sigma_expectations": res["sigma"], "sigma_z": res["sigma_z"]}
        if method == "quantum":
            entry.update(_quantum_diagnostics(system, res["rho"], dark))
            if args.dump_rho:
                data = res["rho"].data
                out.csv(f"rho_{direction}.csv", ["row", "col", "re", "im"],
                        ([i, j, data[i, j].real, data[i, j].imag]
                         for i in range(data.shape[0]) for j in range(data.shape[1])))
        else:
            state = res["state"]
            entry["phase_stats"] = [p.to_dict() for p in
                                    meanfield.phase_statistics(state, system, direction)]
            entry["convergence"] = state.info
            out.csv(f"atoms_{direction}.csv",
                    ["atom", "array", "x", "y", "z", "re_sigma", "im_sigma", "sigma_z"],
                    ([j, system.array_index[j], *system.positions[j], s.real, s.imag, z]
                     for j, (s, z) in enumerate(zip(state.sigma, state.sigma_z))))
        report["results"][direction] = entry
    out.json("steady.json", report)
    manifest["config"] = cfg.to_dict()


def _xsection(cfg: RunConfig, system, rabi):
    method = cfg.solver["method"]
    report, _ = scattering.cross_sections(system, rabi, method, _solver_options(cfg, method))
    return report


def cmd_xsection(args, out: OutputWriter, manifest: dict):
    cfg = _load(args)
    system = _system(cfg)
    report = _xsection(cfg, system, cfg.drive["rabi_amplitude"])
    payload = report.to_dict()
    payload["frequency_offset"] = cfg.drive["frequency_offset"]
    payload["system"] = system.metadata()
    out.json("xsection.json", payload)
    manifest["config"] = cfg.to_dict()


def sweep_point(cfg: RunConfig, axis: str, value: float) -> dict:
    """One sweep record: cross sections plus solver-specific diagnostics."""
    base = build_system(cfg.system)
    if axis == "power":
        rabi, offset = value, cfg.drive["frequency_offset"]
    else:
        rabi, offset = cfg.drive["rabi_amplitude"], value
    system = base.with_detuning_shift(offset)
    method = cfg.solver["method"]
    report, results = scattering.cross_sections(system, rabi, method,
                                                _solver_options(cfg, method))
    row = {"axis_value": value, "rabi_amplitude": rabi, "frequency_offset": offset,
           "sigma_f": report.sigma_f, "sigma_b": report.sigma_b,
           "sigma_f_norm": report.sigma_f_norm, "sigma_b_norm": report.sigma_b_norm,
           "M": report.m_efficiency, "M_power_norm": report.m_efficiency_power,
           "sigma0_power": report.sigma0_power}
    if method == "quantum":
        dark = _dark_mode(system)
        for d, tag in (("forward", "f"), ("backward", "b")):
            rho = results[d]["rho"]
            row[f"c_D_{tag}"] = quantum.dark_state_population(rho, dark)
            row[f"S_vN_{tag}"] = quantum.von_neumann_entropy(rho)
    else:
        for d, tag in (("forward", "f"), ("backward", "b")):
            for p in meanfield.phase_statistics(results[d]["state"], system, d):
                row[f"phase_mean_{tag}{p.array_index}"] = p.mean_phase
                row[f"phase_var_{tag}{p.array_index}"] = p.variance
    return row


def sweep_grid(grid_cfg: dict) -> np.ndarray:
    if grid_cfg["points"] < 1:
        raise ConfigError("sweep grid must be non-empty",
                          [{"field": "sweep.points", "message": "must be >= 1"}])
    if grid_cfg["log"]:
        return np.geomspace(grid_cfg["start"], grid_cfg["stop"], grid_cfg["points"])
    return np.linspace(grid_cfg["start"], grid_cfg["stop"], grid_cfg["points"])


def cmd_sweep(args, out: OutputWriter, manifest: dict):
    cfg = _load(args)
    grid_cfg = dict(cfg.sweep)
    for key, attr in (("axis", "axis"), ("start", "start"), ("stop", "stop"),
                      ("points", "points")):
        if getattr(args, attr) is not None:
            grid_cfg[key] = getattr(args, attr)
    if args.log is not None:
        grid_cfg["log"] = args.log
    cfg = parse_config({**cfg.to_dict(), "sweep": grid_cfg})
    grid = sweep_grid(cfg.sweep)
    manifest["config"] = cfg.to_dict()

    rows, error = [], None
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        futures = [pool.submit(sweep_point, cfg, cfg.sweep["axis"], float(v)) for v in grid]
        try:
            for fut in futures:
                rows.append(fut.result())
        except (AtomArrayError, KeyboardInterrupt) as exc:
            error = exc
            for fut in futures:
                fut.cancel()
    if rows:
        header = list(rows[0].keys())
        out.csv("sweep.csv", header, ([r[k] for k in header] for r in rows))
    manifest["complete"] = error is None
    manifest["points_written"] = len(rows)
    if error is not None:
        raise error


def cmd_fieldmap(args, out: OutputWriter, manifest: dict):
    cfg = _load(args)
    system = _system(cfg)
    fm = dict(cfg.fieldmap)
    if args.plane:
        fm["plane"] = args.plane
    if args.offset is not None:
        fm["offset"] = args.offset
    if args.extent:
        fm["extent"] = args.extent
    if args.resolution:
        fm["resolution"] = args.resolution
    if args.direction:
        fm["direction"] = args.direction
    cfg = parse_config({**cfg.to_dict(), "fieldmap": fm})
    fm = cfg.fieldmap
    rabi = cfg.drive["rabi_amplitude"]
    method = cfg.solver["method"]
    res = scattering.solve_direction(system, rabi, fm["direction"], method,
                                     _solver_options(cfg, method))
    corr = quantum.correlations(res["rho"]) if method == "quantum" else None
    grid = scattering.field_map((fm["plane"], fm["offset"]), fm["extent"], fm["resolution"],
                                system, res["sigma"], rabi, fm["direction"], corr)
    out.json("header.json", {
        "plane": grid.plane, "offset": grid.offset, "extent": list(grid.extent),
        "resolution": list(grid.resolution), "direction": fm["direction"],
        "rabi_amplitude": rabi, "method": method, "intensity": grid.intensity_kind,
        "flagged_points": int(grid.flagged.sum()),
        "units": {"length": "lambda0", "field": "E0", "intensity": "E0^2"},
    })
    total = grid.total
    out.csv("grid.csv", ["x", "y", "z", "re_Ein_x", "im_Ein_x", "re_Esc_x", "im_Esc_x",
                         "re_Etot_x", "im_Etot_x", "intensity", "flagged"],
            ([*p, grid.incident[i, 0].real, grid.incident[i, 0].imag,
              grid.scattered[i, 0].real, grid.scattered[i, 0].imag,
              total[i, 0].real, total[i, 0].imag, grid.intensity[i], int(grid.flagged[i])]
             for i, p in enumerate(grid.points)))
    manifest["config"] = cfg.to_dict()


def _opt_params(cfg: RunConfig) -> OptParams:
    block = cfg.optimizer
    bounds = {k: tuple(float(x) for x in v)
              for k, v in {**DIMER_BOUNDS, **(block.get("bounds") or {})}.items()}
    initial = {"a1": cfg.system.a1, "delta_a": cfg.system.delta_a, "L": cfg.system.L,
               "delta_half": cfg.system.delta_half,
               "rabi_amplitude": cfg.drive["rabi_amplitude"]}
    initial.update(block.get("initial") or {})
    unknown = set(initial) - set(PARAM_NAMES)
    if unknown:
        raise ConfigError(f"unknown optimizer parameters {sorted(unknown)}",
                          [{"field": f"optimizer.initial.{k}", "message": "unknown field"}
                           for k in sorted(unknown)])
    for name in PARAM_NAMES:
        lo, hi = bounds[name]
        initial[name] = float(np.clip(initial[name], lo, hi))
    return OptParams(**initial, bounds=bounds, frozen=tuple(block.get("frozen") or ()))


def cmd_optimize(args, out: OutputWriter, manifest: dict):
    cfg = _load(args)
    settings_block = dict(cfg.optimizer.get("settings") or {})
    if args.starts is not None:
        settings_block["n_starts"] = args.starts
    if args.seed is not None:
        settings_block["seed"] = args.seed
    if args.max_iter is not None:
        settings_block["max_iter"] = args.max_iter
    settings_block.setdefault("workers", _workers())
    settings = OptSettings.from_dict(settings_block)
    params = _opt_params(cfg)
    trace = optimize(params, settings, n_perp=cfg.system.n_perp,
                     dimer_mode=cfg.system.dimer_mode, solver_choice=cfg.solver["method"])
    out.json("trace.json", trace.to_dict())
    best = trace.best
    best_cfg = cfg.to_dict()
    best_cfg["system"].update(a1=best.a1, delta_a=best.delta_a, L=best.L,
                              delta_half=best.delta_half)
    best_cfg["drive"]["rabi_amplitude"] = best.rabi_amplitude
    best_cfg["optimizer"] = {"initial": {n: getattr(best, n) for n in PARAM_NAMES},
                             "bounds": {k: list(v) for k, v in best.bounds.items()},
                             "frozen": list(best.frozen),
                             "settings": {k: v for k, v in settings.__dict__.items()}}
    out.text("best.cfg", yaml.safe_dump(best_cfg, sort_keys=False))
    manifest["config"] = cfg.to_dict()
    manifest["seeds"] = {"optimizer": settings.seed}


def cmd_single_atom(args, out: OutputWriter, manifest: dict):
    rabi = 0.0 if args.power is None else args.power
    state = scattering.single_atom_steady_state(rabi, args.detuning, args.n_thermal)
    sigma0 = scattering.single_atom_reference(rabi, args.detuning, args.n_thermal)
    out.json("single_atom.json", {
        "rabi_amplitude": rabi, "detuning": args.detuning, "n_thermal": args.n_thermal,
        "sigma0": sigma0, "sigma0_weak": scattering.SIGMA0_WEAK,
        "sigma0_ratio": sigma0 / scattering.SIGMA0_WEAK,
        "rho_ee": state["rho_ee"], "sigma": state["sigma"],
        "units": {"sigma0": "lambda0^2", "rates": "gamma0"},
    })
    manifest["config"] = {"power": rabi, "detuning": args.detuning, "n_thermal": args.n_thermal}


def cmd_scaling(args, out: OutputWriter, manifest: dict):
    cfg = _load(args)
    sizes = args.n_perp or list(range(4, 15))
    result = spectral.darkstate_scaling(sizes, replace(cfg.system, dimer_mode=False))
    out.csv("scaling.csv", ["n_perp", "n_total", "dark_decay_rate"],
            ([n, nt, g] for n, (nt, g) in zip(sizes, result["samples"])))
    out.json("scaling.json", {"alpha": result["alpha"], "n_perp": list(sizes),
                              "samples": result["samples"]})
    manifest["config"] = cfg.to_dict()


HANDLERS = {
    "spectrum": cmd_spectrum, "steady": cmd_steady, "xsection": cmd_xsection,
    "sweep": cmd_sweep, "fieldmap": cmd_fieldmap, "optimize": cmd_optimize,
    "single-atom": cmd_single_atom, "scaling": cmd_scaling,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atomarray", description="Simulator for pairs of atom arrays.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=False, help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        return p

    p = common("spectrum", "collective eigenmodes")
    p.add_argument("--subspace", choices=[spectral.SINGLE_EXCITATION, spectral.FULL],
                   default=spectral.SINGLE_EXCITATION)
    p.add_argument("--amplitudes", action="store_true", help="also write mode amplitudes")

    p = common("steady", "steady state for one or both drive directions")
    p.add_argument("--power", type=float, help="|Omega_R| in gamma0")
    p.add_argument("--direction", choices=["forward", "backward"])
    p.add_argument("--method", choices=["auto", "quantum", "semiclassical"])
    p.add_argument("--dump-rho", action="store_true", help="write the full density matrix")

    p = common("xsection", "forward and backward total cross sections")
    p.add_argument("--power", type=float)
    p.add_argument("--method", choices=["auto", "quantum", "semiclassical"])

    p = common("sweep", "cross sections over drive power or frequency")
    p.add_argument("--axis", choices=["power", "frequency"])
    p.add_argument("--from", dest="start", type=float)
    p.add_argument("--to", dest="stop", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--log", dest="log", action="store_true", default=None)
    p.add_argument("--linear", dest="log", action="store_false")
    p.add_argument("--power", type=float, help="fixed |Omega_R| for frequency sweeps")
    p.add_argument("--method", choices=["auto", "quantum", "semiclassical"])

    p = common("fieldmap", "incident, scattered and total fields on a plane")
    p.add_argument("--power", type=float)
    p.add_argument("--direction", choices=["forward", "backward"])
    p.add_argument("--plane", choices=["xy", "xz"])
    p.add_argument("--offset", type=float)
    p.add_argument("--extent", type=float, nargs=4)
    p.add_argument("--resolution", type=int, nargs=2)
    p.add_argument("--method", choices=["auto", "quantum", "semiclassical"])

    p = common("optimize", "maximise M^2 by multi-start gradient ascent")
    p.add_argument("--starts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iter", type=int)

    p = common("single-atom", "closed-form single-atom reference")
    p.add_argument("--power", type=float, default=0.0)
    p.add_argument("--detuning", type=float, default=0.0)
    p.add_argument("--n-thermal", type=float, default=0.0)

    p = common("scaling", "dark-state decay rate versus array size")
    p.add_argument("--n-perp", type=int, nargs="+")
    return parser


def _error_payload(code: int, exc: BaseException) -> dict:
    payload = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload["violations"] = exc.violations
    if isinstance(exc, ConvergenceError):
        payload["residual"] = exc.residual
        payload["info"] = exc.info
    return payload


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ConvergenceError, CapacityError, SingularityError, ObjectiveError,
                        AtomArrayError, np.linalg.LinAlgError)):
        return EXIT_SOLVER
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    raise exc


def run_command(argv=None) -> int:
    """Parse ``argv``, run the command and return its exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    start = time.perf_counter()
    out = None
    manifest = {"command": None, "argv": argv, "complete": True}
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"a command is required: {', '.join(COMMANDS)}")
        manifest["command"] = args.command
        directory = args.out
        if directory is None and args.config is not None and args.command != "single-atom":
            directory = load_config(args.config).output["directory"]
        out = OutputWriter(Path(directory or "."))
        HANDLERS[args.command](args, out, manifest)
        code = EXIT_OK
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, AtomArrayError, OSError, ValueError, np.linalg.LinAlgError,
            KeyboardInterrupt) as exc:
        code = EXIT_USAGE if isinstance(exc, KeyboardInterrupt) else _exit_code(exc)
        manifest["complete"] = False
        manifest["error"] = _error_payload(code, exc)
        print(json.dumps(_jsonable(manifest["error"])), file=sys.stderr)
    if out is not None:
        manifest.update(
            versions={"atomarray": __version__, "numpy": np.__version__,
                      "scipy": scipy.__version__, "pyyaml": yaml.__version__,
                      "python": platform.python_version()},
            wall_time_s=time.perf_counter() - start,
            outputs=list(out.files),
        )
        manifest.setdefault("seeds", {})
        try:
            with open(out.directory / "manifest.json", "w", encoding="utf-8") as fh:
                json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            print(json.dumps({"error": "OSError", "exit_code": EXIT_IO,
                              "message": f"cannot write manifest: {exc}"}), file=sys.stderr)
            return EXIT_IO
    return code


def main() -> None:
    sys.exit(run_command())

"""Projected finite-difference gradient ascent on M^2.

M is measured in units of the weak-field single-atom cross section, so M^2 is
dimensionless. Each objective call solves both drive directions.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AtomArrayError, ConfigError
from .lattice import SystemConfig, build_system
from .scattering import cross_sections

PARAM_NAMES = ("a1", "delta_a", "L", "delta_half", "rabi_amplitude")

DIMER_BOUNDS = {
    "a1": (0.2, 0.5),
    "delta_a": (0.0, 0.2),
    "L": (0.05, 0.3),
    "delta_half": (-2.0, 2.0),
    "rabi_amplitude": (0.1, 2.0),
}


@dataclass(frozen=True)
class OptParams:
    a1: float
    delta_a: float
    L: float
    delta_half: float
    rabi_amplitude: float
    bounds: dict = field(default_factory=lambda: dict(DIMER_BOUNDS))
    frozen: tuple = ()

    def __post_init__(self):
        violations = []
        for name in PARAM_NAMES:
            lo, hi = self.bounds.get(name, (-np.inf, np.inf))
            if lo > hi:
                violations.append({"field": name, "message": f"empty bounds [{lo}, {hi}]"})
            value = getattr(self, name)
            if not lo - 1e-12 <= value <= hi + 1e-12:
                violations.append({"field": name, "message": f"{value} outside [{lo}, {hi}]"})
        if self.bounds.get("a1", (1, 1))[0] <= 0:
            violations.append({"field": "a1", "message": "lower bound must be > 0"})
        lo_a1, lo_da = self.bounds.get("a1", (1, 1))[0], self.bounds.get("delta_a", (0, 0))[0]
        if lo_a1 + lo_da <= 0:
            violations.append({"field": "a1+delta_a", "message": "bounds allow a non-positive pitch"})
        if self.bounds.get("L", (1, 1))[0] <= 0:
            violations.append({"field": "L", "message": "lower bound must be > 0"})
        if self.bounds.get("rabi_amplitude", (1, 1))[0] < 0:
            violations.append({"field": "rabi_amplitude", "message": "lower bound must be >= 0"})
        unknown = set(self.frozen) - set(PARAM_NAMES)
        if unknown:
            violations.append({"field": "frozen", "message": f"unknown names {sorted(unknown)}"})
        if violations:
            raise ConfigError("invalid optimisation parameters", violations)

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    def with_vector(self, x) -> "OptParams":
        return replace(self, **{n: float(v) for n, v in zip(PARAM_NAMES, x)})

    def lower(self) -> np.ndarray:
        return np.array([self.bounds.get(n, (-np.inf, np.inf))[0] for n in PARAM_NAMES])

    def upper(self) -> np.ndarray:
        return np.array([self.bounds.get(n, (-np.inf, np.inf))[1] for n in PARAM_NAMES])

    def free_mask(self) -> np.ndarray:
        return np.array([n not in self.frozen for n in PARAM_NAMES])

    def to_dict(self) -> dict:
        out = {n: getattr(self, n) for n in PARAM_NAMES}
        out["bounds"] = {k: list(v) for k, v in self.bounds.items()}
        out["frozen"] = list(self.frozen)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "OptParams":
        bounds = {k: tuple(float(x) for x in v) for k, v in data.get("bounds", DIMER_BOUNDS).items()}
        return cls(**{n: float(data[n]) for n in PARAM_NAMES}, bounds=bounds,
                   frozen=tuple(data.get("frozen", ())))


@dataclass
class OptTrace:
    iterations: list = field(default_factory=list)
    best: OptParams | None = None
    objective_at_best: float = -np.inf
    starts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "best": None if self.best is None else self.best.to_dict(),
            "objective_at_best": self.objective_at_best,
            "iterations": self.iterations,
            "starts": self.starts,
        }


class ObjectiveError(AtomArrayError):
    """Objective could not be evaluated at the requested point."""


def system_config(params: OptParams, n_perp: int, dimer_mode: bool) -> SystemConfig:
    return SystemConfig(n_perp=n_perp, a1=params.a1, delta_a=params.delta_a, L=params.L,
                        delta_half=params.delta_half, dimer_mode=dimer_mode)


def objective(params: OptParams, n_perp: int = 2, solver_choice: str = "auto",
              dimer_mode: bool = True, solver_options: dict | None = None) -> float:
    """M^2 for both drive directions at ``params``."""
    try:
        system = build_system(system_config(params, n_perp, dimer_mode))
        report, _ = cross_sections(system, params.rabi_amplitude, solver_choice, solver_options)
    except AtomArrayError as exc:
        raise ObjectiveError(str(exc)) from exc
    return report.m_efficiency ** 2


def finite_diff_gradient(func, params: OptParams, step=1e-3, relative: bool = True,
                         max_retries: int = 3):
    """Central differences, one-sided at a bound; frozen fields get zero.

    ``step`` is a scalar or per-field array; with ``relative`` it scales with
    max(|x|, 1e-2). A stencil point that raises is retried with half the step.
    Returns (gradient, flags) where flags lists components that never succeeded.
    """
    x = params.vector()
    lo, hi = params.lower(), params.upper()
    steps = np.broadcast_to(np.asarray(step, dtype=float), x.shape).copy()
    if np.any(steps <= 0):
        raise ValueError("finite-difference step must be > 0")
    if relative:
        steps = steps * np.maximum(np.abs(x), 1e-2)
    free = params.free_mask()
    grad = np.zeros_like(x)
    flagged = []
    f0 = None
    for i in np.flatnonzero(free):
        h = steps[i]
        for _ in range(max_retries + 1):
            try:
                up, down = x[i] + h <= hi[i], x[i] - h >= lo[i]
                if up and down:
                    grad[i] = (func(params.with_vector(_bump(x, i, h)))
                               - func(params.with_vector(_bump(x, i, -h)))) / (2 * h)
                else:
                    if f0 is None:
                        f0 = func(params)
                    if up:
                        grad[i] = (func(params.with_vector(_bump(x, i, h))) - f0) / h
                    elif down:
                        grad[i] = (f0 - func(params.with_vector(_bump(x, i, -h)))) / h
                    else:
                        grad[i] = 0.0
                break
            except ObjectiveError:
                h /= 2
        else:
            flagged.append(PARAM_NAMES[i])
            grad[i] = 0.0
    return grad, flagged


def _bump(x, i, h):
    y = x.copy()
    y[i] += h
    return y


def _project(params: OptParams, x) -> OptParams:
    x = np.clip(x, params.lower(), params.upper())
    x = np.where(params.free_mask(), x, params.vector())
    return params.with_vector(x)


@dataclass(frozen=True)
class OptSettings:
    step_size: float = 0.05
    backtrack: float = 0.5
    max_backtracks: int = 20
    max_iter: int = 60
    grad_tol: float = 1e-8
    step_tol: float = 1e-6
    fd_step: float = 1e-3
    n_starts: int = 16
    seed: int = 0
    workers: int | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "OptSettings":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown optimizer setting(s): {sorted(unknown)}",
                              [{"field": k, "message": "unknown field"} for k in sorted(unknown)])
        return cls(**data)


def _ascend(func, start: OptParams, settings: OptSettings, start_index: int) -> dict:
    """Single projected gradient-ascent run; returns its trace records.

    Trial steps use the Barzilai-Borwein length from the previous accepted
    move (``step_size`` times the box size on the first iteration) and are
    halved until the objective increases, so accepted values never decrease.
    """
    params = start
    value = func(params)
    records = []
    box = params.upper() - params.lower()
    box = np.where(np.isfinite(box) & (box > 0), box, 1.0)
    prev_x = prev_g = None
    for it in range(settings.max_iter):
        grad, flagged = finite_diff_gradient(func, params, settings.fd_step)
        gnorm = float(np.linalg.norm(grad))
        records.append({"start": start_index, "iteration": it, "params": params.to_dict(),
                        "objective": value, "grad_norm": gnorm, "flagged": flagged})
        if gnorm < settings.grad_tol:
            break
        x = params.vector()
        t = settings.step_size * float(np.min(box[params.free_mask()], initial=1.0)) / gnorm
        if prev_x is not None:
            s, y = x - prev_x, grad - prev_g
            sy = abs(float(s @ y))
            if sy > 0:
                t = float(s @ s) / sy
        accepted = False
        for _ in range(settings.max_backtracks):
            trial = _project(params, x + t * grad)
            if np.abs((trial.vector() - x) / box).max() < settings.step_tol:
                break
            try:
                trial_value = func(trial)
            except ObjectiveError:
                trial_value = -np.inf
            if trial_value > value:
                params, value, accepted = trial, trial_value, True
                break
            t *= settings.backtrack
        if not accepted:
            break
        prev_x, prev_g = x, grad
    return {"best": params, "value": value, "records": records}


def _random_start(base: OptParams, rng) -> OptParams:
    lo, hi = base.lower(), base.upper()
    x = base.vector()
    free = base.free_mask() & np.isfinite(lo) & np.isfinite(hi)
    x[free] = rng.uniform(lo[free], hi[free])
    return base.with_vector(x)


def optimize(initial: OptParams, settings: OptSettings | None = None, func=None,
             n_perp: int = 2, dimer_mode: bool = True, solver_choice: str = "auto") -> OptTrace:
    """Multi-start projected gradient ascent on ``func`` (default: M^2).

    Start 0 is ``initial``; the remaining ``n_starts - 1`` are drawn uniformly
    from the bounds with ``numpy.random.default_rng(seed)``. Starts run in a
    thread pool and are merged in start order, so the trace is deterministic.
    """
    settings = settings or OptSettings()
    if func is None:
        def func(p):
            return objective(p, n_perp=n_perp, solver_choice=solver_choice,
                             dimer_mode=dimer_mode)

    rng = np.random.default_rng(settings.seed)
    starts = [initial] + [_random_start(initial, rng) for _ in range(max(settings.n_starts, 1) - 1)]
    workers = settings.workers or int(os.environ.get("ATOMARRAY_WORKERS", "1"))

    def run(item):
        idx, start = item
        try:
            return _ascend(func, start, settings, idx)
        except (ObjectiveError, FloatingPointError) as exc:
            return {"error": str(exc), "start": start}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, enumerate(starts)))
    else:
        results = [run(item) for item in enumerate(starts)]

    trace = OptTrace()
    for idx, res in enumerate(results):
        if "error" in res:
            trace.starts.append({"start": idx, "error": res["error"],
                                 "initial": res["start"].to_dict()})
            continue
        trace.iterations.extend(res["records"])
        trace.starts.append({"start": idx, "initial": starts[idx].to_dict(),
                             "final": res["best"].to_dict(), "objective": res["value"]})
        if res["value"] > trace.objective_at_best:
            trace.best, trace.objective_at_best = res["best"], res["value"]
    if trace.best is None:
        raise ObjectiveError("all optimisation starts failed: "
                             + "; ".join(s["error"] for s in trace.starts))
    return trace

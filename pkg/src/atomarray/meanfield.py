"""Semiclassical (mean-field) dynamics for large arrays.

Factorising all two-atom expectations gives, with C = i Omega + Gamma/2 (zero
diagonal) and drive Omega_R^k,

    d<s_k>/dt  = (-i Delta_k - 1/2) <s_k> + <s^z_k> sum_j C_kj <s_j> - i Omega_R^k <s^z_k>
    d<s^z_k>/dt = -(<s^z_k> + 1) - 2 Re[<s_k>^* (C<s>)_k + <s_k> (C<s>)_k^*]
                  + 2i (Omega_R^k <s_k>^* - c.c.)

and d<s^+_k>/dt is the complex conjugate of the first line. A single atom
reduces to the optical Bloch equations, for which mean field is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .coupling import CouplingMatrices, direction_sign
from .errors import ConvergenceError
from .lattice import K0, AtomSystem

BLOCH_TOL = 1e-6
PHASE_EXCLUSION = 1e-12


@dataclass(frozen=True, eq=False)
class MeanFieldState:
    sigma: np.ndarray
    sigma_z: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.sigma)

    def bloch_violation(self) -> float:
        """Largest excess of |s|^2 over (1 - z^2)/4 (<= 0 inside the ball)."""
        excess = np.abs(self.sigma) ** 2 - (1 - self.sigma_z ** 2) / 4
        return float(excess.max()) if self.n else 0.0


@dataclass(frozen=True)
class PhaseStats:
    array_index: int
    mean_phase: float
    variance: float
    arithmetic_variance: float
    n_atoms: int
    n_excluded: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _coupling_kernel(couplings: CouplingMatrices) -> np.ndarray:
    kernel = 1j * np.asarray(couplings.omega) + 0.5 * np.asarray(couplings.gamma)
    np.fill_diagonal(kernel, 0.0)
    return kernel


def mean_field_rhs(state: MeanFieldState, system: AtomSystem, couplings: CouplingMatrices,
                   drive=None) -> MeanFieldState:
    """Time derivative of (<s>, <s^z>); ``drive`` defaults to ``couplings.drive``."""
    drive = couplings.drive if drive is None else np.asarray(drive, dtype=complex)
    ds, dz = _rhs_arrays(state.sigma, state.sigma_z, np.asarray(system.detunings),
                         _coupling_kernel(couplings), drive)
    return MeanFieldState(ds, dz)


def _rhs_arrays(s, z, detunings, kernel, drive):
    cs = kernel @ s
    ds = (-1j * detunings - 0.5) * s + z * cs - 1j * drive * z
    dz = (-(z + 1) - 2 * (np.conj(s) * cs + s * np.conj(cs)).real
          + (2j * (drive * np.conj(s) - np.conj(drive) * s)).real)
    return ds, dz


def _pack(s, z):
    return np.concatenate([s.real, s.imag, z])


def _unpack(y, n):
    return y[:n] + 1j * y[n:2 * n], y[2 * n:]


def ground(n: int) -> MeanFieldState:
    return MeanFieldState(np.zeros(n, dtype=complex), -np.ones(n))


def integrate_to_steady(system: AtomSystem, couplings: CouplingMatrices, drive=None,
                        tol: float = 1e-8, t_max: float = 2000.0, chunk: float = 50.0,
                        rtol: float = 1e-10, atol: float = 1e-12,
                        initial: MeanFieldState | None = None) -> MeanFieldState:
    """Integrate from all-ground until ||rhs||_inf < tol.

    The Bloch-ball bound is checked on every accepted step; a trajectory that
    is still moving at ``t_max`` raises ConvergenceError (a persistent residual
    usually signals a limit cycle).
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    n = system.n_total
    drive = couplings.drive if drive is None else np.asarray(drive, dtype=complex)
    detunings = np.asarray(system.detunings, dtype=float)
    kernel = _coupling_kernel(couplings)

    def rhs(_t, y):
        ds, dz = _rhs_arrays(*_unpack(y, n), detunings, kernel, drive)
        return _pack(ds, dz)

    start = initial or ground(n)
    y = _pack(start.sigma, start.sigma_z)
    t, steps, worst = 0.0, 0, -np.inf
    residual = float(np.abs(rhs(0, y)).max())
    while residual >= tol:
        if t >= t_max:
            raise ConvergenceError(
                f"mean-field steady state not reached by t = {t_max} (possible limit cycle)",
                residual=residual, time=t)
        span = min(chunk, t_max - t)
        sol = solve_ivp(rhs, (t, t + span), y, method="DOP853", rtol=rtol, atol=atol)
        if sol.status != 0:
            raise ConvergenceError(f"integration failed: {sol.message}",
                                   residual=residual, time=float(sol.t[-1]))
        s_all, z_all = sol.y[:n], sol.y[2 * n:]
        s_all = s_all + 1j * sol.y[n:2 * n]
        excess = np.abs(s_all) ** 2 - (1 - z_all ** 2) / 4
        worst = max(worst, float(excess.max()))
        if worst > BLOCH_TOL:
            raise ConvergenceError("Bloch-ball bound violated during integration",
                                   residual=residual, excess=worst)
        steps += sol.t.size - 1
        y = sol.y[:, -1]
        t += span
        residual = float(np.abs(rhs(t, y)).max())
    s, z = _unpack(y, n)
    info = {"time": t, "residual": residual, "steps": steps, "max_bloch_excess": worst,
            "direction": couplings.direction}
    return MeanFieldState(s.copy(), z.copy(), info)


def linear_response(system: AtomSystem, couplings: CouplingMatrices, drive=None) -> np.ndarray:
    """Weak-drive coupled-dipole solution <s> = H_eff^-1 Omega_R (with s^z = -1)."""
    drive = couplings.drive if drive is None else np.asarray(drive, dtype=complex)
    h_eff = couplings.single_excitation_hamiltonian(system.detunings)
    return np.linalg.solve(h_eff, drive)


def _circular(phases):
    unit = np.exp(1j * phases)
    mean_vec = unit.mean()
    mean = float(np.angle(mean_vec))
    if mean <= -np.pi:
        mean += 2 * np.pi
    centred = np.angle(unit * np.conj(mean_vec))
    return mean, float(1 - abs(mean_vec)), float(np.var(centred))


def phase_statistics(state: MeanFieldState, system: AtomSystem, direction=None,
                     reference: str = "midplane") -> list[PhaseStats]:
    """Circular mean and variance of the dipole phases of each array.

    With ``reference="midplane"`` phases are measured relative to the incident
    field at z = L/2, i.e. arg(<s_j> exp(-i k0 L/2)) for forward drive and
    arg(<s_j> exp(+i k0 L/2)) for backward drive, which puts both arrays on the
    same footing. ``reference="origin"`` uses the raw arg(<s_j>). The
    arithmetic variance of the phases, unwrapped around the circular mean, is
    reported alongside.
    """
    sigma = np.asarray(state.sigma, dtype=complex)
    if reference == "midplane":
        if direction is None:
            direction = state.info.get("direction")
        if direction is None:
            raise ValueError("midplane reference needs the drive direction")
        if system.config is None:
            raise ValueError("midplane reference needs a two-array geometry")
        sigma = sigma * np.exp(-1j * direction_sign(direction) * K0 * system.config.L / 2)
    elif reference != "origin":
        raise ValueError(f"unknown phase reference {reference!r}")

    out = []
    for idx in (1, 2):
        members = sigma[np.asarray(system.array_index) == idx]
        keep = np.abs(members) >= PHASE_EXCLUSION
        n_excl = int((~keep).sum())
        if keep.any():
            mean, var, arith = _circular(np.angle(members[keep]))
        else:
            mean, var, arith = float("nan"), float("nan"), float("nan")
        out.append(PhaseStats(idx, mean, var, arith, int(keep.sum()), n_excl))
    return out

"""Full-quantum driven-dissipative dynamics of up to 10 atoms.

The master equation is

    d rho/dt = i[rho, H_S] + sum_ij (Gamma_ij/2)(2 s_j rho s_i^+ - {s_i^+ s_j, rho}),

with H_S = sum_k Delta_k s_k^+ s_k + sum_{i!=j} Omega_ij s_i^+ s_j
           - sum_k (Omega_R^k s_k^+ + conj(Omega_R^k) s_k),

where Omega_R^k = |Omega_R| exp(i k0 . r_k) is the positive-frequency drive at
atom k. The dipoles therefore respond in phase with exp(i k0 . r_k), the same
convention the mean-field equations use.

Two steady-state backends exist: a sparse direct solve of L[rho] = 0 with the
trace constraint (N <= 6) and matrix-free time integration (6 < N <= 10).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .coupling import CouplingMatrices, coupling_matrices
from .errors import CapacityError, ConvergenceError
from .lattice import AtomSystem
from .operators import bilinear, embed_single_excitation, lowering_ops
from .spectral import EffectiveHamiltonian, EigenMode, eigenmodes

MAX_ATOMS = 10
DIRECT_MAX_ATOMS = 6
DENSE_NULLSPACE_MAX_ATOMS = 4
ENTROPY_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    data: np.ndarray
    basis: str = "product"
    modes: list | None = field(default=None, repr=False)

    @property
    def n_atoms(self) -> int:
        return int(round(np.log2(self.data.shape[0])))

    def check(self, herm_tol=1e-10, trace_tol=1e-10, pos_tol=1e-8) -> dict:
        """Violations of Hermiticity, unit trace and positivity (empty if valid)."""
        rho = self.data
        issues = {}
        herm = np.abs(rho - rho.conj().T).max()
        if herm > herm_tol:
            issues["hermiticity"] = float(herm)
        tr = abs(np.trace(rho) - 1)
        if tr > trace_tol:
            issues["trace"] = float(tr)
        lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
        if lam < -pos_tol:
            issues["positivity"] = float(lam)
        return issues


def ground_state(n: int) -> DensityMatrix:
    rho = np.zeros((2 ** n, 2 ** n), dtype=complex)
    rho[0, 0] = 1.0
    return DensityMatrix(rho)


def _opnorm_bound(a) -> float:
    """sqrt(||A||_1 ||A||_inf), an upper bound on the spectral norm."""
    a = sp.csr_matrix(a)
    absa = abs(a)
    n1 = absa.sum(axis=0).max() if a.nnz else 0.0
    ninf = absa.sum(axis=1).max() if a.nnz else 0.0
    return float(np.sqrt(n1 * ninf))


@dataclass(eq=False)
class Liouvillian:
    """Lindblad generator, stored as H_eff plus diagonalised jump operators."""

    n_atoms: int
    h_system: sp.csr_matrix
    h_eff: sp.csr_matrix
    jump_ops: list
    jump_rates: np.ndarray
    drive_direction: str
    superoperator: sp.csr_matrix | None = None

    @property
    def dim(self) -> int:
        return 2 ** self.n_atoms

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """L[rho] for a 2^N x 2^N matrix, without forming the superoperator."""
        h = self.h_eff
        out = -1j * (h @ rho) + 1j * (h @ rho.conj().T).conj().T
        for rate, jump in zip(self.jump_rates, self.jump_ops):
            if rate != 0:
                out += rate * (jump @ (jump @ rho.conj().T).conj().T)
        return out

    def norm(self) -> float:
        """Operator-norm scale of the generator used for residual tolerances."""
        bound = 2 * _opnorm_bound(self.h_eff)
        for rate, jump in zip(self.jump_rates, self.jump_ops):
            bound += abs(rate) * _opnorm_bound(jump) ** 2
        return bound

    def matrix(self) -> sp.csr_matrix:
        """Sparse superoperator acting on column-stacked vec(rho)."""
        if self.superoperator is None:
            if self.n_atoms > DIRECT_MAX_ATOMS:
                raise CapacityError(
                    f"explicit superoperator limited to N <= {DIRECT_MAX_ATOMS}")
            eye = sp.identity(self.dim, dtype=complex, format="csr")
            h = self.h_eff
            sup = -1j * sp.kron(eye, h) + 1j * sp.kron(h.conj(), eye)
            for rate, jump in zip(self.jump_rates, self.jump_ops):
                if rate != 0:
                    sup = sup + rate * sp.kron(jump.conj(), jump)
            self.superoperator = sup.tocsr()
        return self.superoperator


def system_hamiltonian(system: AtomSystem, couplings: CouplingMatrices,
                       include_drive: bool = True) -> sp.csr_matrix:
    n = system.n_total
    coeff = couplings.omega + np.diag(system.detunings)
    h = bilinear(coeff, n)
    if include_drive:
        for drive, op in zip(couplings.drive, lowering_ops(n)):
            if drive != 0:
                h = h - (drive * op.conj().T + np.conj(drive) * op)
    return h.tocsr()


def build_liouvillian(system: AtomSystem, couplings: CouplingMatrices) -> Liouvillian:
    n = system.n_total
    if n > MAX_ATOMS:
        raise CapacityError(f"full-quantum solver limited to N <= {MAX_ATOMS}, got N = {n}")
    h_sys = system_hamiltonian(system, couplings)
    h_eff = (h_sys - 0.5j * bilinear(couplings.gamma, n)).tocsr()

    rates, vecs = np.linalg.eigh(np.asarray(couplings.gamma))
    ops = lowering_ops(n)
    jumps = []
    for m in range(n):
        jump = sp.csr_matrix((2 ** n, 2 ** n), dtype=complex)
        for j in range(n):
            if vecs[j, m] != 0:
                jump = jump + vecs[j, m] * ops[j]
        jumps.append(jump.tocsr())
    return Liouvillian(n_atoms=n, h_system=h_sys, h_eff=h_eff, jump_ops=jumps,
                       jump_rates=rates, drive_direction=couplings.direction)


def _hermitian_unit_trace(rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def _residual(liouvillian: Liouvillian, rho: np.ndarray) -> float:
    return float(np.linalg.norm(liouvillian.apply(rho)))


def _steady_direct(liouvillian: Liouvillian) -> np.ndarray:
    dim = liouvillian.dim
    sup = liouvillian.matrix()
    if liouvillian.n_atoms <= DENSE_NULLSPACE_MAX_ATOMS:
        sing = sla.svdvals(sup.toarray())
        null_dim = int(np.sum(sing <= 1e-10 * sing[0]))
        if null_dim > 1:
            raise ConvergenceError(
                f"steady state is not unique: null space has dimension {null_dim}",
                null_dimension=null_dim)
    # Trace preservation makes the population rows linearly dependent, so the
    # row for rho_00 can be swapped for the normalisation condition.
    trace_row = sp.csr_matrix(np.eye(dim).reshape(1, -1, order="F").astype(complex))
    bordered = sp.vstack([trace_row, sup[1:]]).tocsc()
    rhs = np.zeros(dim * dim, dtype=complex)
    rhs[0] = 1.0
    try:
        vec = spla.splu(bordered).solve(rhs)
    except RuntimeError as exc:
        raise ConvergenceError(f"steady state is not unique or solve failed: {exc}") from exc
    return vec.reshape(dim, dim, order="F")


def _steady_integrate(liouvillian: Liouvillian, rtol: float, t_max: float,
                      rho0: np.ndarray | None) -> np.ndarray:
    dim = liouvillian.dim
    rho = ground_state(liouvillian.n_atoms).data if rho0 is None else rho0.copy()
    target = rtol * liouvillian.norm()
    t, chunk = 0.0, 10.0
    residual = _residual(liouvillian, rho)
    while residual > target:
        if t >= t_max:
            raise ConvergenceError(
                f"steady state not reached by t = {t_max}", residual=residual / liouvillian.norm(),
                time=t)
        span = min(chunk, t_max - t)
        rho = _integrate(liouvillian, rho, span, rtol=1e-11, atol=1e-13)
        rho = _hermitian_unit_trace(rho)
        t += span
        residual = _residual(liouvillian, rho)
        chunk = min(chunk * 1.5, 200.0)
    return rho


def steady_state(liouvillian: Liouvillian, method: str = "auto", rtol: float = 1e-9,
                 t_max: float = 1e5, rho0: DensityMatrix | None = None) -> DensityMatrix:
    """Unique stationary state with ||L[rho]|| <= rtol * ||L||.

    ``method`` is ``"direct"`` (sparse solve, N <= 6), ``"integrate"`` or
    ``"auto"`` (direct when allowed).
    """
    if method == "auto":
        method = "direct" if liouvillian.n_atoms <= DIRECT_MAX_ATOMS else "integrate"
    if method == "direct":
        rho = _steady_direct(liouvillian)
    elif method == "integrate":
        rho = _steady_integrate(liouvillian, rtol, t_max,
                                None if rho0 is None else rho0.data)
    else:
        raise ValueError(f"unknown steady-state method {method!r}")
    rho = _hermitian_unit_trace(rho)
    residual = _residual(liouvillian, rho)
    if residual > rtol * liouvillian.norm():
        raise ConvergenceError("steady-state residual above tolerance",
                               residual=residual / liouvillian.norm())
    return DensityMatrix(rho)


def _integrate(liouvillian, rho, t_final, rtol, atol, t_eval=None, method="DOP853"):
    dim = liouvillian.dim

    def rhs(_t, y):
        return liouvillian.apply(y.reshape(dim, dim)).ravel()

    sol = solve_ivp(rhs, (0.0, t_final), rho.ravel().astype(complex), method=method,
                    rtol=rtol, atol=atol, t_eval=t_eval)
    if sol.status != 0:
        raise ConvergenceError(f"integration failed: {sol.message}", time=float(sol.t[-1]))
    if t_eval is not None:
        return sol
    return sol.y[:, -1].reshape(dim, dim)


def evolve(rho0: DensityMatrix, liouvillian: Liouvillian, t_final: float,
           rtol: float = 1e-10, atol: float = 1e-12, n_checkpoints: int = 0,
           return_trajectory: bool = False):
    """Adaptive integration of rho from 0 to ``t_final``.

    Trace, Hermiticity and positivity are asserted on the returned state and on
    every checkpoint; ``return_trajectory`` also returns (times, states).
    """
    if t_final <= 0:
        raise ValueError("t_final must be > 0")
    issues = rho0.check()
    if issues:
        raise ValueError(f"invalid initial density matrix: {issues}")
    dim = liouvillian.dim
    times = np.linspace(0.0, t_final, max(n_checkpoints, 0) + 2)
    sol = _integrate(liouvillian, rho0.data, t_final, rtol, atol, t_eval=times)
    states = [DensityMatrix(sol.y[:, i].reshape(dim, dim)) for i in range(len(sol.t))]
    for t, state in zip(sol.t, states):
        issues = state.check(herm_tol=1e-8, trace_tol=1e-8)
        if issues:
            raise ConvergenceError(f"density matrix invariants violated at t = {t}: {issues}")
    if return_trajectory:
        return states[-1], (sol.t, states)
    return states[-1]


def solve_steady(system: AtomSystem, rabi_amplitude: float, direction,
                 **kwargs) -> DensityMatrix:
    couplings = coupling_matrices(system, rabi_amplitude, direction)
    return steady_state(build_liouvillian(system, couplings), **kwargs)


def expectation_sigma(rho: DensityMatrix):
    """Per-atom <sigma_j> and <sigma_j^z> = 2 P(excited) - 1."""
    data = rho.data
    n = rho.n_atoms
    sigma = np.array([np.sum(op.multiply(data.T)) for op in lowering_ops(n)])
    pops = np.real(np.diag(data))
    idx = np.arange(2 ** n)
    sigma_z = np.array([2 * pops[(idx >> j) & 1 == 1].sum() - 1 for j in range(n)])
    return sigma, sigma_z


def correlations(rho: DensityMatrix) -> np.ndarray:
    """C_ij = <sigma_i^+ sigma_j> = Tr(sigma_j rho sigma_i^+)."""
    ops = lowering_ops(rho.n_atoms)
    lowered = [op @ rho.data for op in ops]
    n = len(ops)
    out = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            out[i, j] = np.sum(ops[i].multiply(lowered[j]))
    return out


def _full_vector(mode, n_atoms: int) -> np.ndarray:
    vec = mode.vector if isinstance(mode, EigenMode) else np.asarray(mode, dtype=complex)
    if len(vec) == n_atoms and n_atoms != 2 ** n_atoms:
        vec = embed_single_excitation(vec)
    if len(vec) != 2 ** n_atoms:
        raise ValueError("mode vector does not match the Hilbert space dimension")
    return vec


def dark_state_population(rho: DensityMatrix, dark_mode) -> float:
    """c_D = <psi_D| rho |psi_D> for a unit-norm (possibly embedded) mode."""
    vec = _full_vector(dark_mode, rho.n_atoms)
    norm = np.linalg.norm(vec)
    if abs(norm - 1) > 1e-10:
        raise ValueError(f"dark mode must have unit norm, got {norm}")
    return float(np.real(vec.conj() @ rho.data @ vec))


def von_neumann_entropy(rho: DensityMatrix) -> float:
    lam = np.linalg.eigvalsh(0.5 * (rho.data + rho.data.conj().T))
    lam = lam[lam > ENTROPY_FLOOR]
    return float(-np.sum(lam * np.log(lam)))


def to_eigenbasis(rho: DensityMatrix, full_h_eff: EffectiveHamiltonian,
                  max_condition: float = 1e8) -> DensityMatrix:
    """rho~ = V^-1 rho V^-dagger with V the unit-norm right eigenvectors.

    Columns follow ``eigenmodes`` ordering (ascending decay rate); the modes
    are attached to the result.
    """
    modes = eigenmodes(full_h_eff)
    v = np.column_stack([m.vector for m in modes])
    cond = np.linalg.cond(v)
    if not np.isfinite(cond) or cond > max_condition:
        raise ConvergenceError(f"eigenvector matrix ill-conditioned (cond = {cond:.3e})",
                               condition=cond)
    v_inv = np.linalg.inv(v)
    return DensityMatrix(v_inv @ rho.data @ v_inv.conj().T, basis="eigen", modes=modes)

"""Collective eigenmodes of the effective non-Hermitian Hamiltonian.

Decay rates follow gamma_n = -2 Im E_n so that every passive mode has
gamma_n >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .coupling import CouplingMatrices, coupling_matrices
from .errors import CapacityError, ConvergenceError, SingularityError
from .lattice import K0, AtomSystem, SystemConfig, build_system
from .operators import bilinear

SINGLE_EXCITATION = "single_excitation"
FULL = "full"
MAX_FULL_ATOMS = 12


@dataclass(frozen=True, eq=False)
class EffectiveHamiltonian:
    matrix: np.ndarray
    subspace: str = SINGLE_EXCITATION


@dataclass(frozen=True, eq=False)
class EigenMode:
    energy: complex
    vector: np.ndarray

    @property
    def decay_rate(self) -> float:
        return -2.0 * float(np.imag(self.energy))


def effective_hamiltonian(system: AtomSystem, couplings: CouplingMatrices,
                          subspace: str = SINGLE_EXCITATION) -> EffectiveHamiltonian:
    """Drive-free H_S - (i/2) sum_jk Gamma_jk sigma_j^+ sigma_k.

    The full-space operator is the second quantisation of the N x N
    single-excitation block, so both subspaces share one coefficient matrix.
    """
    single = couplings.single_excitation_hamiltonian(system.detunings)
    if subspace == SINGLE_EXCITATION:
        return EffectiveHamiltonian(single, SINGLE_EXCITATION)
    if subspace != FULL:
        raise ValueError(f"unknown subspace {subspace!r}")
    n = system.n_total
    if n > MAX_FULL_ATOMS:
        raise CapacityError(f"full subspace needs N <= {MAX_FULL_ATOMS}, got N = {n}")
    return EffectiveHamiltonian(bilinear(single, n).toarray(), FULL)


def eigenmodes(h: EffectiveHamiltonian, residual_tol: float = 1e-8) -> list[EigenMode]:
    """All right eigenvectors (unit norm), sorted by decay rate then Re E."""
    matrix = np.asarray(h.matrix if isinstance(h, EffectiveHamiltonian) else h, dtype=complex)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("effective Hamiltonian contains non-finite entries")
    try:
        energies, vectors = sla.eig(matrix)
    except sla.LinAlgError as exc:
        raise ConvergenceError(f"eigensolver failed: {exc}") from exc
    vectors = vectors / np.linalg.norm(vectors, axis=0)

    scale = max(np.linalg.norm(matrix, 2), 1e-300)
    residuals = np.linalg.norm(matrix @ vectors - vectors * energies, axis=0)
    if np.any(residuals > residual_tol * scale):
        raise ConvergenceError(
            "eigenvector residuals exceed tolerance",
            residual=residuals.max() / scale,
            residuals=(residuals / scale).tolist(),
        )
    order = np.lexsort((energies.real, -2.0 * energies.imag))
    return [EigenMode(complex(energies[i]), vectors[:, i].copy()) for i in order]


def classify_dark_bright(modes: list[EigenMode]) -> dict:
    """Dark = smallest decay rate, bright = largest; ties go to smallest Re E."""
    if not modes:
        raise ValueError("empty mode list")
    dark = min(modes, key=lambda m: (m.decay_rate, m.energy.real))
    bright = min(modes, key=lambda m: (-m.decay_rate, m.energy.real))
    return {"dark": dark, "bright": bright}


def single_excitation_modes(system: AtomSystem, couplings: CouplingMatrices | None = None):
    couplings = couplings or coupling_matrices(system)
    return eigenmodes(effective_hamiltonian(system, couplings))


def infinite_lattice_decay(q, p: int, a: float, L: float, k: float = K0,
                           grazing_tol: float = 1e-12) -> float:
    """Decay rate of the (q, p) Bloch mode of two infinite mirror-symmetric arrays.

    Only reciprocal vectors with |q - Q| < k (propagating diffraction orders)
    contribute; the dipole is along x.
    """
    if a <= 0:
        raise ValueError("lattice pitch must be > 0")
    if p not in (1, -1):
        raise ValueError("parity must be +1 or -1")
    q = np.asarray(q, dtype=float)
    bz = np.pi / a
    if np.any(np.abs(q) > bz * (1 + 1e-12)):
        raise ValueError("q must lie in the first Brillouin zone")

    g = 2 * np.pi / a
    m_max = int(np.ceil((k + np.abs(q).max()) / g)) + 1
    total = 0.0
    for mx in range(-m_max, m_max + 1):
        for my in range(-m_max, m_max + 1):
            kx, ky = q[0] - g * mx, q[1] - g * my
            kpar2 = kx * kx + ky * ky
            if abs(np.sqrt(kpar2) - k) <= grazing_tol * k:
                raise SingularityError(f"grazing diffraction order (m_x, m_y) = ({mx}, {my})")
            if kpar2 >= k * k:
                continue
            kz = np.sqrt(k * k - kpar2)
            total += (k * k - kx * kx) / (k * kz) * (1 + p * np.cos(kz * L))
    return 3 * np.pi / (k * a) ** 2 * total


def bloch_state(q, p: int, system: AtomSystem) -> np.ndarray:
    """Unit-norm plane-wave trial vector exp(i q.r_perp) * p^(array - 1)."""
    if system.config is None or system.config.delta_a != 0:
        raise ValueError("Bloch states need equal pitches (delta_a = 0)")
    if p not in (1, -1):
        raise ValueError("parity must be +1 or -1")
    q = np.asarray(q, dtype=float)
    phase = np.exp(1j * system.positions[:, :2] @ q)
    parity = np.where(system.array_index == 1, 1.0, float(p))
    vec = phase * parity
    return vec / np.linalg.norm(vec)


def fit_power_law(n_values, rates) -> float:
    """Exponent alpha of rates ~ N^-alpha by least squares in log-log."""
    slope = np.polyfit(np.log(np.asarray(n_values, float)), np.log(np.asarray(rates, float)), 1)[0]
    return -float(slope)


def darkstate_scaling(n_perp_list, template: SystemConfig) -> dict:
    if len(n_perp_list) < 3:
        raise ValueError("need at least 3 array sizes for a scaling fit")
    samples = []
    for n_perp in n_perp_list:
        system = build_system(replace(template, n_perp=int(n_perp)))
        dark = classify_dark_bright(single_excitation_modes(system))["dark"]
        samples.append((system.n_total, dark.decay_rate))
    n_vals, rates = zip(*samples)
    return {"alpha": fit_power_law(n_vals, rates), "samples": samples}

"""Free-space dyadic Green's tensor and dipole-dipole coupling matrices.

With lengths in lambda0 and rates in gamma0 the dimensional prefactors of the
coupling rates collapse to

    Omega_ij = -(3/2) Re G_xx(r_i, r_j),    Gamma_ij = 3 Im G_xx(r_i, r_j),

for i != j, with Gamma_ii = 1 (the analytic R -> 0 limit of 3 Im G_xx) and
Omega_ii = 0 (self Lamb shift absorbed into the bare transition frequency).
The Green's tensor is always evaluated at the drive wavenumber K0 = 2*pi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .errors import SingularityError
from .lattice import K0, AtomSystem

FORWARD = "forward"
BACKWARD = "backward"


def direction_sign(direction) -> int:
    """Map ``"forward"``/``"backward"`` (or +1/-1) to the sign of k0 along z."""
    if direction in (FORWARD, "f", 1, +1.0):
        return 1
    if direction in (BACKWARD, "b", -1, -1.0):
        return -1
    raise ValueError(f"unknown excitation direction {direction!r}")


def direction_name(direction) -> str:
    return FORWARD if direction_sign(direction) > 0 else BACKWARD


def _green_coefficients(sep: np.ndarray, k: float):
    """Scalar coefficients (A, B) and unit vectors for G = A*I + B*RR.

    Written with spherical Hankel functions, G = (ik/4pi)[(h0 - h1/x) I +
    (3 h1/x - h0) RR], x = kR, which is the transverse/longitudinal split of
    [I + grad grad / k^2] exp(ikR)/(4 pi R) and keeps Im G accurate as R -> 0.
    """
    dist = np.linalg.norm(sep, axis=-1)
    if np.any(dist == 0):
        raise SingularityError("Green's tensor is singular at coincident points")
    x = k * dist
    h0 = spherical_jn(0, x) + 1j * spherical_yn(0, x)
    h1_over_x = (spherical_jn(1, x) + 1j * spherical_yn(1, x)) / x
    pref = 1j * k / (4 * np.pi)
    a = pref * (h0 - h1_over_x)
    b = pref * (3 * h1_over_x - h0)
    return a, b, sep / dist[..., None]


def greens_tensor(r, r_src, k: float = K0) -> np.ndarray:
    """3x3 free-space Green's tensor G(r, r_src) in units of 1/lambda0."""
    sep = np.asarray(r, dtype=float) - np.asarray(r_src, dtype=float)
    a, b, unit = _green_coefficients(sep[None, :], k)
    return a[0] * np.eye(3) + b[0] * np.outer(unit[0], unit[0])


def greens_dot_dipole(points, sources, k: float = K0, dipole=None) -> np.ndarray:
    """G(points[p], sources[s]) . d for all pairs, shape (P, S, 3)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    d = np.array([1.0, 0.0, 0.0]) if dipole is None else np.asarray(dipole, dtype=float)
    sep = points[:, None, :] - sources[None, :, :]
    a, b, unit = _green_coefficients(sep, k)
    proj = unit @ d
    return a[..., None] * d + (b * proj)[..., None] * unit


def _pair_green_xx(positions: np.ndarray, k: float = K0) -> np.ndarray:
    n = len(positions)
    sep = positions[:, None, :] - positions[None, :, :]
    off = ~np.eye(n, dtype=bool)
    out = np.zeros((n, n), dtype=complex)
    if n > 1:
        a, b, unit = _green_coefficients(sep[off], k)
        out[off] = a + b * unit[:, 0] ** 2
    return out


@dataclass(frozen=True, eq=False)
class CouplingMatrices:
    omega: np.ndarray
    gamma: np.ndarray
    drive: np.ndarray
    direction: str = FORWARD

    @property
    def n(self) -> int:
        return len(self.gamma)

    def single_excitation_hamiltonian(self, detunings) -> np.ndarray:
        """Omega + diag(Delta) - i Gamma / 2 on the single-excitation subspace."""
        return self.omega + np.diag(np.asarray(detunings, dtype=float)) - 0.5j * self.gamma


def _check_distinct(positions: np.ndarray):
    if len(positions) < 2:
        return
    sep = positions[:, None, :] - positions[None, :, :]
    dist = np.linalg.norm(sep, axis=-1) + np.eye(len(positions))
    if np.any(dist == 0):
        i, j = np.argwhere(np.triu(dist == 0, 1))[0]
        raise SingularityError(f"atoms {i} and {j} share the same position")


def drive_vector(system: AtomSystem, rabi_amplitude: float, direction=FORWARD) -> np.ndarray:
    """Per-atom Rabi couplings |Omega_R| exp(i k0 . r_k) with k0 = +-2pi z."""
    if rabi_amplitude < 0:
        raise ValueError("rabi_amplitude must be >= 0")
    sign = direction_sign(direction)
    return rabi_amplitude * np.exp(1j * sign * K0 * system.positions[:, 2])


def coupling_matrices(system: AtomSystem, rabi_amplitude: float = 0.0,
                      direction=FORWARD) -> CouplingMatrices:
    positions = np.asarray(system.positions, dtype=float)
    _check_distinct(positions)
    g = _pair_green_xx(positions)
    omega = -1.5 * g.real
    gamma = 3.0 * g.imag
    np.fill_diagonal(omega, 0.0)
    np.fill_diagonal(gamma, 1.0)
    # symmetric by construction up to rounding; enforce exactly
    omega = 0.5 * (omega + omega.T)
    gamma = 0.5 * (gamma + gamma.T)
    drive = drive_vector(system, rabi_amplitude, direction)
    for arr in (omega, gamma, drive):
        arr.setflags(write=False)
    return CouplingMatrices(omega=omega, gamma=gamma, drive=drive,
                            direction=direction_name(direction))

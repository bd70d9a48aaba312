"""Scattered fields, far-field amplitudes and optical-theorem cross sections.

Fields are expressed in units of the incident amplitude E0. The only
dimension-bearing constant is the Rabi-rate conversion of a dipole field,

    d . E_sc / hbar = (3/2) gamma0 lambda0 sum_j G(r, r_j) . x <s_j>,

which is divided by |Omega_R| to express E_sc in units of E0. The incident
field is x exp(+- i k0 z), matching the drive phases of ``drive_vector``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coupling import coupling_matrices, direction_name, direction_sign, greens_dot_dipole
from .errors import SingularityError
from .lattice import K0, AtomSystem

DIPOLE_FIELD_PREFACTOR = 1.5
SIGMA0_WEAK = 3.0 / (2.0 * np.pi)
ATOM_EXCLUSION_RADIUS = 1e-3
X_HAT = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True, eq=False)
class FieldSample:
    position: np.ndarray
    incident: np.ndarray
    scattered: np.ndarray
    intensity: float = float("nan")

    @property
    def total(self) -> np.ndarray:
        return self.incident + self.scattered


@dataclass(frozen=True, eq=False)
class FieldMap:
    """Fields on a rectangular grid; flagged points (near an atom) hold NaN."""

    plane: str
    offset: float
    extent: tuple
    resolution: tuple
    points: np.ndarray
    incident: np.ndarray
    scattered: np.ndarray
    intensity: np.ndarray
    flagged: np.ndarray
    intensity_kind: str

    @property
    def total(self) -> np.ndarray:
        return self.incident + self.scattered

    def samples(self):
        for i, pos in enumerate(self.points):
            yield FieldSample(pos, self.incident[i], self.scattered[i], float(self.intensity[i]))


@dataclass(frozen=True)
class CrossSectionReport:
    """Cross sections in lambda0^2 with the single-atom references used to normalise them.

    ``*_norm`` values are divided by the weak-field single-atom cross section
    3 lambda0^2 / 2pi; ``*_norm_power`` by the single-atom cross section at the
    same drive amplitude.
    """

    drive: float
    sigma_f: float
    sigma_b: float
    sigma0_weak: float
    sigma0_power: float
    extras: dict = field(default_factory=dict)

    @property
    def m_raw(self) -> float:
        return nonreciprocal_efficiency(self.sigma_f, self.sigma_b)

    @property
    def sigma_f_norm(self) -> float:
        return self.sigma_f / self.sigma0_weak

    @property
    def sigma_b_norm(self) -> float:
        return self.sigma_b / self.sigma0_weak

    @property
    def m_efficiency(self) -> float:
        return self.m_raw / self.sigma0_weak

    @property
    def m_efficiency_power(self) -> float:
        return self.m_raw / self.sigma0_power

    def to_dict(self) -> dict:
        out = {
            "drive": self.drive,
            "sigma_f": self.sigma_f,
            "sigma_b": self.sigma_b,
            "sigma0_weak": self.sigma0_weak,
            "sigma0_power": self.sigma0_power,
            "sigma_f_norm": self.sigma_f_norm,
            "sigma_b_norm": self.sigma_b_norm,
            "m_efficiency": self.m_efficiency,
            "m_efficiency_power": self.m_efficiency_power,
            "units": {"sigma": "lambda0^2", "normalisation": "sigma0_weak"},
        }
        out.update(self.extras)
        return out


def incident_field(points, direction) -> np.ndarray:
    """x-polarised plane wave exp(+- i k0 z) in units of E0, shape (P, 3)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    phase = np.exp(1j * direction_sign(direction) * K0 * points[:, 2])
    return phase[:, None] * X_HAT


def _field_kernel(points, system: AtomSystem) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dist = np.linalg.norm(points[:, None, :] - system.positions[None, :, :], axis=-1)
    if np.any(dist == 0):
        raise SingularityError("field point coincides with an atom")
    return DIPOLE_FIELD_PREFACTOR * greens_dot_dipole(points, system.positions, K0,
                                                      system.dipole_direction)


def scattered_field(point, system: AtomSystem, sigma, drive_amplitude: float | None = None):
    """Scattered field at ``point`` (Rabi units, or E0 units when a drive is given)."""
    kernel = _field_kernel(point, system)
    field_ = np.einsum("psc,s->pc", kernel, np.asarray(sigma, dtype=complex))
    if drive_amplitude is not None:
        if drive_amplitude <= 0:
            raise ValueError("drive_amplitude must be > 0")
        field_ = field_ / drive_amplitude
    return field_[0] if np.ndim(point) == 1 else field_


def _unit_direction(direction) -> np.ndarray:
    if isinstance(direction, str) or np.ndim(direction) == 0:
        return np.array([0.0, 0.0, float(direction_sign(direction))])
    n_hat = np.asarray(direction, dtype=float)
    return n_hat / np.linalg.norm(n_hat)


def far_field_amplitude(direction, system: AtomSystem, sigma, drive_amplitude: float) -> np.ndarray:
    """f(n) with E_sc -> f exp(i k0 r)/r as r -> infinity, in units of lambda0.

    f = (3 / (8 pi |Omega_R|)) sum_j (I - n n) . x <s_j> exp(-i k0 n . r_j).
    """
    if not drive_amplitude > 0:
        raise ValueError("far-field amplitude is defined relative to a non-zero drive")
    n_hat = _unit_direction(direction)
    d = system.dipole_direction
    transverse = d - n_hat * (n_hat @ d)
    phases = np.exp(-1j * K0 * (system.positions @ n_hat))
    total = np.sum(np.asarray(sigma, dtype=complex) * phases)
    return 3.0 / (8.0 * np.pi * drive_amplitude) * total * transverse


def total_cross_section(direction, system: AtomSystem, sigma, drive_amplitude: float) -> float:
    """Optical theorem: (4 pi / k0) Im(x . f) along the propagation direction."""
    f = far_field_amplitude(direction, system, sigma, drive_amplitude)
    return float(4 * np.pi / K0 * np.imag(X_HAT @ f))


def power_balance_cross_section(system: AtomSystem, sigma, drive) -> float:
    """Extinction from the work done by the drive: 3/(2 k0 |Omega|^2) sum Im(Omega_j^* s_j)."""
    drive = np.asarray(drive, dtype=complex)
    amp = np.abs(drive).max()
    if amp == 0:
        raise ValueError("power balance needs a non-zero drive")
    work = np.sum(np.imag(np.conj(drive) * np.asarray(sigma, dtype=complex)))
    return float(3.0 / (2.0 * K0 * amp ** 2) * work)


def scattered_power_cross_section(system: AtomSystem, sigma, drive_amplitude: float,
                                  n_theta: int = 96, n_phi: int = 96) -> float:
    """Integral of |f|^2 over the sphere (Gauss-Legendre in cos theta).

    Equals the extinction cross section whenever nothing is absorbed, i.e. in
    the weak-drive (elastic) regime.
    """
    cos_t, w_t = np.polynomial.legendre.leggauss(n_theta)
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    sin_t = np.sqrt(1 - cos_t ** 2)
    total = 0.0
    for ct, st, wt in zip(cos_t, sin_t, w_t):
        n_hat = np.column_stack([st * np.cos(phi), st * np.sin(phi), np.full(n_phi, ct)])
        amps = [far_field_amplitude(n, system, sigma, drive_amplitude) for n in n_hat]
        total += wt * (2 * np.pi / n_phi) * np.sum(np.abs(amps) ** 2)
    return float(total)


def _thermal_response(rabi, detuning, n_thermal):
    """<s>/Omega_R and rho_ee of a driven two-level atom with thermal occupation n."""
    nn = 2 * n_thermal + 1
    denom = nn ** 2 + 8 * rabi ** 2 + 4 * detuning ** 2
    ratio = 2j * (nn - 2j * detuning) / (nn * denom)
    rho_ee = (4 * rabi ** 2 / denom + n_thermal) / nn
    return ratio, rho_ee


def single_atom_steady_state(rabi_amplitude: float, detuning: float = 0.0,
                             n_thermal: float = 0.0) -> dict:
    """Closed-form steady state for drive -(Omega s^+ + h.c.), real Omega_R >= 0.

    rho_ee = (4|Omega|^2 / (g^2 + 8|Omega|^2 + 4 Delta^2) + n) / (2n + 1),
    <s> = 2i Omega (g - 2i Delta) / ((2n+1)(g^2 + 8|Omega|^2 + 4 Delta^2)),
    with g = gamma0 (2n + 1).
    """
    if rabi_amplitude < 0:
        raise ValueError("rabi_amplitude must be >= 0")
    ratio, rho_ee = _thermal_response(rabi_amplitude, detuning, n_thermal)
    sigma = ratio * rabi_amplitude
    return {"sigma": complex(sigma), "rho_ee": float(rho_ee),
            "sigma_z": float(2 * rho_ee - 1)}


def single_atom_reference(rabi_amplitude: float = 0.0, detuning: float = 0.0,
                          n_thermal: float = 0.0) -> float:
    """Optical-theorem cross section of one atom at the origin (finite at zero drive)."""
    if rabi_amplitude < 0:
        raise ValueError("rabi_amplitude must be >= 0")
    ratio, _ = _thermal_response(rabi_amplitude, detuning, n_thermal)
    # f_x = 3 <s> / (8 pi |Omega|) and <s>/|Omega| stays finite as Omega -> 0
    return float(4 * np.pi / K0 * np.imag(3.0 * ratio / (8 * np.pi)))


def nonreciprocal_efficiency(sigma_f: float, sigma_b: float) -> float:
    """M = max(s_f, s_b) |s_f - s_b| / (s_f + s_b)."""
    if sigma_f < 0 or sigma_b < 0:
        raise ValueError("cross sections must be >= 0")
    if sigma_f == 0 and sigma_b == 0:
        raise ValueError("M is undefined when both cross sections vanish")
    return max(sigma_f, sigma_b) * abs(sigma_f - sigma_b) / (sigma_f + sigma_b)


def evaluate_fields(points, system: AtomSystem, sigma, drive_amplitude: float, direction,
                    correlations=None, exclusion: float = ATOM_EXCLUSION_RADIUS):
    """Incident, scattered (E0 units) and scattered intensity at arbitrary points.

    The intensity is |E_sc|^2 built from <s_i^+ s_j>; without ``correlations``
    the factorised product <s_i^+><s_j> is used. Points within ``exclusion`` of
    an atom are flagged and filled with NaN.
    """
    if not drive_amplitude > 0:
        raise ValueError("drive_amplitude must be > 0")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.size == 0:
        raise ValueError("empty set of field points")
    sigma = np.asarray(sigma, dtype=complex)
    dist = np.linalg.norm(points[:, None, :] - system.positions[None, :, :], axis=-1)
    flagged = dist.min(axis=1) < exclusion
    incident = incident_field(points, direction)
    scattered = np.full((len(points), 3), np.nan, dtype=complex)
    intensity = np.full(len(points), np.nan)
    ok = ~flagged
    if ok.any():
        kernel = _field_kernel(points[ok], system) / drive_amplitude
        scattered[ok] = np.einsum("psc,s->pc", kernel, sigma)
        if correlations is None:
            intensity[ok] = np.sum(np.abs(scattered[ok]) ** 2, axis=1)
        else:
            corr = np.asarray(correlations, dtype=complex)
            intensity[ok] = np.real(np.einsum("pic,ij,pjc->p", kernel.conj(), corr, kernel))
    return incident, scattered, intensity, flagged


def field_map(plane, extent, resolution, system: AtomSystem, sigma, drive_amplitude: float,
              direction, correlations=None) -> FieldMap:
    """Fields on a grid in the plane ``("xy", z0)`` or ``("xz", y0)``.

    ``extent`` is (u_min, u_max, v_min, v_max) for the in-plane coordinates and
    ``resolution`` is (n_u, n_v).
    """
    name, offset = plane
    n_u, n_v = (int(r) for r in resolution)
    if n_u < 1 or n_v < 1:
        raise ValueError("field map grid is empty")
    u = np.linspace(extent[0], extent[1], n_u)
    v = np.linspace(extent[2], extent[3], n_v)
    uu, vv = np.meshgrid(u, v, indexing="xy")
    uu, vv = uu.ravel(), vv.ravel()
    const = np.full(uu.shape, float(offset))
    if name == "xy":
        points = np.column_stack([uu, vv, const])
    elif name == "xz":
        points = np.column_stack([uu, const, vv])
    else:
        raise ValueError(f"unknown plane {name!r}")
    incident, scattered, intensity, flagged = evaluate_fields(
        points, system, sigma, drive_amplitude, direction, correlations)
    kind = "correlator" if correlations is not None else "factorised"
    return FieldMap(name, float(offset), tuple(extent), (n_u, n_v), points, incident,
                    scattered, intensity, flagged, kind)


def solve_direction(system: AtomSystem, rabi_amplitude: float, direction, method: str = "auto",
                    solver_options: dict | None = None) -> dict:
    """Steady state for one drive direction; returns sigma plus solver-specific extras."""
    from . import meanfield, quantum

    opts = dict(solver_options or {})
    method = resolve_method(method, system.n_total)
    couplings = coupling_matrices(system, rabi_amplitude, direction)
    if method == "quantum":
        liouv = quantum.build_liouvillian(system, couplings)
        rho = quantum.steady_state(liouv, **opts)
        sigma, sigma_z = quantum.expectation_sigma(rho)
        return {"method": method, "sigma": sigma, "sigma_z": sigma_z, "rho": rho,
                "couplings": couplings}
    state = meanfield.integrate_to_steady(system, couplings, **opts)
    return {"method": method, "sigma": state.sigma, "sigma_z": state.sigma_z,
            "state": state, "couplings": couplings}


def resolve_method(method: str, n_atoms: int) -> str:
    from .quantum import MAX_ATOMS

    if method == "auto":
        return "quantum" if n_atoms <= MAX_ATOMS else "semiclassical"
    if method not in ("quantum", "semiclassical"):
        raise ValueError(f"unknown solver method {method!r}")
    return method


def cross_sections(system: AtomSystem, rabi_amplitude: float, method: str = "auto",
                   solver_options: dict | None = None, parallel: bool = False):
    """Solve both drive directions and build the CrossSectionReport.

    Returns ``(report, results)`` where ``results`` maps direction name to the
    per-direction solver output.
    """
    if not rabi_amplitude > 0:
        raise ValueError("cross sections need rabi_amplitude > 0")
    directions = ("forward", "backward")

    def run(direction):
        return solve_direction(system, rabi_amplitude, direction, method, solver_options)

    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            outs = list(pool.map(run, directions))
    else:
        outs = [run(d) for d in directions]
    results = dict(zip(directions, outs))
    sig = {d: total_cross_section(d, system, results[d]["sigma"], rabi_amplitude)
           for d in directions}
    report = CrossSectionReport(
        drive=float(rabi_amplitude),
        sigma_f=sig["forward"],
        sigma_b=sig["backward"],
        sigma0_weak=SIGMA0_WEAK,
        sigma0_power=single_atom_reference(rabi_amplitude),
        extras={"method": outs[0]["method"], "directions": [direction_name(d) for d in directions]},
    )
    return report, results

"""Geometry of two parallel square arrays of two-level atoms.

Natural units are used throughout the package: lengths in units of the
resonant wavelength lambda0, rates in units of the single-atom decay rate
gamma0, hbar = 1, so the free-space wavenumber is ``K0 = 2*pi``.

Array 1 lies in the plane z = 0, array 2 in the plane z = L. Both lattices are
centred on the z axis. Atoms are ordered array 1 first, then array 2; within an
array the ordering is row-major with x running fastest. This ordering also fixes
the bit order of the many-body product basis (bit j <-> atom j).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError

K0 = 2.0 * np.pi
DIPOLE_DIRECTION = np.array([1.0, 0.0, 0.0])
REGISTRATION = "centered"


@dataclass(frozen=True)
class SystemConfig:
    """Declarative description of the double-array geometry.

    ``delta_half`` is the full frequency splitting Delta = omega2 - omega1 (in
    gamma0) with the drive frequency centred between the two arrays, so array 1
    is detuned by -Delta/2 and array 2 by +Delta/2.
    """

    n_perp: int
    a1: float
    delta_a: float
    L: float
    delta_half: float = 0.0
    dimer_mode: bool = False

    @property
    def a2(self) -> float:
        return self.a1 + self.delta_a

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        known = {"n_perp", "a1", "delta_a", "L", "delta_half", "dimer_mode"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(
                f"unknown system field(s): {sorted(unknown)}",
                [{"field": f, "message": "unknown field"} for f in sorted(unknown)],
            )
        missing = {"n_perp", "a1", "L"} - set(data)
        if missing:
            raise ConfigError(
                f"missing system field(s): {sorted(missing)}",
                [{"field": f, "message": "required"} for f in sorted(missing)],
            )
        values = {}
        violations = []
        for name in known & set(data):
            raw = data[name]
            try:
                if name == "n_perp":
                    if isinstance(raw, bool) or float(raw) != int(float(raw)):
                        raise ValueError
                    values[name] = int(float(raw))
                elif name == "dimer_mode":
                    if not isinstance(raw, bool):
                        raise ValueError
                    values[name] = raw
                else:
                    if isinstance(raw, bool):
                        raise ValueError
                    values[name] = float(raw)
            except (TypeError, ValueError):
                violations.append({"field": name, "message": f"malformed value {raw!r}"})
        if violations:
            raise ConfigError("malformed system config", violations)
        values.setdefault("delta_a", 0.0)
        return cls(**values)


@dataclass(frozen=True, eq=False)
class AtomSystem:
    """All static per-atom parameters of a built geometry."""

    positions: np.ndarray
    detunings: np.ndarray
    array_index: np.ndarray
    config: SystemConfig | None
    dipole_direction: np.ndarray = field(default_factory=lambda: DIPOLE_DIRECTION.copy())

    def __post_init__(self):
        for arr in (self.positions, self.detunings, self.array_index, self.dipole_direction):
            arr.setflags(write=False)

    @property
    def n_total(self) -> int:
        return len(self.positions)

    def with_detuning_shift(self, shift: float) -> "AtomSystem":
        """Copy with every detuning lowered by ``shift``.

        Raising the drive frequency omega0 by ``shift`` lowers all
        Delta_k = omega_k - omega0 by the same amount.
        """
        return AtomSystem(
            positions=self.positions.copy(),
            detunings=self.detunings - shift,
            array_index=self.array_index.copy(),
            config=self.config,
        )

    def metadata(self) -> dict:
        return {
            "n_total": self.n_total,
            "registration": REGISTRATION,
            "dipole_direction": self.dipole_direction.tolist(),
            "units": {"length": "lambda0", "rate": "gamma0"},
        }


def validate_config(config: SystemConfig) -> list[dict]:
    """Return one ``{"field", "message"}`` record per violated invariant."""
    violations = []

    def bad(name, message):
        violations.append({"field": name, "message": message})

    for name in ("a1", "delta_a", "L", "delta_half"):
        value = getattr(config, name)
        if not np.isfinite(value):
            bad(name, "must be finite")
    if config.n_perp < 1:
        bad("n_perp", "must be >= 1")
    if config.dimer_mode and config.n_perp != 2:
        bad("n_perp", "dimer_mode places exactly 2 atoms per array; n_perp must be 2")
    if not config.a1 > 0:
        bad("a1", "pitch of array 1 must be > 0")
    elif not config.a1 + config.delta_a > 0:
        bad("a1+delta_a", "pitch of array 2 must be > 0")
    if not config.L > 0:
        bad("L", "inter-array separation must be > 0")
    return violations


def _array_sites(n_perp: int, pitch: float, dimer: bool) -> np.ndarray:
    if dimer:
        return np.array([[-pitch / 2, 0.0], [pitch / 2, 0.0]])
    offsets = (np.arange(n_perp) - (n_perp - 1) / 2.0) * pitch
    ys, xs = np.meshgrid(offsets, offsets, indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()])


def build_system(config: SystemConfig) -> AtomSystem:
    violations = validate_config(config)
    if violations:
        raise ConfigError("invalid system config: " + "; ".join(
            f"{v['field']}: {v['message']}" for v in violations), violations)

    sites1 = _array_sites(config.n_perp, config.a1, config.dimer_mode)
    sites2 = _array_sites(config.n_perp, config.a2, config.dimer_mode)
    n1, n2 = len(sites1), len(sites2)
    positions = np.zeros((n1 + n2, 3))
    positions[:n1, :2] = sites1
    positions[n1:, :2] = sites2
    positions[n1:, 2] = config.L

    detunings = np.concatenate([
        np.full(n1, -config.delta_half / 2.0),
        np.full(n2, config.delta_half / 2.0),
    ])
    array_index = np.concatenate([np.ones(n1, dtype=int), np.full(n2, 2, dtype=int)])
    return AtomSystem(positions=positions, detunings=detunings,
                      array_index=array_index, config=config)


def from_positions(positions, detunings=None, array_index=None) -> AtomSystem:
    """Free-form atom cloud (no lattice config), e.g. a single atom or random geometry."""
    positions = np.array(positions, dtype=float).reshape(-1, 3)
    n = len(positions)
    detunings = np.zeros(n) if detunings is None else np.array(detunings, dtype=float).reshape(n)
    array_index = (np.ones(n, dtype=int) if array_index is None
                   else np.array(array_index, dtype=int).reshape(n))
    return AtomSystem(positions=positions, detunings=detunings, array_index=array_index,
                      config=None)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atomarray import (SingularityError, SystemConfig, bloch_state, build_system, coupling_matrices,
                       from_positions)
from atomarray.coupling import greens_tensor
from atomarray.meanfield import linear_response
from atomarray.quantum import correlations, solve_steady, expectation_sigma
from atomarray.scattering import (SIGMA0_WEAK, CrossSectionReport, cross_sections,
                                  evaluate_fields, far_field_amplitude, field_map, incident_field,
                                  nonreciprocal_efficiency, power_balance_cross_section,
                                  resolve_method, scattered_field, scattered_power_cross_section,
                                  single_atom_reference, single_atom_steady_state,
                                  total_cross_section)
from atomarray.spectral import classify_dark_bright, single_excitation_modes

from conftest import single_atom

K = 2 * np.pi


def test_single_atom_cross_section_weak_and_saturated():
    assert SIGMA0_WEAK == pytest.approx(3 / (2 * np.pi))
    assert single_atom_reference() == pytest.approx(3 / (2 * np.pi), rel=1e-14)
    for rabi in (0.1, 0.5, 2.0):
        expected = 3 / (2 * np.pi) / (1 + 8 * rabi ** 2)
        assert single_atom_reference(rabi) == pytest.approx(expected, rel=1e-14)
        sigma = single_atom_steady_state(rabi)["sigma"]
        assert total_cross_section("forward", single_atom(), [sigma], rabi) == pytest.approx(
            expected, rel=1e-12)
    assert single_atom_reference(0.0, 1.0) == pytest.approx(3 / (2 * np.pi) / 5, rel=1e-14)
    with pytest.raises(ValueError):
        single_atom_reference(-1.0)
    with pytest.raises(ValueError):
        single_atom_steady_state(-1.0)


def test_far_field_matches_numeric_limit(dimer_system):
    sigma = linear_response(dimer_system, coupling_matrices(dimer_system, 0.3))
    n_hat = np.array([0.3, -0.2, 0.9])
    n_hat /= np.linalg.norm(n_hat)
    f = far_field_amplitude(n_hat, dimer_system, sigma, 0.3)
    errors = []
    for r in (1e3, 2e3):
        point = r * n_hat
        numeric = scattered_field(point, dimer_system, sigma, 0.3) * r * np.exp(-1j * K * r)
        errors.append(np.linalg.norm(numeric - f) / np.linalg.norm(f))
    assert errors[0] < 1e-3
    # near-field corrections fall off as 1/(k r)
    assert errors[1] == pytest.approx(errors[0] / 2, rel=0.05)


def test_scattered_field_single_dipole():
    point = np.array([0.2, 0.5, 0.7])
    out = scattered_field(point, single_atom(), [0.1j], 0.5)
    expected = 1.5 * greens_tensor(point, [0, 0, 0])[:, 0] * 0.1j / 0.5
    np.testing.assert_allclose(out, expected, rtol=1e-12)
    with pytest.raises(SingularityError):
        scattered_field([0, 0, 0], single_atom(), [0.1j])
    with pytest.raises(ValueError):
        scattered_field(point, single_atom(), [0.1j], 0.0)


def test_incident_field():
    pts = np.array([[0, 0, 0.25], [1, 2, 0.5]])
    np.testing.assert_allclose(incident_field(pts, "forward")[:, 0], [1j, -1])
    np.testing.assert_allclose(incident_field(pts, "backward")[:, 0], [-1j, -1])
    np.testing.assert_array_equal(incident_field(pts, "forward")[:, 1:], 0)


def test_mirror_symmetric_geometry_is_reciprocal():
    system = build_system(SystemConfig(2, 1 / 3, 0.0, 0.1, 0.0, dimer_mode=True))
    report, _ = cross_sections(system, 0.5)
    assert report.sigma_f == pytest.approx(report.sigma_b, rel=1e-9)
    assert report.m_efficiency == pytest.approx(0.0, abs=1e-9)


def test_reflection_relabels_directions(dimer_system):
    mirrored = from_positions(dimer_system.positions * np.array([1, 1, -1]),
                              dimer_system.detunings)
    for rabi in (0.05, 0.8):
        f = solve_steady(dimer_system, rabi, "forward")
        b = solve_steady(mirrored, rabi, "backward")
        sf = total_cross_section("forward", dimer_system, expectation_sigma(f)[0], rabi)
        sb = total_cross_section("backward", mirrored, expectation_sigma(b)[0], rabi)
        assert sf == pytest.approx(sb, rel=1e-9)


def test_cross_section_oracles_agree_in_weak_regime(dimer_system):
    for direction in ("forward", "backward"):
        c = coupling_matrices(dimer_system, 1e-3, direction)
        sigma = linear_response(dimer_system, c)
        optical = total_cross_section(direction, dimer_system, sigma, 1e-3)
        work = power_balance_cross_section(dimer_system, sigma, c.drive)
        radiated = scattered_power_cross_section(dimer_system, sigma, 1e-3)
        assert work == pytest.approx(optical, rel=1e-12)
        assert radiated == pytest.approx(optical, rel=1e-10)


def test_strong_drive_extinction_exceeds_coherent_scattering(dimer_system):
    c = coupling_matrices(dimer_system, 1.0, "forward")
    sigma = expectation_sigma(solve_steady(dimer_system, 1.0, "forward"))[0]
    optical = total_cross_section("forward", dimer_system, sigma, 1.0)
    assert power_balance_cross_section(dimer_system, sigma, c.drive) == pytest.approx(optical,
                                                                                      rel=1e-10)
    assert scattered_power_cross_section(dimer_system, sigma, 1.0) < optical


@settings(max_examples=10)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 3), rabi=st.floats(0.01, 3),
       direction=st.sampled_from(["forward", "backward"]))
def test_extinction_non_negative(seed, n, rabi, direction):
    rng = np.random.default_rng(seed)
    system = from_positions(rng.uniform(-0.5, 0.5, size=(n, 3)), rng.uniform(-2, 2, n))
    sigma = expectation_sigma(solve_steady(system, rabi, direction))[0]
    assert total_cross_section(direction, system, sigma, rabi) >= -1e-12


def test_nonreciprocal_efficiency_examples():
    assert nonreciprocal_efficiency(2.0, 1.0) == pytest.approx(2 / 3)
    assert nonreciprocal_efficiency(1.0, 2.0) == pytest.approx(2 / 3)
    assert nonreciprocal_efficiency(1.0, 1.0) == 0.0
    assert nonreciprocal_efficiency(1.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        nonreciprocal_efficiency(0.0, 0.0)
    with pytest.raises(ValueError):
        nonreciprocal_efficiency(-1.0, 1.0)


def test_report_normalisation():
    report = CrossSectionReport(0.5, 0.3, 0.1, SIGMA0_WEAK, single_atom_reference(0.5))
    assert report.m_raw == pytest.approx(0.3 * 0.2 / 0.4)
    assert report.m_efficiency == pytest.approx(report.m_raw / SIGMA0_WEAK)
    assert report.m_efficiency_power == pytest.approx(report.m_raw * 3 * (2 * np.pi) / 3)
    d = report.to_dict()
    assert d["sigma_f_norm"] == pytest.approx(0.3 / SIGMA0_WEAK)


def test_cross_sections_parallel_and_errors(dimer_system):
    serial, _ = cross_sections(dimer_system, 0.5)
    threaded, results = cross_sections(dimer_system, 0.5, parallel=True)
    assert serial.sigma_f == threaded.sigma_f and serial.sigma_b == threaded.sigma_b
    assert results["forward"]["method"] == "quantum"
    with pytest.raises(ValueError):
        cross_sections(dimer_system, 0.0)
    semi, _ = cross_sections(dimer_system, 0.5, method="semiclassical")
    assert semi.extras["method"] == "semiclassical"


def test_resolve_method():
    assert resolve_method("auto", 10) == "quantum"
    assert resolve_method("auto", 11) == "semiclassical"
    with pytest.raises(ValueError):
        resolve_method("exact", 4)


def test_field_map_flags_atoms_and_grid_errors(dimer_system):
    sigma = linear_response(dimer_system, coupling_matrices(dimer_system, 0.1))
    x0 = dimer_system.positions[0, 0]
    fmap = field_map(("xz", 0.0), (x0, x0 + 1, 0, 1), (3, 4), dimer_system, sigma, 0.1,
                     "forward")
    assert fmap.points.shape == (12, 3)
    assert fmap.flagged[0] and np.isnan(fmap.intensity[0])
    assert np.all(np.isfinite(fmap.intensity[~fmap.flagged]))
    assert fmap.intensity_kind == "factorised"
    sample = next(fmap.samples())
    assert sample.total.shape == (3,)
    with pytest.raises(ValueError):
        field_map(("xy", 0.0), (0, 1, 0, 1), (0, 3), dimer_system, sigma, 0.1, "forward")
    with pytest.raises(ValueError):
        field_map(("yz", 0.0), (0, 1, 0, 1), (2, 2), dimer_system, sigma, 0.1, "forward")
    with pytest.raises(ValueError):
        evaluate_fields(np.empty((0, 3)), dimer_system, sigma, 0.1, "forward")


def test_correlator_intensity_matches_factorised_for_weak_drive(dimer_system):
    rho = solve_steady(dimer_system, 1e-3, "forward")
    sigma = expectation_sigma(rho)[0]
    pts = np.array([[0.0, 0.0, 3.0], [0.5, 0.2, -2.0]])
    _, _, fact, _ = evaluate_fields(pts, dimer_system, sigma, 1e-3, "forward")
    _, _, corr, _ = evaluate_fields(pts, dimer_system, sigma, 1e-3, "forward",
                                    correlations(rho))
    np.testing.assert_allclose(corr, fact, rtol=1e-3)


def test_dark_mode_is_dim_on_axis():
    system = build_system(SystemConfig(10, 0.25, 0.0, 0.6, 0.0))
    modes = single_excitation_modes(system)
    dark_mode = classify_dark_bright(modes)["dark"]
    # the fastest-decaying mode is odd in x; the on-axis bright mode is the one a
    # normally incident plane wave couples to, i.e. the largest q = 0 Bloch overlap
    plane = [bloch_state([0, 0], p, system) for p in (1, -1)]
    bright_mode = max(modes, key=lambda m: max(abs(np.vdot(b, m.vector)) for b in plane))
    pts = np.array([[0, 0, 5.0 + 0.3], [0, 0, -5.0 + 0.3]])
    _, _, dark, _ = evaluate_fields(pts, system, dark_mode.vector, 1.0, "forward")
    _, _, bright, _ = evaluate_fields(pts, system, bright_mode.vector, 1.0, "forward")
    assert np.all(bright / dark >= 1e2)

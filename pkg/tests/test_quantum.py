import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from atomarray import (CapacityError, ConvergenceError, SystemConfig, build_system,
                       coupling_matrices, from_positions)
from atomarray.coupling import CouplingMatrices
from atomarray.meanfield import linear_response
from atomarray.quantum import (DensityMatrix, build_liouvillian, correlations,
                               dark_state_population, evolve, expectation_sigma, ground_state,
                               solve_steady, steady_state, to_eigenbasis, von_neumann_entropy)
from atomarray.scattering import single_atom_steady_state
from atomarray.spectral import FULL, classify_dark_bright, eigenmodes, effective_hamiltonian

from conftest import single_atom

LOWER = np.array([[0, 1], [0, 0]], dtype=complex)  # |g><e| with |g> = index 0


def dense_lowering(j, n):
    # atom 0 is the least significant bit, i.e. the last Kronecker factor
    out = np.eye(1, dtype=complex)
    for k in reversed(range(n)):
        out = np.kron(out, LOWER if k == j else np.eye(2))
    return out


def oracle_superoperator(system, couplings):
    """Dense column-stacked Lindbladian with the unrotated Gamma_ij dissipator."""
    n = system.n_total
    s = [dense_lowering(j, n) for j in range(n)]
    h = sum(system.detunings[j] * s[j].conj().T @ s[j] for j in range(n))
    for i in range(n):
        for j in range(n):
            if i != j:
                h = h + couplings.omega[i, j] * s[i].conj().T @ s[j]
    for j in range(n):
        d = couplings.drive[j]
        h = h - (d * s[j].conj().T + np.conj(d) * s[j])
    eye = np.eye(2 ** n)
    sup = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for i in range(n):
        for j in range(n):
            g = couplings.gamma[i, j]
            if g == 0:
                continue
            prod = s[i].conj().T @ s[j]
            sup = sup + g * (np.kron(s[i].conj(), s[j])
                             - 0.5 * np.kron(eye, prod) - 0.5 * np.kron(prod.T, eye))
    return sup


def random_density(rng, n):
    a = rng.normal(size=(2 ** n, 2 ** n)) + 1j * rng.normal(size=(2 ** n, 2 ** n))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_liouvillian_matches_oracle(dimer_system, rng):
    c = coupling_matrices(dimer_system, 0.7, "backward")
    liouv = build_liouvillian(dimer_system, c)
    oracle = oracle_superoperator(dimer_system, c)
    np.testing.assert_allclose(liouv.matrix().toarray(), oracle, atol=1e-12)
    rho = random_density(rng, 4)
    np.testing.assert_allclose(liouv.apply(rho).ravel(order="F"), oracle @ rho.ravel(order="F"),
                               atol=1e-12)


@settings(max_examples=15)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 3), rabi=st.floats(0, 3))
def test_trace_preservation_and_hermiticity(seed, n, rabi):
    rng = np.random.default_rng(seed)
    system = from_positions(rng.uniform(-0.5, 0.5, size=(n, 3)), rng.uniform(-2, 2, n))
    liouv = build_liouvillian(system, coupling_matrices(system, rabi))
    rho = random_density(rng, n)
    out = liouv.apply(rho)
    assert abs(np.trace(out)) < 1e-12
    np.testing.assert_allclose(out, out.conj().T, atol=1e-12)


@pytest.mark.parametrize("rabi", [0.0, 0.1, 0.5, 1.0, 3.0])
@pytest.mark.parametrize("detuning", [-2.0, 0.0, 0.7])
def test_single_atom_closed_form(rabi, detuning):
    rho = solve_steady(single_atom(detuning), rabi, "forward")
    sigma, sigma_z = expectation_sigma(rho)
    ref = single_atom_steady_state(rabi, detuning)
    assert sigma[0] == pytest.approx(ref["sigma"], abs=1e-10)
    assert rho.data[1, 1].real == pytest.approx(ref["rho_ee"], abs=1e-10)
    assert sigma_z[0] == pytest.approx(ref["sigma_z"], abs=1e-10)


def test_single_atom_resonant_example():
    ref = single_atom_steady_state(0.5, 0.0)
    assert ref["sigma"] == pytest.approx(1j / 3, abs=1e-15)
    assert ref["rho_ee"] == pytest.approx(1 / 3, abs=1e-15)


@pytest.mark.parametrize("n_th", [0.3, 1.5])
def test_thermal_single_atom(n_th):
    rabi, det = 0.8, 0.4
    s = LOWER
    h = det * s.conj().T @ s - (rabi * s.conj().T + rabi * s)
    eye = np.eye(2)

    def dissipator(op, rate):
        prod = op.conj().T @ op
        return rate * (np.kron(op.conj(), op) - 0.5 * np.kron(eye, prod) - 0.5 * np.kron(prod.T, eye))

    sup = (-1j * (np.kron(eye, h) - np.kron(h.T, eye)) + dissipator(s, n_th + 1)
           + dissipator(s.conj().T, n_th))
    vec = sla.null_space(sup)[:, 0]
    rho = vec.reshape(2, 2, order="F")
    rho = rho / np.trace(rho)
    ref = single_atom_steady_state(rabi, det, n_th)
    assert rho[1, 1].real == pytest.approx(ref["rho_ee"], abs=1e-12)
    assert rho[1, 0] == pytest.approx(ref["sigma"], abs=1e-12)


def test_evolve_matches_matrix_exponential(dimer_system):
    c = coupling_matrices(dimer_system, 0.5)
    liouv = build_liouvillian(dimer_system, c)
    rho0 = ground_state(4)
    t = 3.0
    out = evolve(rho0, liouv, t)
    expected = sla.expm(oracle_superoperator(dimer_system, c) * t) @ rho0.data.ravel(order="F")
    np.testing.assert_allclose(out.data.ravel(order="F"), expected, atol=1e-9)


def test_evolve_single_atom_rabi_oscillation():
    # weakly damped atom: the early excited population follows sin^2(Omega t)
    system = single_atom()
    liouv = build_liouvillian(system, coupling_matrices(system, 5.0))
    _, (times, states) = evolve(ground_state(1), liouv, 0.05, n_checkpoints=4,
                                return_trajectory=True)
    for t, st_ in zip(times, states):
        assert st_.data[1, 1].real == pytest.approx(np.sin(5 * t) ** 2, abs=0.05 * t + 1e-12)


@settings(max_examples=10)
@given(seed=st.integers(0, 2 ** 32 - 1), rabi=st.floats(0, 2), t=st.floats(0.1, 5))
def test_evolve_invariants(seed, rabi, t):
    rng = np.random.default_rng(seed)
    system = from_positions(rng.uniform(-0.3, 0.3, size=(2, 3)), rng.uniform(-1, 1, 2))
    liouv = build_liouvillian(system, coupling_matrices(system, rabi))
    out = evolve(DensityMatrix(random_density(rng, 2)), liouv, t, n_checkpoints=3)
    assert out.check(herm_tol=1e-8, trace_tol=1e-8) == {}


def test_evolve_rejects_bad_input(dimer_system):
    liouv = build_liouvillian(dimer_system, coupling_matrices(dimer_system, 0.5))
    with pytest.raises(ValueError):
        evolve(ground_state(4), liouv, 0.0)
    bad = ground_state(4).data * 2
    with pytest.raises(ValueError):
        evolve(DensityMatrix(bad), liouv, 1.0)


def test_steady_backends_agree(dimer_system):
    liouv = build_liouvillian(dimer_system, coupling_matrices(dimer_system, 0.5))
    direct = steady_state(liouv, "direct")
    integrated = steady_state(liouv, "integrate")
    np.testing.assert_allclose(direct.data, integrated.data, atol=1e-7)
    assert direct.check() == {}
    null = sla.null_space(oracle_superoperator(dimer_system,
                                               coupling_matrices(dimer_system, 0.5)))
    assert null.shape[1] == 1
    rho = null[:, 0].reshape(16, 16, order="F")
    np.testing.assert_allclose(direct.data, rho / np.trace(rho), atol=1e-10)


def test_integrate_path_for_seven_atoms():
    pos = np.column_stack([np.arange(7) * 0.35, np.zeros(7), np.zeros(7)])
    system = from_positions(pos, np.linspace(-0.5, 0.5, 7))
    liouv = build_liouvillian(system, coupling_matrices(system, 0.2))
    rho = steady_state(liouv, rtol=1e-8)
    assert rho.check() == {}
    assert np.linalg.norm(liouv.apply(rho.data)) <= 1e-8 * liouv.norm()
    with pytest.raises(CapacityError):
        liouv.matrix()


def test_capacity_limit():
    system = build_system(SystemConfig(2, 0.3, 0.0, 0.4))  # N = 8 is fine
    assert system.n_total == 8
    pos = np.column_stack([np.arange(11) * 0.3, np.zeros(11), np.zeros(11)])
    with pytest.raises(CapacityError):
        build_liouvillian(from_positions(pos), coupling_matrices(from_positions(pos)))


def test_degenerate_null_space():
    system = from_positions([[0, 0, 0], [0.5, 0, 0]])
    c = CouplingMatrices(omega=np.zeros((2, 2)), gamma=np.ones((2, 2)),
                         drive=np.zeros(2, dtype=complex))
    with pytest.raises(ConvergenceError) as err:
        steady_state(build_liouvillian(system, c), "direct")
    # |g>, the dark singlet |S> and the coherences |g><S|, |S><g|
    assert err.value.info["null_dimension"] == 4


def test_unknown_method(dimer_system):
    liouv = build_liouvillian(dimer_system, coupling_matrices(dimer_system, 0.5))
    with pytest.raises(ValueError):
        steady_state(liouv, "magic")


def test_integration_timeout(dimer_system):
    liouv = build_liouvillian(dimer_system, coupling_matrices(dimer_system, 0.5))
    with pytest.raises(ConvergenceError):
        steady_state(liouv, "integrate", t_max=0.5)


def test_low_power_matches_linear_response(dimer_system):
    rabi = 1e-3
    for direction in ("forward", "backward"):
        c = coupling_matrices(dimer_system, rabi, direction)
        sigma, _ = expectation_sigma(steady_state(build_liouvillian(dimer_system, c)))
        lin = linear_response(dimer_system, c)
        np.testing.assert_allclose(sigma, lin, atol=1e-5 * rabi)


def test_high_power_saturation(dimer_system):
    rho = solve_steady(dimer_system, 40.0, "forward")
    _, sigma_z = expectation_sigma(rho)
    np.testing.assert_allclose(sigma_z, 0.0, atol=0.02)


def test_correlations(dimer_system):
    rho = solve_steady(dimer_system, 0.5, "forward")
    corr = correlations(rho)
    _, sigma_z = expectation_sigma(rho)
    np.testing.assert_allclose(np.diag(corr).real, (sigma_z + 1) / 2, atol=1e-12)
    np.testing.assert_allclose(corr, corr.conj().T, atol=1e-12)
    n = 4
    s = [dense_lowering(j, n) for j in range(n)]
    assert corr[0, 2] == pytest.approx(np.trace(s[0].conj().T @ s[2] @ rho.data), abs=1e-12)


def test_dark_state_population(dimer_system):
    c = coupling_matrices(dimer_system)
    dark = classify_dark_bright(eigenmodes(effective_hamiltonian(dimer_system, c)))["dark"]
    rho = solve_steady(dimer_system, 0.5, "forward")
    cd = dark_state_population(rho, dark)
    assert 0 <= cd <= 1
    assert cd == pytest.approx(dark_state_population(rho, dark.vector), abs=1e-15)
    with pytest.raises(ValueError):
        dark_state_population(rho, 2 * dark.vector)
    assert dark_state_population(ground_state(4), dark) == 0.0


def test_entropy():
    assert von_neumann_entropy(ground_state(2)) == pytest.approx(0.0, abs=1e-14)
    assert von_neumann_entropy(DensityMatrix(np.eye(4) / 4)) == pytest.approx(np.log(4))


def test_eigenbasis_round_trip(dimer_system):
    c = coupling_matrices(dimer_system)
    h = effective_hamiltonian(dimer_system, c, FULL)
    rho = solve_steady(dimer_system, 0.5, "forward")
    eig = to_eigenbasis(rho, h)
    v = np.column_stack([m.vector for m in eig.modes])
    np.testing.assert_allclose(v @ eig.data @ v.conj().T, rho.data, atol=1e-10)
    assert eig.basis == "eigen"
    assert np.trace(eig.data).real > 0


def test_eigenbasis_ill_conditioned():
    h = np.array([[0.0, 1.0], [1e-22, 0.0]]) - 0.5j * np.eye(2)
    with pytest.raises(ConvergenceError) as err:
        to_eigenbasis(ground_state(1), h)
    assert err.value.info["condition"] > 1e8

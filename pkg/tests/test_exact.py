import numpy as np
import pytest
from conftest import full_space_ops, small_modes, truncated_embedding
from scipy.linalg import expm

from corrunfold import exact
from corrunfold.errors import ConfigError
from corrunfold.opalg import (
    TruncatedBasis,
    as_dense,
    ptrace_bath,
    ptrace_sys,
    trace_distance,
)


def test_product_state():
    modes = small_modes(3)
    psi = exact.product_state(modes)
    assert np.allclose(psi.amplitudes[:2], [2**-0.5, 2**-0.5])
    assert psi.norm == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        exact.product_state(modes, (0.0, 0.0))


def test_single_mode_rabi():
    # one resonant mode: |1,vac> <-> |0,e_1> at frequency g
    modes = small_modes(1, d_omega=1.0)
    g = modes.gs[0]
    for psi in exact.evolve_exact(modes, exact.product_state(modes), 0.05, 3.0):
        assert exact.excitation_number(psi) == pytest.approx(0.5)
        assert abs(psi.amplitudes[1]) ** 2 == pytest.approx(0.5 * np.cos(g * psi.time) ** 2, abs=1e-13)


@pytest.mark.parametrize("m", [2, 3])
def test_brute_force_full_space(m):
    modes = small_modes(m, d_omega=0.5, eta=0.8)
    h0, hi = full_space_ops(modes)
    h = h0 + hi
    idx = truncated_embedding(m)
    full0 = np.zeros(2 ** (m + 1), dtype=complex)
    full0[idx[0]] = full0[idx[m + 1]] = 2**-0.5
    basis = TruncatedBasis(m)
    for psi in exact.evolve_exact(modes, exact.product_state(modes), 0.25, 2.0):
        full = expm(-1j * h * psi.time) @ full0
        assert np.linalg.norm(full[idx]) == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(exact.embed(psi, basis) - full[idx])) < 1e-10


def test_schemes_agree():
    modes = small_modes(16, d_omega=0.25, eta=1.0)
    psi0 = exact.product_state(modes)
    a = exact.evolve_exact(modes, psi0, 0.001, 2.0, "eigenprop")
    b = exact.evolve_exact(modes, psi0, 0.001, 2.0, "rk4")
    assert max(np.max(np.abs(x.amplitudes - y.amplitudes)) for x, y in zip(a, b)) < 1e-11
    with pytest.raises(ConfigError):
        exact.evolve_exact(modes, psi0, 0.1, 1.0, "leapfrog")
    with pytest.raises(ConfigError):
        exact.evolve_exact(modes, psi0, 0.0, 1.0)


def test_unnormalised_initial_state_rejected():
    modes = small_modes(2)
    with pytest.raises(ConfigError):
        exact.evolve_exact(modes, exact.PureState(np.array([1.0, 1.0, 0, 0])), 0.1, 1.0)


def test_snapshot_invariants():
    modes = small_modes(4, d_omega=0.4, eta=1.0)
    basis = TruncatedBasis(4)
    for psi in exact.evolve_exact(modes, exact.product_state(modes), 0.3, 3.0):
        snap = exact.reduced_and_chi(psi, basis, True, modes)
        assert np.trace(snap.rho_s) == pytest.approx(1.0)
        assert np.allclose(snap.rho_s, ptrace_bath(snap.rho_sb, basis))
        assert np.allclose(snap.rho_b, as_dense(ptrace_sys(snap.rho_sb, basis)))
        assert np.allclose(snap.chi, snap.chi.conj().T, atol=1e-14)
        assert abs(np.trace(snap.chi)) < 1e-14
        assert np.max(np.abs(ptrace_bath(snap.chi, basis))) < 1e-14
        assert np.max(np.abs(as_dense(ptrace_sys(snap.chi, basis)))) < 1e-14
        vac = np.zeros((basis.n_bath, basis.n_bath))
        vac[0, 0] = 1.0
        assert exact.bath_distance_from_vacuum(psi) == pytest.approx(trace_distance(snap.rho_b, vac), abs=1e-12)
    with pytest.raises(ConfigError):
        exact.reduced_and_chi(psi, basis, True, None)


def test_interaction_picture_keeps_populations():
    modes = small_modes(3)
    basis = TruncatedBasis(3)
    psi = exact.evolve_exact(modes, exact.product_state(modes), 0.5, 1.5)[-1]
    a = exact.reduced_and_chi(psi, basis, True, modes)
    b = exact.reduced_and_chi(psi, basis, False)
    assert np.allclose(np.diag(a.rho_s), np.diag(b.rho_s))
    assert np.linalg.norm(a.chi) == pytest.approx(np.linalg.norm(b.chi))


def test_entangled_state_correlation_norm():
    modes = small_modes(2)
    basis = TruncatedBasis(2)
    psi = exact.PureState(np.array([0, 1, 1, 0], dtype=complex) / np.sqrt(2))
    snap = exact.reduced_and_chi(psi, basis, False)
    # explicit 6x6: |1,vac> is flat index 3, |0,e_1> is flat index 1
    vec = np.zeros(6)
    vec[[1, 3]] = 2**-0.5
    rho_sb = np.outer(vec, vec)
    rho_s, rho_b = np.diag([0.5, 0.5]), np.diag([0.5, 0.5, 0.0])
    chi = rho_sb - np.kron(rho_s, rho_b)
    assert np.max(np.abs(snap.chi - chi)) < 1e-15
    assert np.linalg.norm(snap.chi) == pytest.approx(np.sqrt(0.75), abs=1e-12)
    assert np.linalg.norm(exact.reduced_and_chi(exact.product_state(modes), basis, True, modes).chi) < 1e-15


def test_pure_and_excitation_conserving():
    modes = small_modes(8, d_omega=0.3, eta=1.0)
    basis = TruncatedBasis(8)
    n0 = exact.excitation_number(exact.product_state(modes))
    for psi in exact.evolve_exact(modes, exact.product_state(modes), 0.2, 4.0):
        rho = exact.reduced_and_chi(psi, basis, True, modes).rho_sb
        assert np.trace(rho @ rho).real == pytest.approx(1.0, abs=1e-12)
        assert exact.excitation_number(psi) == pytest.approx(n0, abs=1e-12)


def test_no_coupling_freezes_populations():
    modes = small_modes(4).scaled(0.0)
    basis = TruncatedBasis(4)
    for psi in exact.evolve_exact(modes, exact.product_state(modes), 0.5, 5.0):
        snap = exact.reduced_and_chi(psi, basis, True, modes)
        assert np.allclose(snap.rho_s, 0.5, atol=1e-14)


def test_rk4_matches_eigenprop_on_long_window():
    modes = small_modes(16, d_omega=0.25, eta=1.0)
    psi0 = exact.product_state(modes)
    a = exact.evolve_exact(modes, psi0, 0.002, 5.0, "eigenprop")
    b = exact.evolve_exact(modes, psi0, 0.002, 5.0, "rk4")
    assert max(np.max(np.abs(x.amplitudes - y.amplitudes)) for x, y in zip(a, b)) < 1e-10

import numpy as np
import pytest
import scipy.sparse as sp
from conftest import random_density
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from corrunfold import opalg
from corrunfold.errors import ConfigError, ContractViolation
from corrunfold.opalg import Outer, TruncatedBasis


def naive_matmul(a, b):
    n = a.shape[0]
    out = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            out[i, j] = sum(a[i, k] * b[k, j] for k in range(n))
    return out


def rand_op(rng, n):
    return rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))


def rand_herm(rng, n):
    a = rand_op(rng, n)
    return a + a.conj().T


def test_basis_layout():
    basis = TruncatedBasis(4)
    assert (basis.n_bath, basis.dim) == (5, 10)
    assert basis.index(1, 0) == 5
    with pytest.raises(ConfigError):
        TruncatedBasis(0)


def test_commutator_against_index_sums(rng):
    a, b = rand_op(rng, 6), rand_op(rng, 6)
    expected = naive_matmul(a, b) - naive_matmul(b, a)
    assert np.allclose(opalg.commutator(a, b), expected, atol=1e-12)
    mixed = opalg.commutator(sp.csr_array(a), b)
    assert np.allclose(opalg.as_dense(mixed), expected, atol=1e-12)
    both = opalg.commutator(sp.csr_array(a), sp.csr_array(b))
    assert sp.issparse(both)
    assert np.allclose(both.toarray(), expected, atol=1e-12)


def test_anticommutator_and_dagger(rng):
    a, b = rand_op(rng, 4), rand_op(rng, 4)
    assert np.allclose(opalg.anticommutator(a, b), a @ b + b @ a)
    assert np.allclose(opalg.dagger(a), a.conj().T)


def test_tensor_and_partial_traces_by_index(rng):
    basis = TruncatedBasis(2)
    n = basis.n_bath
    s, b = rand_op(rng, 2), rand_op(rng, n)
    t = opalg.as_dense(opalg.tensor_sb(s, b, basis))
    for s1 in range(2):
        for b1 in range(n):
            for s2 in range(2):
                for b2 in range(n):
                    assert t[basis.index(s1, b1), basis.index(s2, b2)] == pytest.approx(s[s1, s2] * b[b1, b2])
    x = rand_op(rng, basis.dim)
    tr_b = np.array([[sum(x[basis.index(i, k), basis.index(j, k)] for k in range(n)) for j in range(2)] for i in range(2)])
    tr_s = np.array([[sum(x[basis.index(k, i), basis.index(k, j)] for k in range(2)) for j in range(n)] for i in range(n)])
    assert np.allclose(opalg.ptrace_bath(x, basis), tr_b)
    assert np.allclose(opalg.as_dense(opalg.ptrace_sys(x, basis)), tr_s)
    assert np.allclose(opalg.ptrace_bath(sp.csr_array(x), basis), tr_b)
    assert np.allclose(opalg.as_dense(opalg.ptrace_sys(sp.csr_array(x), basis)), tr_s)


def test_partial_trace_of_product(rng):
    basis = TruncatedBasis(3)
    rs, rb = random_density(rng), random_density(rng, basis.n_bath)
    prod = opalg.tensor_sb(rs, rb, basis)
    assert np.allclose(opalg.ptrace_bath(prod, basis), rs)
    assert np.allclose(opalg.as_dense(opalg.ptrace_sys(prod, basis)), rb)


def test_shape_errors():
    basis = TruncatedBasis(2)
    with pytest.raises(ConfigError):
        opalg.tensor_sb(np.eye(3), np.eye(3), basis)
    with pytest.raises(ConfigError):
        opalg.commutator(np.eye(2), np.eye(3))
    with pytest.raises(ConfigError):
        opalg.ptrace_bath(np.eye(4), basis)


def test_jacobi_2x2_analytic(rng):
    for _ in range(200):
        a = rand_herm(rng, 2)
        mean = 0.5 * (a[0, 0] + a[1, 1]).real
        half = np.sqrt((0.5 * (a[0, 0] - a[1, 1]).real) ** 2 + abs(a[0, 1]) ** 2)
        w, v = opalg.jacobi_eigh(a)
        assert np.allclose(w, [mean - half, mean + half], atol=1e-12)
        assert np.allclose(v @ np.diag(w) @ v.conj().T, a, atol=1e-12)


def givens_eigenvalues(a, sweeps=60):
    """Independent oracle: textbook real-symmetric Jacobi on the 2n real embedding."""
    n = a.shape[0]
    m = np.block([[a.real, -a.imag], [a.imag, a.real]])
    size = 2 * n
    for _ in range(sweeps):
        for p in range(size - 1):
            for q in range(p + 1, size):
                if abs(m[p, q]) < 1e-300:
                    continue
                theta = 0.5 * np.arctan2(2 * m[p, q], m[q, q] - m[p, p])
                c, s = np.cos(theta), np.sin(theta)
                g = np.eye(size)
                g[p, p] = g[q, q] = c
                g[p, q], g[q, p] = s, -s
                m = g.T @ m @ g
    # every eigenvalue appears twice in the embedding
    return np.sort(np.diag(m))[::2]


@pytest.mark.parametrize("n", [3, 5, 8])
def test_jacobi_against_givens_oracle(rng, n):
    a = rand_herm(rng, n)
    w, v = opalg.jacobi_eigh(a)
    assert np.allclose(w, givens_eigenvalues(a), atol=1e-9)
    assert np.allclose(v.conj().T @ v, np.eye(n), atol=1e-10)
    assert np.allclose(v @ np.diag(w) @ v.conj().T, a, atol=1e-10)
    assert np.all(np.diff(w) >= 0)


def test_jacobi_degenerate_and_diagonal():
    w, _v = opalg.jacobi_eigh(np.diag([3.0, 1.0, 1.0, 2.0]))
    assert np.allclose(w, [1, 1, 2, 3])
    w, _ = opalg.jacobi_eigh(np.ones((4, 4)))
    assert np.allclose(w, [0, 0, 0, 4], atol=1e-12)


def test_jacobi_rejects_non_hermitian():
    with pytest.raises(ContractViolation):
        opalg.jacobi_eigh(np.array([[0, 1], [0, 0]], dtype=complex))


def test_distances(rng):
    a, b = rand_herm(rng, 6), rand_herm(rng, 6)
    d = np.sqrt(np.sum(np.abs(a - b) ** 2))
    assert opalg.hs_distance(a, b) == pytest.approx(d)
    assert opalg.hs_distance(sp.csr_array(a), b) == pytest.approx(d)
    assert opalg.hs_distance(a, sp.csr_array(b)) == pytest.approx(d)
    assert opalg.hs_norm(sp.csr_array(a)) == pytest.approx(np.sqrt(np.sum(np.abs(a) ** 2)))
    # pure orthogonal states are at trace distance one
    assert opalg.trace_distance(np.diag([1.0, 0]), np.diag([0, 1.0])) == pytest.approx(1.0)
    with pytest.raises(ContractViolation):
        opalg.trace_distance(np.array([[0, 1], [0, 0]]), np.zeros((2, 2)))


herm2 = hnp.arrays(np.float64, (4,), elements=st.floats(-5, 5)).map(
    lambda x: np.array([[x[0], x[2] + 1j * x[3]], [x[2] - 1j * x[3], x[1]]])
)


@settings(max_examples=60, deadline=None)
@given(herm2, herm2)
def test_eigen_and_distance_properties(a, b):
    w = opalg.hermitian_eigenvalues(a)
    assert w.sum() == pytest.approx(np.trace(a).real, abs=1e-10)
    assert np.prod(w) == pytest.approx(np.linalg.det(a).real, abs=1e-8)
    assert opalg.hs_distance(a, b) == pytest.approx(opalg.hs_distance(b, a))
    assert opalg.hs_distance(a, b) <= opalg.hs_norm(a) + opalg.hs_norm(b) + 1e-12
    assert opalg.trace_distance(a, b) >= 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trace_distance_bounded_for_states(seed):
    rng = np.random.default_rng(seed)
    d = opalg.trace_distance(random_density(rng), random_density(rng))
    assert -1e-12 <= d <= 1 + 1e-12


def test_averages_and_commutator_traces(rng):
    basis = TruncatedBasis(3)
    h = sp.csr_array(rand_herm(rng, basis.dim) * (rng.random((basis.dim, basis.dim)) < 0.3))
    x = rand_op(rng, basis.dim)
    rs, rb = random_density(rng), random_density(rng, basis.n_bath)
    eye_s = np.eye(2)
    eye_b = np.eye(basis.n_bath)
    hd = h.toarray()
    assert np.allclose(opalg.bath_average(h, rb, basis), opalg.ptrace_bath(hd @ np.kron(eye_s, rb), basis))
    assert np.allclose(
        opalg.as_dense(opalg.system_average(h, rs, basis)),
        opalg.as_dense(opalg.ptrace_sys(hd @ np.kron(rs, eye_b), basis)),
    )
    comm = hd @ x - x @ hd
    assert np.allclose(opalg.ptrace_bath_commutator(h, x, basis), opalg.ptrace_bath(comm, basis))
    assert np.allclose(
        opalg.ptrace_sys_commutator(h, x, basis), opalg.as_dense(opalg.ptrace_sys(comm, basis))
    )


def test_factored_terms_match_kron(rng):
    basis = TruncatedBasis(4)
    n = basis.n_bath
    terms = [
        (rand_op(rng, 2), Outer(rand_op(rng, n)[0], rand_op(rng, n)[1])),
        (rand_op(rng, 2), rand_op(rng, n)),
        (rand_op(rng, 2), Outer(rand_op(rng, n)[2], rand_op(rng, n)[3])),
    ]
    dense = sum(np.kron(c, m.dense() if isinstance(m, Outer) else m) for c, m in terms)
    assert np.allclose(opalg.kron_sum(terms, basis), dense)
    blocks = opalg.flat_to_blocks(dense, basis)
    assert np.allclose(opalg.blocks_to_flat(blocks), dense)
    assert np.allclose(opalg.kron_sum(opalg.block_terms(blocks), basis), dense)
    assert np.allclose(opalg.terms_ptrace_bath(terms), opalg.ptrace_bath(dense, basis))
    o = terms[0][1]
    w = rand_op(rng, n)[0]
    assert np.allclose(o.matvec(w), o.dense() @ w)
    assert np.allclose(o.vecmat(w), w @ o.dense())
    assert o.trace() == pytest.approx(np.trace(o.dense()))
    with pytest.raises(ConfigError):
        opalg.kron_blocks([])


SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]])
SZ = np.diag([1.0, -1.0]).astype(complex)


def test_pauli_commutator_and_self_commutator(rng):
    assert np.allclose(opalg.commutator(SX, SY), 2j * SZ)
    a = rand_op(rng, 5)
    assert np.all(opalg.commutator(a, a) == 0)


def test_commutator_with_hermitian_inputs_is_anti_hermitian(rng):
    for _ in range(20):
        h, rho = rand_herm(rng, 6), random_density(rng, 6)
        x = -1j * opalg.commutator(h, rho)
        assert np.max(np.abs(x - x.conj().T)) < 1e-12


def test_tensor_examples(rng):
    basis = TruncatedBasis(2)
    eye = opalg.as_dense(opalg.tensor_sb(np.eye(2), np.eye(3), basis))
    assert np.array_equal(eye, np.eye(6))
    a, b = rand_op(rng, 2), rand_op(rng, 3)
    assert np.trace(opalg.as_dense(opalg.tensor_sb(a, b, basis))) == pytest.approx(np.trace(a) * np.trace(b), abs=1e-12)
    sys_op = np.array([[0, 1], [0, 0]])
    bath_op = np.zeros((3, 3))
    bath_op[0, 1] = 1.0
    t = opalg.as_dense(opalg.tensor_sb(sys_op, bath_op, basis))
    assert list(zip(*np.nonzero(t))) == [(0, 4)]
    assert t[0, 4] == 1


def test_partial_traces_preserve_trace(rng):
    basis = TruncatedBasis(4)
    a = rand_op(rng, basis.dim)
    assert np.trace(opalg.ptrace_bath(a, basis)) == pytest.approx(np.trace(a), abs=1e-12)
    assert np.trace(opalg.as_dense(opalg.ptrace_sys(a, basis))) == pytest.approx(np.trace(a), abs=1e-12)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_partial_trace_identity(rng, m):
    from conftest import small_modes

    from corrunfold import model

    basis = TruncatedBasis(m)
    h = opalg.as_dense(model.build_interaction(small_modes(m), basis).h_i)
    rs, rb = random_density(rng), random_density(rng, basis.n_bath)
    lhs = opalg.ptrace_bath(opalg.commutator(h, opalg.as_dense(opalg.tensor_sb(rs, rb, basis))), basis)
    h_s = opalg.ptrace_bath(h @ np.kron(np.eye(2), rb), basis)
    assert np.max(np.abs(lhs - opalg.commutator(h_s, rs))) < 1e-12


def test_jacobi_examples():
    w, _ = opalg.jacobi_eigh(np.diag([3.0, -1.0, 2.0]))
    assert np.array_equal(w, [-1.0, 2.0, 3.0])
    u = np.eye(3, dtype=complex)
    for p, q, theta, phase in ((0, 1, 0.3, 0.7), (1, 2, 1.1, -0.4), (0, 2, -0.8, 2.0)):
        g = np.eye(3, dtype=complex)
        g[p, p] = g[q, q] = np.cos(theta)
        g[p, q] = -np.sin(theta) * np.exp(1j * phase)
        g[q, p] = np.sin(theta) * np.exp(-1j * phase)
        u = g @ u
    w, _ = opalg.jacobi_eigh(u @ np.diag([1.0, 2.0, 3.0]) @ u.conj().T)
    assert np.allclose(w, [1, 2, 3], atol=1e-10)


def test_jacobi_sum_rules(rng):
    for _ in range(200):
        n = int(rng.integers(1, 65))
        a = rand_herm(rng, n)
        w = opalg.hermitian_eigenvalues(a)
        assert w.sum() == pytest.approx(np.trace(a).real, abs=1e-9 * n)
        assert np.sum(w**2) == pytest.approx(np.sum(np.abs(a) ** 2), rel=1e-10)


def test_trace_distance_examples(rng):
    rho = random_density(rng)
    assert opalg.trace_distance(rho, rho) == 0.0
    assert opalg.trace_distance(np.diag([1.0, 0.0]), np.eye(2) / 2) == pytest.approx(0.5)

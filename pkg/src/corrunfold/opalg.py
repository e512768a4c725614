"""Dense/sparse complex operator algebra on the truncated qubit-bath basis.

Operators are plain ``numpy`` arrays or ``scipy.sparse`` arrays of shape
``(dim, dim)``.  Structured operators (interaction Hamiltonians, kernels,
approximate correlations built on the bath vacuum) are kept sparse; states
and correlations with dense support are ndarrays.  Every function here
accepts either representation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ContractViolation, NumericalError

HERMITIAN_ATOL = 1e-12
EIG_HERMITIAN_ATOL = 1e-10


@dataclass(frozen=True)
class TruncatedBasis:
    """Product basis {qubit s} x {bath vacuum, one excitation on mode b}.

    The state (s, b) with s in {0, 1} and b in {0 (vacuum), 1..M} sits at
    flat index ``s * (M + 1) + b``.
    """

    n_modes: int

    def __post_init__(self):
        if self.n_modes < 1:
            raise ConfigError(f"need at least one bath mode, got {self.n_modes}")

    @property
    def n_bath(self) -> int:
        return self.n_modes + 1

    @property
    def dim(self) -> int:
        return 2 * (self.n_modes + 1)

    def index(self, s: int, b: int) -> int:
        if s not in (0, 1) or not 0 <= b <= self.n_modes:
            raise ConfigError(f"basis label ({s}, {b}) out of range")
        return s * self.n_bath + b

    def label(self, i: int) -> tuple[int, int]:
        if not 0 <= i < self.dim:
            raise ConfigError(f"flat index {i} out of range")
        return divmod(i, self.n_bath)


def is_sparse(a) -> bool:
    return sp.issparse(a)


def as_dense(a) -> np.ndarray:
    if sp.issparse(a):
        return a.toarray()
    return np.asarray(a)


def _dim(a) -> int:
    shape = a.shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {shape}")
    return shape[0]


def _same_dim(a, b) -> int:
    da, db = _dim(a), _dim(b)
    if da != db:
        raise ConfigError(f"dimension mismatch: {da} vs {db}")
    return da


def commutator(a, b):
    """Return ``a @ b - b @ a``."""
    _same_dim(a, b)
    return a @ b - b @ a


def anticommutator(a, b):
    _same_dim(a, b)
    return a @ b + b @ a


def dagger(a):
    return a.conj().T


def tensor_sb(sys_op, bath_op, basis: TruncatedBasis):
    """Kronecker product ``sys_op (2x2) (x) bath_op ((M+1)x(M+1))`` in the basis order."""
    if _dim(sys_op) != 2 or _dim(bath_op) != basis.n_bath:
        raise ConfigError(
            f"tensor_sb expects 2x2 and {basis.n_bath}x{basis.n_bath} factors, "
            f"got {sys_op.shape} and {bath_op.shape}"
        )
    if sp.issparse(sys_op) or sp.issparse(bath_op):
        return sp.kron(sp.csr_array(sys_op), sp.csr_array(bath_op), format="csr")
    return np.kron(sys_op, bath_op)


def _check_full(a, basis: TruncatedBasis):
    if _dim(a) != basis.dim:
        raise ConfigError(f"operator has dim {a.shape[0]}, basis has D={basis.dim}")


def ptrace_bath(a, basis: TruncatedBasis) -> np.ndarray:
    """Trace out the bath: ``out[s, s'] = sum_b a[(s,b), (s',b)]``."""
    _check_full(a, basis)
    n = basis.n_bath
    if sp.issparse(a):
        coo = sp.coo_array(a)
        s, b = np.divmod(coo.row, n)
        t, c = np.divmod(coo.col, n)
        keep = b == c
        out = np.zeros((2, 2), dtype=complex)
        np.add.at(out, (s[keep], t[keep]), coo.data[keep])
        return out
    return np.trace(np.asarray(a).reshape(2, n, 2, n), axis1=1, axis2=3)


def ptrace_sys(a, basis: TruncatedBasis):
    """Trace out the qubit: ``out[b, b'] = sum_s a[(s,b), (s,b')]``.

    Sparse input gives a sparse result.
    """
    _check_full(a, basis)
    n = basis.n_bath
    if sp.issparse(a):
        a = sp.csr_array(a)
        return a[:n, :n] + a[n:, n:]
    a = np.asarray(a)
    return a[:n, :n] + a[n:, n:]


def is_hermitian(a, atol: float = HERMITIAN_ATOL) -> bool:
    diff = a - dagger(a)
    if sp.issparse(diff):
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) <= atol
    return float(np.max(np.abs(diff), initial=0.0)) <= atol


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings covering every (p, q) once per sweep, disjoint within a round."""
    m = n + (n % 2)
    order = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array(order[: m // 2])
        q = np.array(order[m // 2:][::-1])
        keep = (p < n) & (q < n)
        p, q = p[keep], q[keep]
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        order = [order[0], order[-1]] + order[1:-1]
    return rounds


def _rotate_rows(m, p, q, gpp, gpq, gqp, gqq):
    rp, rq = m[p, :], m[q, :]
    m[p, :] = np.conj(gpp)[:, None] * rp + np.conj(gqp)[:, None] * rq
    m[q, :] = np.conj(gpq)[:, None] * rp + np.conj(gqq)[:, None] * rq


def _jacobi_2x2(a: np.ndarray):
    """The single Jacobi rotation that diagonalises a Hermitian 2x2."""
    app, aqq, apq = float(a[0, 0].real), float(a[1, 1].real), complex(a[0, 1])
    r = abs(apq)
    if r == 0.0:
        lo, hi, v = app, aqq, np.eye(2, dtype=complex)
    else:
        phase = apq.conjugate() / r
        theta = (aqq - app) / (2.0 * r)
        t = (1.0 if theta >= 0.0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
        c = 1.0 / np.sqrt(t * t + 1.0)
        s = t * c
        lo, hi = app - t * r, aqq + t * r
        v = np.array([[c, s], [-s * phase, c * phase]], dtype=complex)
    if hi < lo:
        return np.array([hi, lo]), v[:, ::-1].copy()
    return np.array([lo, hi]), v


def jacobi_eigh(a, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Rotations are applied in round-robin order, so each round acts on
    disjoint index pairs and is vectorised.  Returns ascending eigenvalues
    and the matching unitary ``V`` (columns are eigenvectors).

    ``tol`` bounds the largest off-diagonal magnitude at convergence; it is
    floored at a few ulps of ``||a||_F`` so that huge inputs can converge.
    """
    a = as_dense(a).astype(complex)
    n = _dim(a)
    if not is_hermitian(a, EIG_HERMITIAN_ATOL):
        raise ContractViolation("jacobi_eigh requires a Hermitian matrix")
    a = 0.5 * (a + dagger(a))
    vh = np.eye(n, dtype=complex)
    if n == 1:
        return a.real.diagonal().copy(), vh
    if n == 2:
        return _jacobi_2x2(a)

    thresh = max(tol, 4 * np.finfo(float).eps * np.linalg.norm(a))
    rounds = _round_robin(n)
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        if np.max(np.abs(a[offdiag])) < thresh:
            order = np.argsort(a.diagonal().real, kind="stable")
            return a.diagonal().real[order].copy(), vh.conj().T[:, order]
        for p, q in rounds:
            apq = a[p, q]
            r = np.abs(apq)
            active = r > 0.0
            if not active.any():
                continue
            p, q, apq, r = p[active], q[active], apq[active], r[active]
            app, aqq = a[p, p].real, a[q, q].real
            phase = apq.conj() / r
            theta = (aqq - app) / (2.0 * r)
            sign = np.where(theta >= 0.0, 1.0, -1.0)
            t = sign / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            gpp, gpq, gqp, gqq = c, s, -s * phase, c * phase

            # a <- G^H (G^H a)^H == G^H a G for Hermitian a; rows are contiguous.
            _rotate_rows(a, p, q, gpp, gpq, gqp, gqq)
            a = np.ascontiguousarray(a.conj().T)
            _rotate_rows(a, p, q, gpp, gpq, gqp, gqq)
            a[p, q] = 0.0
            a[q, p] = 0.0
            _rotate_rows(vh, p, q, gpp, gpq, gqp, gqq)
    raise NumericalError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def hermitian_eigenvalues(a, tol: float = 1e-12) -> np.ndarray:
    """Ascending real eigenvalues of a Hermitian matrix (Jacobi)."""
    return jacobi_eigh(a, tol)[0]


def hs_norm(a) -> float:
    if sp.issparse(a):
        return float(np.linalg.norm(a.data))
    return float(np.linalg.norm(a))


def hs_distance(a, b) -> float:
    """Frobenius norm of ``a - b``.

    When exactly one side is sparse the dense side is not copied: the
    squared distance is ``||dense||^2`` corrected on the sparse support.
    """
    _same_dim(a, b)
    if sp.issparse(a) and sp.issparse(b):
        return hs_norm(a - b)
    if sp.issparse(b):
        a, b = b, a
    if sp.issparse(a):
        coo = sp.coo_array(a)
        coo.sum_duplicates()
        b = np.asarray(b)
        on_support = b[coo.row, coo.col]
        sq = np.vdot(b, b).real
        sq += np.sum(np.abs(on_support - coo.data) ** 2 - np.abs(on_support) ** 2)
        return float(np.sqrt(max(sq, 0.0)))
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def trace_distance(rho, sigma) -> float:
    """Half the sum of absolute eigenvalues of ``rho - sigma``."""
    _same_dim(rho, sigma)
    diff = as_dense(rho) - as_dense(sigma)
    if not is_hermitian(diff, EIG_HERMITIAN_ATOL):
        raise ContractViolation("trace_distance needs Hermitian inputs")
    return 0.5 * float(np.sum(np.abs(hermitian_eigenvalues(diff))))


def bath_average(h, rho_b, basis: TruncatedBasis) -> np.ndarray:
    """``Tr_B[h (I_S (x) rho_b)]``, a 2x2 system operator."""
    _check_full(h, basis)
    n = basis.n_bath
    rho_b = as_dense(rho_b)
    if sp.issparse(h):
        coo = sp.coo_array(h)
        s, b = np.divmod(coo.row, n)
        t, c = np.divmod(coo.col, n)
        out = np.zeros((2, 2), dtype=complex)
        np.add.at(out, (s, t), coo.data * rho_b[c, b])
        return out
    return ptrace_bath(np.asarray(h) @ np.kron(np.eye(2), rho_b), basis)


def system_average(h, rho_s, basis: TruncatedBasis):
    """``Tr_S[h (rho_s (x) I_B)]``, an (M+1)x(M+1) bath operator (sparse for sparse h)."""
    _check_full(h, basis)
    n = basis.n_bath
    rho_s = as_dense(rho_s)
    if sp.issparse(h):
        coo = sp.coo_array(h)
        s, b = np.divmod(coo.row, n)
        t, c = np.divmod(coo.col, n)
        return sp.csr_array((coo.data * rho_s[t, s], (b, c)), shape=(n, n))
    return ptrace_sys(np.asarray(h) @ np.kron(rho_s, np.eye(n)), basis)


def ptrace_bath_commutator(h, x, basis: TruncatedBasis) -> np.ndarray:
    """``Tr_B[h, x]`` without forming the D x D commutator when ``h`` is sparse."""
    _check_full(h, basis)
    _check_full(x, basis)
    if not sp.issparse(h) or sp.issparse(x):
        return ptrace_bath(commutator(h, x), basis)
    n = basis.n_bath
    x = np.asarray(x)
    coo = sp.coo_array(h)
    s, b = np.divmod(coo.row, n)
    t, c = np.divmod(coo.col, n)
    out = np.zeros((2, 2), dtype=complex)
    for sp_ in (0, 1):
        # (h x)[(s,b),(s',b)] picks x[col, (s',b)];  (x h)[(s',c),(t,c)] picks x[(s',c), row].
        np.add.at(out[:, sp_], s, coo.data * x[coo.col, sp_ * n + b])
        np.add.at(out[sp_, :], t, -coo.data * x[sp_ * n + c, coo.row])
    return out


def ptrace_sys_commutator(h, x, basis: TruncatedBasis) -> np.ndarray:
    """``Tr_S[h, x]`` as a dense (M+1)x(M+1) array."""
    _check_full(h, basis)
    _check_full(x, basis)
    n = basis.n_bath
    if not sp.issparse(h) or sp.issparse(x):
        return as_dense(ptrace_sys(commutator(h, x), basis))
    h = sp.csr_array(h)
    x = np.asarray(x)
    top, bottom = h[:n, :], h[n:, :]
    left, right = h[:, :n], h[:, n:]
    hx = top @ x[:, :n] + bottom @ x[:, n:]
    xh = x[:n, :] @ left + x[n:, :] @ right
    return np.asarray(hx - xh)


# Factored operators: sum_j c_j (x) m_j with 2x2 c_j and bath factors m_j that
# are dense arrays or rank-one ``Outer`` pairs.  Block layout (2, 2, n, n)
# holds block (s, t) = the bath matrix multiplying |s><t|.


@dataclass(frozen=True, eq=False)
class Outer:
    """The rank-one bath matrix ``outer(x, y)``, kept factored."""

    x: np.ndarray
    y: np.ndarray

    @property
    def row0(self) -> np.ndarray:
        return self.x[0] * self.y

    @property
    def col0(self) -> np.ndarray:
        return self.x * self.y[0]

    def matvec(self, w: np.ndarray) -> np.ndarray:
        return self.x * (self.y @ w)

    def vecmat(self, w: np.ndarray) -> np.ndarray:
        return (w @ self.x) * self.y

    def trace(self) -> complex:
        return complex(self.x @ self.y)

    def dense(self) -> np.ndarray:
        return np.outer(self.x, self.y)


def bath_row0(m):
    return m.row0 if isinstance(m, Outer) else m[0, :]


def bath_col0(m):
    return m.col0 if isinstance(m, Outer) else m[:, 0]


def bath_matvec(m, w):
    return m.matvec(w) if isinstance(m, Outer) else m @ w


def bath_vecmat(w, m):
    return m.vecmat(w) if isinstance(m, Outer) else w @ m


def bath_trace(m) -> complex:
    return m.trace() if isinstance(m, Outer) else complex(np.trace(m))


def _bath_size(m) -> int:
    return len(m.x) if isinstance(m, Outer) else m.shape[0]


_UNITS = [np.zeros((2, 2), dtype=complex) for _ in range(4)]
for _i, _u in enumerate(_UNITS):
    _u.flat[_i] = 1.0


def block_terms(blocks: np.ndarray) -> list:
    """View a block-layout operator as four (unit 2x2, block) pairs (no copies)."""
    return [(_UNITS[2 * s + t], blocks[s, t]) for s in range(2) for t in range(2)]


def kron_blocks(terms: list, n_bath: int | None = None) -> np.ndarray:
    """``sum_j c_j (x) m_j`` in block layout."""
    if n_bath is None:
        if not terms:
            raise ConfigError("empty term list needs an explicit bath size")
        n_bath = _bath_size(terms[0][1])
    out = np.zeros((2, 2, n_bath, n_bath), dtype=complex)
    dense = [(c, m) for c, m in terms if not isinstance(m, Outer)]
    factored = [(c, m) for c, m in terms if isinstance(m, Outer)]
    if dense:
        coefs = np.stack([np.asarray(c, dtype=complex) for c, _ in dense])
        out += np.tensordot(coefs, np.stack([as_dense(m) for _, m in dense]), axes=(0, 0))
    if factored:
        coefs = np.stack([np.asarray(c, dtype=complex) for c, _ in factored])
        xs = np.stack([m.x for _, m in factored], axis=1)
        ys = np.stack([m.y for _, m in factored])
        for s in range(2):
            for t in range(2):
                out[s, t] += (xs * coefs[:, s, t]) @ ys
    return out


def blocks_to_flat(blocks: np.ndarray) -> np.ndarray:
    two, _, n, _ = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(two * n, two * n)


def flat_to_blocks(op, basis: TruncatedBasis) -> np.ndarray:
    n = basis.n_bath
    return as_dense(op).reshape(2, n, 2, n).transpose(0, 2, 1, 3)


def kron_sum(terms: list, basis: TruncatedBasis) -> np.ndarray:
    """Dense flat ``sum_j c_j (x) m_j``."""
    return blocks_to_flat(kron_blocks(terms, basis.n_bath))


def terms_ptrace_bath(terms: list) -> np.ndarray:
    """``Tr_B`` of a factored operator."""
    out = np.zeros((2, 2), dtype=complex)
    for c, m in terms:
        out += np.asarray(c) * bath_trace(m)
    return out

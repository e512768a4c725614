import warnings
from functools import reduce

import numpy as np
import pytest

from corrunfold import model
from corrunfold.opalg import TruncatedBasis

PLUS = np.full((2, 2), 0.5, dtype=complex)


def small_modes(n_modes=3, d_omega=0.4, eta=0.3, omega_c=3.0, omega0=1.0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return model.discretize(model.SpectralDensity.ohmic(eta, omega_c), n_modes, d_omega, omega0)


def random_density(rng, dim=2):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def modes3():
    return small_modes(3)


@pytest.fixture
def basis3():
    return TruncatedBasis(3)


def full_space_ops(modes):
    """Qubit (x) M two-level systems, each with 0 = ground; returns H0 and H_I."""
    m = modes.n_modes
    lower = np.array([[0, 1], [0, 0]], dtype=complex)
    num = np.diag([0.0, 1.0])

    def site(op, k):
        return reduce(np.kron, [op if j == k else np.eye(2) for j in range(m + 1)])

    h0 = modes.omega0 * site(num, 0) + sum(modes.omegas[k] * site(num, k + 1) for k in range(m))
    hi = sum(
        modes.gs[k] * (site(lower, 0) @ site(lower.T, k + 1) + site(lower.T, 0) @ site(lower, k + 1))
        for k in range(m)
    )
    return h0, hi


def truncated_embedding(m):
    """Full-space index of each truncated basis state ``s*(M+1)+b``."""
    idx = []
    for s in range(2):
        for b in range(m + 1):
            bits = [s] + [1 if b == k + 1 else 0 for k in range(m)]
            idx.append(int("".join(map(str, bits)), 2))
    return np.array(idx)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

"""Exact pure-state dynamics of the qubit plus bath in the <=1-excitation sector.

Amplitudes are stored over ``|0,vac>, |1,vac>, |0,e_1>, ..., |0,e_M>``.  The
total Hamiltonian conserves the excitation number, so a state starting in
this sector never leaves it and the evolution below is exact.
"""
from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .model import ModeSet, free_energies
from .opalg import TruncatedBasis, jacobi_eigh, trace_distance

NORM_DRIFT_LIMIT = 1e-6


@dataclass(frozen=True, eq=False)
class PureState:
    amplitudes: np.ndarray
    time: float = 0.0

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def product_state(modes: ModeSet, qubit=(1.0, 1.0)) -> PureState:
    """``(c0|0> + c1|1>) (x) |vac>``, normalised; default is the |+> state."""
    amps = np.zeros(modes.n_modes + 2, dtype=complex)
    amps[:2] = qubit
    nrm = np.linalg.norm(amps)
    if nrm == 0:
        raise ConfigError("qubit amplitudes must not both vanish")
    return PureState(amps / nrm, 0.0)


def sector_hamiltonian(modes: ModeSet) -> np.ndarray:
    """Total Hamiltonian on the (M+2)-dimensional amplitude space."""
    m = modes.n_modes
    h = np.zeros((m + 2, m + 2))
    h[1, 1] = modes.omega0
    h[2:, 2:] = np.diag(modes.omegas)
    h[1, 2:] = h[2:, 1] = modes.gs
    return h


def _check_norm(psi: np.ndarray, tau: float):
    drift = abs(np.linalg.norm(psi) - 1.0)
    if drift > NORM_DRIFT_LIMIT:
        raise NumericalError(f"norm drift {drift:.3e} at tau={tau:.6g}", "EXACT")


def iter_exact(
    modes: ModeSet,
    psi0: PureState,
    dt: float,
    t_final: float,
    scheme: str = "eigenprop",
) -> Iterator[PureState]:
    """Yield the Schroedinger-picture state at every multiple of ``dt`` up to ``t_final``."""
    if dt <= 0 or t_final < 0:
        raise ConfigError(f"need dt > 0 and t_final >= 0 (got {dt}, {t_final})")
    if abs(psi0.norm - 1.0) > 1e-9:
        raise ConfigError("initial state must be normalised")
    n_steps = round(t_final / dt)
    h = sector_hamiltonian(modes)
    c0 = np.asarray(psi0.amplitudes, dtype=complex)

    if scheme == "eigenprop":
        # |0,vac> has zero energy and is decoupled, so only the
        # single-excitation block needs diagonalising.
        evals, evecs = jacobi_eigh(h[1:, 1:])
        weights = evecs.conj().T @ c0[1:]
        for n in range(n_steps + 1):
            tau = n * dt
            psi = np.empty_like(c0)
            psi[0] = c0[0]
            psi[1:] = evecs @ (np.exp(-1j * evals * tau) * weights)
            _check_norm(psi, tau)
            yield PureState(psi, tau)
    elif scheme == "rk4":
        gen = -1j * h
        psi = c0.copy()
        for n in range(n_steps + 1):
            tau = n * dt
            if n:
                k1 = gen @ psi
                k2 = gen @ (psi + 0.5 * dt * k1)
                k3 = gen @ (psi + 0.5 * dt * k2)
                k4 = gen @ (psi + dt * k3)
                psi = psi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            _check_norm(psi, tau)
            yield PureState(psi.copy(), tau)
    else:
        raise ConfigError(f"unknown exact scheme {scheme!r}")


def evolve_exact(modes, psi0, dt, t_final, scheme="eigenprop") -> list[PureState]:
    return list(iter_exact(modes, psi0, dt, t_final, scheme))


def embed(psi: PureState, basis: TruncatedBasis) -> np.ndarray:
    """Amplitude vector in the flat D-dimensional basis."""
    a = np.asarray(psi.amplitudes)
    if a.shape != (basis.n_modes + 2,):
        raise ConfigError(f"state has {a.shape[0]} amplitudes, basis needs {basis.n_modes + 2}")
    n = basis.n_bath
    vec = np.zeros(basis.dim, dtype=complex)
    vec[0] = a[0]
    vec[n] = a[1]
    vec[1:n] = a[2:]
    return vec


@dataclass(frozen=True, eq=False)
class Snapshot:
    rho_s: np.ndarray
    rho_b: np.ndarray
    rho_sb: np.ndarray
    chi: np.ndarray


def reduced_and_chi(
    psi: PureState,
    basis: TruncatedBasis,
    interaction_picture: bool = True,
    modes: ModeSet | None = None,
) -> Snapshot:
    """Reduced states and ``chi = rho_SB - rho_S (x) rho_B`` for a pure total state.

    The interaction-picture rotation ``exp(i(H_S+H_B)tau)`` is diagonal in
    the basis and local, so it is applied to the amplitudes directly.
    """
    vec = embed(psi, basis)
    if interaction_picture:
        if modes is None:
            raise ConfigError("interaction picture needs the mode set")
        vec = vec * np.exp(1j * free_energies(modes, basis) * psi.time)
    grid = vec.reshape(2, basis.n_bath)
    rho_s = grid @ grid.conj().T
    rho_b = grid.T @ grid.conj()
    rho_sb = np.outer(vec, vec.conj())
    chi = rho_sb - np.kron(rho_s, rho_b)
    return Snapshot(rho_s, rho_b, rho_sb, chi)


def bath_distance_from_vacuum(psi: PureState) -> float:
    """Trace distance between the exact bath state and the initial vacuum.

    The bath state is supported on span{vac, d}, where ``d`` collects the
    single-excitation amplitudes, so the distance reduces to a 2x2 problem.
    """
    a = np.asarray(psi.amplitudes)
    d = float(np.linalg.norm(a[2:]))
    rho = np.array(
        [[abs(a[0]) ** 2 + abs(a[1]) ** 2, a[0] * d], [np.conj(a[0]) * d, d * d]],
        dtype=complex,
    )
    return trace_distance(rho, np.diag([1.0, 0.0]).astype(complex))


def excitation_number(psi: PureState) -> float:
    a = np.asarray(psi.amplitudes)
    return float(abs(a[1]) ** 2 + np.sum(np.abs(a[2:]) ** 2))

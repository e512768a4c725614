"""Fixed-step integrators for the seven approximate master equations.

Everything is in the interaction picture with respect to ``H_S + H_B``.  A
solver is a small state machine: ``rhs()`` evaluates the time derivative of
``rho_S`` at the current state and ``advance()`` moves one step ``dt``.  The
runner drives all solvers in lockstep; ``solve_*`` wrap a single solver for
stand-alone use.

Qubit convention: index 0 is the ground state, index 1 the excited state, so
``sigma_- = |0><1|`` and ``n = sigma_+ sigma_- = |1><1|``.
"""
from __future__ import annotations

import enum
import time
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import model
from .errors import ConfigError, NumericalError
from .model import Exchange, ExchangeMemory, ModeSet, RatePair
from .opalg import (
    TruncatedBasis,
    bath_average,
    block_terms,
    blocks_to_flat,
    commutator,
    hermitian_eigenvalues,
    kron_blocks,
    system_average,
    tensor_sb,
)

TRACE_DRIFT_LIMIT = 1e-6
CHI_HERMITIAN_LIMIT = 1e-8
NEGATIVE_POP_THRESHOLD = -1e-6

SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()
EXCITED = np.array([[0, 0], [0, 1]], dtype=complex)


class MethodId(enum.Enum):
    ULL2 = "ULL2"
    MLL = "MLL"
    NZ2 = "NZ2"
    TCL2 = "TCL2"
    REDFIELD = "REDFIELD"
    CR = "CR"
    LINDBLAD = "LINDBLAD"

    @classmethod
    def parse(cls, name: str) -> MethodId:
        key = name.strip().upper()
        if key == "R":
            key = "REDFIELD"
        try:
            return cls(key)
        except ValueError:
            known = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown method {name!r}; known: {known}") from None


@dataclass
class SolverState:
    tau: float
    rho_s: np.ndarray
    rho_b: np.ndarray | None = None
    chi_accum: np.ndarray | None = None
    memory: object | None = None
    rho_s0: np.ndarray | None = None


@dataclass
class MethodResult:
    method: MethodId
    times: np.ndarray
    rho_s: np.ndarray
    neg_population: bool = False
    wall_time: float = 0.0
    error: str | None = None
    columns: dict = field(default_factory=dict)


def vacuum(basis: TruncatedBasis) -> np.ndarray:
    rho_b = np.zeros((basis.n_bath, basis.n_bath), dtype=complex)
    rho_b[0, 0] = 1.0
    return rho_b


def rate_generator(rates: RatePair, rho: np.ndarray) -> np.ndarray:
    """``-i eps [n, rho] + gamma (2 s- rho s+ - {n, rho})`` on a 2x2 matrix."""
    lower = SIGMA_MINUS @ rho @ SIGMA_PLUS
    return (
        -1j * rates.epsilon * (EXCITED @ rho - rho @ EXCITED)
        + rates.gamma * (2.0 * lower - EXCITED @ rho - rho @ EXCITED)
    )


def check_density(rho_s0) -> np.ndarray:
    rho = np.asarray(rho_s0, dtype=complex)
    if rho.shape != (2, 2):
        raise ConfigError(f"rho_S must be 2x2, got {rho.shape}")
    if abs(np.trace(rho) - 1.0) > 1e-10 or np.max(np.abs(rho - rho.conj().T)) > 1e-12:
        raise ConfigError("rho_S must be Hermitian with unit trace")
    if hermitian_eigenvalues(rho)[0] < -1e-12:
        raise ConfigError("rho_S must be positive semidefinite")
    return rho


def min_population(rho_s: np.ndarray) -> float:
    return float(hermitian_eigenvalues(0.5 * (rho_s + rho_s.conj().T))[0])


class Solver:
    """Base class: a fixed-step integrator of ``rho_S``."""

    method: MethodId

    def __init__(self, rho_s0, dt: float):
        if not dt > 0:
            raise ConfigError(f"time step must be > 0, got {dt}")
        self.rho_s0 = check_density(rho_s0)
        self.rho_s = self.rho_s0.copy()
        self.dt = float(dt)
        self.steps = 0

    @property
    def tau(self) -> float:
        return self.steps * self.dt

    def rhs(self) -> np.ndarray:
        raise NotImplementedError

    def _step(self):
        raise NotImplementedError

    def advance(self):
        self._step()
        self.steps += 1
        self._check()

    def _check(self):
        drift = abs(np.trace(self.rho_s) - 1.0)
        if not np.all(np.isfinite(self.rho_s)) or drift > TRACE_DRIFT_LIMIT:
            raise NumericalError(
                f"trace drift {drift:.3e} at tau={self.tau:.6g}", self.method.value
            )
        self.rho_s = 0.5 * (self.rho_s + self.rho_s.conj().T)

    def state(self) -> SolverState:
        return SolverState(self.tau, self.rho_s.copy(), rho_s0=self.rho_s0)


class RateSolver(Solver):
    """2x2 equations of the form ``rate_generator(rates(tau), rho)``, RK4."""

    def rates(self, tau: float) -> RatePair:
        raise NotImplementedError

    def generator(self, tau: float, rho: np.ndarray) -> np.ndarray:
        return rate_generator(self.rates(tau), rho)

    def rhs(self) -> np.ndarray:
        return self.generator(self.tau, self.rho_s)

    def _step(self):
        t, h, y = self.tau, self.dt, self.rho_s
        k1 = self.generator(t, y)
        k2 = self.generator(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = self.generator(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = self.generator(t + h, y + h * k3)
        self.rho_s = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


class TCL2Solver(RateSolver):
    method = MethodId.TCL2

    def __init__(self, modes: ModeSet, rho_s0, dt: float):
        super().__init__(rho_s0, dt)
        self.modes = modes

    def rates(self, tau: float) -> RatePair:
        return model.tcl2_rates(self.modes, tau)


class RedfieldSolver(RateSolver):
    method = MethodId.REDFIELD

    def __init__(self, modes: ModeSet, rho_s0, dt: float, b_width: float):
        super().__init__(rho_s0, dt)
        self.modes = modes
        self.b_width = b_width
        self._rates = model.redfield_rates(modes, b_width)

    def rates(self, tau: float) -> RatePair:
        return self._rates


class CRSolver(RedfieldSolver):
    """Redfield generator on ``rho_S(tau)`` minus the correction acting on ``rho_S(0)``."""

    method = MethodId.CR

    def generator(self, tau: float, rho: np.ndarray) -> np.ndarray:
        correction = rate_generator(model.cr_rates(self.modes, tau, self.b_width), self.rho_s0)
        return rate_generator(self._rates, rho) - correction


@dataclass(frozen=True)
class GapChannel:
    """One Bohr-frequency component ``S(omega)`` with its half-line rate ``Gamma(omega)``."""

    omega: float
    jump: np.ndarray
    rate: complex


def _bohr_components(h_s: np.ndarray, coupling: np.ndarray) -> dict:
    """Split ``coupling`` into ``sum_omega S(omega)`` with ``[H_S, S(omega)] = -omega S(omega)``."""
    energies = np.real(np.diag(h_s))
    if np.max(np.abs(h_s - np.diag(energies))) > 0:
        raise ConfigError("system Hamiltonian must be diagonal in the qubit basis")
    parts: dict = {}
    for i, ei in enumerate(energies):
        for j, ej in enumerate(energies):
            if coupling[i, j] == 0:
                continue
            omega = float(ej - ei)
            block = parts.setdefault(omega, np.zeros_like(coupling))
            block[i, j] += coupling[i, j]
    return parts


def lindblad_channels(modes: ModeSet, b_width: float) -> list[GapChannel]:
    """Gap-resolved jump operators and rates for the exchange coupling.

    The system factor ``sigma_+ + sigma_-`` of every exchange term is split
    by Bohr frequency of ``H_S = omega0 n``.  A component
    ``S(omega)`` pairs with the bath factor of the opposite excitation
    change, and ``Gamma(omega) = int_0^inf exp(i omega s) <B(s)^dag B> ds``
    is evaluated in the vacuum, where only bath lowering after raising
    survives.
    """
    if b_width <= 0:
        raise ConfigError(f"delta width must be > 0, got {b_width}")
    h_s = modes.omega0 * EXCITED
    bath_raise = np.array([[0, 0], [1, 0]], dtype=complex)  # |e><g| on one mode
    ground = np.array([1, 0], dtype=complex)
    channels = []
    for omega, jump in sorted(_bohr_components(h_s, SIGMA_MINUS + SIGMA_PLUS).items()):
        # S(omega) lowers the qubit for omega > 0, so the bath partner raises a mode.
        partner = bath_raise if omega > 0 else bath_raise.conj().T
        weight = float(np.real(ground.conj() @ partner.conj().T @ partner @ ground))
        bath_freq = modes.omegas if omega > 0 else -modes.omegas
        x = omega - bath_freq
        transform = np.pi * model.gaussian_delta(x, b_width) + 1j * model.principal_inverse(x)
        rate = complex(np.sum(weight * modes.gs**2 * transform))
        channels.append(GapChannel(omega, jump, rate))
    return channels


def lindblad_generator(channels: list[GapChannel], rho: np.ndarray) -> np.ndarray:
    """``sum_omega Gamma(omega)(S rho S^dag - S^dag S rho) + h.c.``"""
    out = np.zeros((2, 2), dtype=complex)
    for ch in channels:
        s = ch.jump
        sd = s.conj().T
        term = ch.rate * (s @ rho @ sd - sd @ s @ rho)
        out += term + term.conj().T
    return out


class LindbladSolver(Solver):
    method = MethodId.LINDBLAD

    def __init__(self, modes: ModeSet, rho_s0, dt: float, b_width: float):
        super().__init__(rho_s0, dt)
        self.modes = modes
        self.b_width = b_width
        self.channels = lindblad_channels(modes, b_width)

    def rhs(self) -> np.ndarray:
        return lindblad_generator(self.channels, self.rho_s)

    def _step(self):
        h, y = self.dt, self.rho_s
        f = lambda r: lindblad_generator(self.channels, r)
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        self.rho_s = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


class OperatorSolver(Solver):
    """Solvers that work with D x D operators on the truncated basis."""

    def __init__(self, modes: ModeSet, basis: TruncatedBasis, rho_s0, dt: float):
        super().__init__(rho_s0, dt)
        if modes.n_modes != basis.n_modes:
            raise ConfigError(f"mode set has M={modes.n_modes}, basis has M={basis.n_modes}")
        self.modes = modes
        self.basis = basis
        self.rho_b0 = vacuum(basis)

    def h_i(self, tau: float) -> sp.csr_array:
        return model.hi_interaction_picture(self.modes, self.basis, tau)


def tilde_interaction(h, rho_s, rho_b, basis: TruncatedBasis):
    """``H - Tr_B[H rho_B] (x) I - I (x) Tr_S[H rho_S]`` (sparse if ``H`` is)."""
    h_s = bath_average(h, rho_b, basis)
    h_b = system_average(h, rho_s, basis)
    eye_b = sp.identity(basis.n_bath, dtype=complex, format="csr")
    eye_s = sp.identity(2, dtype=complex, format="csr")
    return (
        sp.csr_array(h)
        - tensor_sb(sp.csr_array(h_s), eye_b, basis)
        - tensor_sb(eye_s, sp.csr_array(h_b), basis)
    )


class MLLSolver(OperatorSolver):
    """Time-local equation with correlation ``-i tau [H~(tau), rho_S (x) rho_B(0)]``."""

    method = MethodId.MLL

    def generator(self, tau: float, rho: np.ndarray) -> np.ndarray:
        coupling = Exchange.at(self.modes, tau)
        drive = coupling.bath_mean(self.rho_b0)
        terms = coupling.tilde_commutator_terms(rho, self.rho_b0)
        return -1j * commutator(drive, rho) - tau * coupling.ptrace_bath_commutator(terms)

    def rhs(self) -> np.ndarray:
        return self.generator(self.tau, self.rho_s)

    def _step(self):
        t, h, y = self.tau, self.dt, self.rho_s
        k1 = self.generator(t, y)
        k2 = self.generator(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = self.generator(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = self.generator(t + h, y + h * k3)
        self.rho_s = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


class NZ2Solver(OperatorSolver):
    """Memory form ``d rho/dt = -Tr_B[H(tau), I(tau)]`` with
    ``I(tau) = int_0^tau [H(s), rho_S(s) (x) rho_B(0)] ds``.

    ``I`` is accumulated with the trapezoid rule; the outer equation uses a
    Heun step whose predictor supplies the not-yet-known endpoint sample.
    """

    method = MethodId.NZ2

    def __init__(self, modes, basis, rho_s0, dt):
        super().__init__(modes, basis, rho_s0, dt)
        self.memory = ExchangeMemory.zero(self.rho_b0)
        self._sample = self.integrand(0.0, self.rho_s)

    def integrand(self, tau: float, rho: np.ndarray) -> ExchangeMemory:
        return self.memory.sample(Exchange.at(self.modes, tau), rho)

    def _force(self, tau: float, memory: ExchangeMemory) -> np.ndarray:
        coupling = Exchange.at(self.modes, tau)
        drive = coupling.bath_mean(self.rho_b0)
        return -1j * commutator(drive, self.rho_s) - coupling.ptrace_bath_commutator(memory.terms())

    def rhs(self) -> np.ndarray:
        return self._force(self.tau, self.memory)

    def _step(self):
        t, h = self.tau, self.dt
        f0 = self.rhs()
        rho_pred = self.rho_s + h * f0
        mem_pred = self.memory + 0.5 * h * (self._sample + self.integrand(t + h, rho_pred))
        f1 = self._force(t + h, mem_pred)
        self.rho_s = self.rho_s + 0.5 * h * (f0 + f1)
        new_sample = self.integrand(t + h, self.rho_s)
        self.memory = self.memory + 0.5 * h * (self._sample + new_sample)
        self._sample = new_sample

    def state(self) -> SolverState:
        st = super().state()
        st.memory = self.memory
        return st


class ULL2Solver(OperatorSolver):
    """Joint RK4 for ``(rho_S, rho_B, chi)``.

    ``chi' = -i [H~(tau), rho_S (x) rho_B]`` while each marginal follows the
    universal form with the current ``chi`` and the mean field of the other.
    """

    method = MethodId.ULL2

    def __init__(self, modes, basis, rho_s0, dt):
        super().__init__(modes, basis, rho_s0, dt)
        self.rho_b = self.rho_b0.copy()
        n = basis.n_bath
        self.chi_blocks = np.zeros((2, 2, n, n), dtype=complex)

    @property
    def chi(self) -> np.ndarray:
        return blocks_to_flat(self.chi_blocks)

    def derivatives(self, tau, rho_s, rho_b, chi_terms):
        """Time derivatives of ``(rho_S, rho_B)`` and of ``chi`` in factored form.

        ``chi_terms`` is the current correlation as (2x2, bath) pairs; the
        returned correlation derivative is such a list as well.
        """
        coupling = Exchange.at(self.modes, tau)
        h_s = coupling.bath_mean(rho_b)
        tr_b, tr_s = coupling.partial_commutators(chi_terms)
        d_chi = [(-1j * c, m) for c, m in coupling.tilde_commutator_terms(rho_s, rho_b)]
        d_rho_s = -1j * commutator(h_s, rho_s) - 1j * tr_b
        d_rho_b = -1j * coupling.system_commutator(rho_s, rho_b) - 1j * tr_s
        return d_rho_s, d_rho_b, d_chi

    def rhs(self) -> np.ndarray:
        return self.derivatives(self.tau, self.rho_s, self.rho_b, block_terms(self.chi_blocks))[0]

    def _step(self):
        # chi never enters its own derivative, so each RK4 stage sees
        # chi_n plus a factored increment and chi is touched once per step.
        t, h = self.tau, self.dt
        rs, rb = self.rho_s, self.rho_b
        base = block_terms(self.chi_blocks)

        def scaled(terms, c):
            return [(c * q, m) for q, m in terms]

        s1, b1, x1 = self.derivatives(t, rs, rb, base)
        s2, b2, x2 = self.derivatives(
            t + 0.5 * h, rs + 0.5 * h * s1, rb + 0.5 * h * b1, base + scaled(x1, 0.5 * h)
        )
        s3, b3, x3 = self.derivatives(
            t + 0.5 * h, rs + 0.5 * h * s2, rb + 0.5 * h * b2, base + scaled(x2, 0.5 * h)
        )
        s4, b4, x4 = self.derivatives(t + h, rs + h * s3, rb + h * b3, base + scaled(x3, h))
        self.rho_s = rs + h / 6.0 * (s1 + 2 * s2 + 2 * s3 + s4)
        self.rho_b = rb + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
        increment = scaled(x1, h / 6.0) + scaled(x2, h / 3.0) + scaled(x3, h / 3.0) + scaled(x4, h / 6.0)
        self.chi_blocks += kron_blocks(increment, self.basis.n_bath)

    def _check(self):
        super()._check()
        adjoint = self.chi_blocks.transpose(1, 0, 3, 2).conj()
        drift = float(np.max(np.abs(self.chi_blocks - adjoint)))
        if not np.isfinite(drift) or drift > CHI_HERMITIAN_LIMIT:
            raise NumericalError(
                f"correlation Hermiticity drift {drift:.3e} at tau={self.tau:.6g}",
                self.method.value,
            )
        bath_drift = abs(np.trace(self.rho_b) - 1.0)
        if bath_drift > TRACE_DRIFT_LIMIT:
            raise NumericalError(
                f"bath trace drift {bath_drift:.3e} at tau={self.tau:.6g}", self.method.value
            )
        self.rho_b = 0.5 * (self.rho_b + self.rho_b.conj().T)

    def state(self) -> SolverState:
        st = super().state()
        st.rho_b = self.rho_b.copy()
        st.chi_accum = self.chi.copy()
        return st


def make_solver(
    method: MethodId,
    modes: ModeSet,
    basis: TruncatedBasis,
    rho_s0,
    dt: float,
    b_width: float,
) -> Solver:
    if method is MethodId.ULL2:
        return ULL2Solver(modes, basis, rho_s0, dt)
    if method is MethodId.MLL:
        return MLLSolver(modes, basis, rho_s0, dt)
    if method is MethodId.NZ2:
        return NZ2Solver(modes, basis, rho_s0, dt)
    if method is MethodId.TCL2:
        return TCL2Solver(modes, rho_s0, dt)
    if method is MethodId.REDFIELD:
        return RedfieldSolver(modes, rho_s0, dt, b_width)
    if method is MethodId.CR:
        return CRSolver(modes, rho_s0, dt, b_width)
    if method is MethodId.LINDBLAD:
        return LindbladSolver(modes, rho_s0, dt, b_width)
    raise ConfigError(f"unsupported method {method!r}")


def n_steps_for(dt: float, t_final: float) -> int:
    if not dt > 0 or not t_final >= dt:
        raise ConfigError(f"need dt > 0 and t_final >= dt (got {dt}, {t_final})")
    n = round(t_final / dt)
    if abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ConfigError(f"t_final={t_final} is not a multiple of dt={dt}")
    return n


def iter_states(solver: Solver, n_steps: int) -> Iterator[SolverState]:
    """Yield the initial state and the state after each of ``n_steps`` steps."""
    yield solver.state()
    for _ in range(n_steps):
        solver.advance()
        yield solver.state()


def run_solver(solver: Solver, t_final: float) -> MethodResult:
    start = time.perf_counter()
    n_steps = n_steps_for(solver.dt, t_final)
    times, rhos, flagged = [], [], False
    for st in iter_states(solver, n_steps):
        times.append(st.tau)
        rhos.append(st.rho_s)
        flagged = flagged or min_population(st.rho_s) < NEGATIVE_POP_THRESHOLD
    return MethodResult(
        solver.method,
        np.array(times),
        np.array(rhos),
        neg_population=flagged,
        wall_time=time.perf_counter() - start,
    )


def solve_ull2(modes, basis, rho_s0, dt, t_final) -> MethodResult:
    return run_solver(ULL2Solver(modes, basis, rho_s0, dt), t_final)


def solve_mll(modes, basis, rho_s0, dt, t_final) -> MethodResult:
    return run_solver(MLLSolver(modes, basis, rho_s0, dt), t_final)


def solve_nz2(modes, basis, rho_s0, dt, t_final) -> MethodResult:
    return run_solver(NZ2Solver(modes, basis, rho_s0, dt), t_final)


def solve_tcl2(modes, rho_s0, dt, t_final) -> MethodResult:
    return run_solver(TCL2Solver(modes, rho_s0, dt), t_final)


def solve_redfield(modes, rho_s0, dt, t_final, b_width) -> MethodResult:
    return run_solver(RedfieldSolver(modes, rho_s0, dt, b_width), t_final)


def solve_cr(modes, rho_s0, dt, t_final, b_width) -> MethodResult:
    return run_solver(CRSolver(modes, rho_s0, dt, b_width), t_final)


def solve_lindblad(modes, rho_s0, dt, t_final, b_width) -> MethodResult:
    return run_solver(LindbladSolver(modes, rho_s0, dt, b_width), t_final)

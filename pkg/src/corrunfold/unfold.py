"""Correlation operators implied by each master equation, and the check that
each one regenerates its own equation through the universal form

    d rho_S/dt = -i[Tr_B[H_I rho_B], rho_S] - i Tr_B[H_I, chi].

Every correlation here is a short sum of (2x2) (x) (bath) products, most of
them rank-one in the bath, so operators are built and traced in that
factored form; the D x D matrix is only assembled on request.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, ContractViolation
from .mesolve import MethodId, Solver, SolverState, ULL2Solver, vacuum
from .model import Exchange, ExchangeMemory, ModeSet, redfield_kernel, tcl2_kernel
from .opalg import (
    TruncatedBasis,
    blocks_to_flat,
    commutator,
    flat_to_blocks,
    kron_blocks,
    terms_ptrace_bath,
)

VACUUM_SELECTION_ATOL = 1e-12
_EYE2 = np.eye(2, dtype=complex)


@dataclass(frozen=True, eq=False)
class CorrelationOp:
    """A correlation operator held as ``terms`` (pairs of 2x2 and bath
    factors) or directly as ``(2, 2, n, n)`` ``blocks``."""

    method: MethodId
    time: float
    n_bath: int
    terms: list | None = None
    given_blocks: np.ndarray | None = None
    components: dict | None = None

    @cached_property
    def blocks(self) -> np.ndarray:
        if self.given_blocks is not None:
            return self.given_blocks
        return kron_blocks(self.terms, self.n_bath)

    @property
    def matrix(self) -> np.ndarray:
        """Dense operator on the flat ``s * (M+1) + b`` index."""
        return blocks_to_flat(self.blocks)

    def factored(self) -> list:
        if self.terms is not None:
            return self.terms
        b = self.blocks
        out = []
        for s in range(2):
            for t in range(2):
                unit = np.zeros((2, 2), dtype=complex)
                unit[s, t] = 1.0
                out.append((unit, b[s, t]))
        return out

    def norm(self) -> float:
        return float(np.linalg.norm(self.blocks))


def correct_terms(terms: list, n_bath: int, bath_term: bool = True, check_bath: bool = False) -> list:
    """``c - I_S/2 (x) Tr_S c - Tr_B c (x) I_B/(M+1)`` on a term list.

    With ``check_bath`` the bath-side term must vanish (it does whenever the
    bath factor is the vacuum); a violation raises instead of being absorbed.
    """
    out = [(c - 0.5 * np.trace(c) * _EYE2, m) for c, m in terms]
    if bath_term:
        tr_b = terms_ptrace_bath(terms)
        size = float(np.max(np.abs(tr_b)))
        if check_bath and size > VACUUM_SELECTION_ATOL:
            raise ContractViolation(f"bath-side partial trace {size:.3e} should vanish in the vacuum")
        if size > 0.0:
            out.append((-tr_b, np.eye(n_bath, dtype=complex) / n_bath))
    return out


def _scaled(terms: list, c: complex) -> list:
    return [(c * q, m) for q, m in terms]


def _kernel_chi_terms(kernel: Exchange, rho_s, basis: TruncatedBasis, bath_term: bool = True) -> list:
    """``-i`` times the corrected ``[kernel, rho_s (x) vacuum]``."""
    rho_s = np.asarray(rho_s, dtype=complex)
    c = kernel.commutator_terms([(rho_s, vacuum(basis))])
    return _scaled(correct_terms(c, basis.n_bath, bath_term, check_bath=bath_term), -1j)


def chi_nz2_from_memory(memory: ExchangeMemory, basis: TruncatedBasis, tau: float) -> CorrelationOp:
    """Correlation from the accumulated memory ``int_0^tau [H(s), rho_S(s) (x) rho_B(0)] ds``."""
    terms = correct_terms(memory.terms(), basis.n_bath, check_bath=True)
    return CorrelationOp(MethodId.NZ2, tau, basis.n_bath, _scaled(terms, -1j))


def chi_nz2(history, modes: ModeSet, basis: TruncatedBasis, dt: float) -> CorrelationOp:
    """Trapezoid accumulation over a history ``rho_S(0), rho_S(dt), ...``."""
    if len(history) == 0:
        raise ConfigError("NZ2 correlation needs a non-empty history")
    memory = ExchangeMemory.zero(vacuum(basis))
    prev = None
    for j, rho in enumerate(history):
        sample = memory.sample(Exchange.at(modes, j * dt), np.asarray(rho, dtype=complex))
        if prev is not None:
            memory = memory + 0.5 * dt * (prev + sample)
        prev = sample
    return chi_nz2_from_memory(memory, basis, (len(history) - 1) * dt)


def chi_tcl2(rho_s, modes: ModeSet, basis: TruncatedBasis, tau: float) -> CorrelationOp:
    terms = _kernel_chi_terms(tcl2_kernel(modes, tau), rho_s, basis)
    return CorrelationOp(MethodId.TCL2, tau, basis.n_bath, terms)


def chi_redfield(rho_s, modes: ModeSet, basis: TruncatedBasis, tau: float, b_width: float) -> CorrelationOp:
    terms = _kernel_chi_terms(redfield_kernel(modes, tau, b_width), rho_s, basis)
    return CorrelationOp(MethodId.REDFIELD, tau, basis.n_bath, terms)


def chi_cr(rho_s, rho_s0, modes, basis, tau: float, b_width: float) -> CorrelationOp:
    """Redfield correlation minus its value at ``tau = 0`` built from ``rho_S(0)``."""
    now = chi_redfield(rho_s, modes, basis, tau, b_width).terms
    start = chi_redfield(rho_s0, modes, basis, 0.0, b_width).terms
    return CorrelationOp(MethodId.CR, tau, basis.n_bath, now + _scaled(start, -1.0))


def chi_lindblad_set(rho_s, modes: ModeSet, basis: TruncatedBasis, tau: float, b_width: float) -> dict:
    """``{omega: chi(omega; tau)}`` for ``omega = +omega0, -omega0``.

    ``chi(omega)`` is built from the ``-omega`` component of the half-line
    kernel, so that ``H_I(omega)`` paired with ``chi(omega)`` is exactly the
    term kept by the rotating-wave approximation.
    """
    parts = redfield_kernel(modes, tau, b_width).gap_parts(modes.omega0)
    return {
        omega: CorrelationOp(
            MethodId.LINDBLAD,
            tau,
            basis.n_bath,
            _kernel_chi_terms(parts[-omega], rho_s, basis, bath_term=False),
        )
        for omega in (modes.omega0, -modes.omega0)
    }


def chi_lindblad(rho_s, modes, basis, tau: float, b_width: float) -> CorrelationOp:
    """Gap-summed correlation, carrying the per-gap set as ``components``."""
    parts = chi_lindblad_set(rho_s, modes, basis, tau, b_width)
    terms = [t for p in parts.values() for t in p.terms]
    return CorrelationOp(MethodId.LINDBLAD, tau, basis.n_bath, terms, components=parts)


def lindblad_gap_rhs(chi_set: dict, modes: ModeSet, tau: float) -> dict:
    """Per-gap contributions ``-i Tr_B[H_I(omega; tau), chi(omega; tau)]``."""
    h_parts = Exchange.at(modes, tau).gap_parts(modes.omega0)
    return {
        omega: -1j * h_parts[omega].ptrace_bath_commutator(op.factored())
        for omega, op in chi_set.items()
    }


def chi_mll(rho_s, rho_b0, modes: ModeSet, basis: TruncatedBasis, tau: float) -> CorrelationOp:
    """``-i tau [H~(tau), rho_S (x) rho_B(0)]``."""
    terms = Exchange.at(modes, tau).tilde_commutator_terms(
        np.asarray(rho_s, dtype=complex), np.asarray(rho_b0, dtype=complex)
    )
    return CorrelationOp(MethodId.MLL, tau, basis.n_bath, _scaled(terms, -1j * tau))


def chi_ull2(state: SolverState) -> CorrelationOp:
    if state.chi_accum is None:
        raise ConfigError("state carries no accumulated correlation")
    basis = TruncatedBasis(state.chi_accum.shape[0] // 2 - 1)
    blocks = flat_to_blocks(state.chi_accum, basis)
    return CorrelationOp(MethodId.ULL2, state.tau, basis.n_bath, given_blocks=blocks)


def chi_of(solver: Solver) -> CorrelationOp:
    """Correlation implied by a solver at its current time."""
    m, tau = solver.method, solver.tau
    basis = getattr(solver, "basis", None) or TruncatedBasis(solver.modes.n_modes)
    if m is MethodId.ULL2:
        return CorrelationOp(m, tau, basis.n_bath, given_blocks=solver.chi_blocks.copy())
    if m is MethodId.NZ2:
        return chi_nz2_from_memory(solver.memory, basis, tau)
    if m is MethodId.MLL:
        return chi_mll(solver.rho_s, solver.rho_b0, solver.modes, basis, tau)
    if m is MethodId.TCL2:
        return chi_tcl2(solver.rho_s, solver.modes, basis, tau)
    if m is MethodId.REDFIELD:
        return chi_redfield(solver.rho_s, solver.modes, basis, tau, solver.b_width)
    if m is MethodId.CR:
        return chi_cr(solver.rho_s, solver.rho_s0, solver.modes, basis, tau, solver.b_width)
    if m is MethodId.LINDBLAD:
        return chi_lindblad(solver.rho_s, solver.modes, basis, tau, solver.b_width)
    raise ConfigError(f"no correlation defined for {m!r}")


def effective_bath(solver: Solver, basis: TruncatedBasis) -> np.ndarray:
    """Bath state entering the mean-field term: co-evolved for ULL2, vacuum otherwise."""
    if isinstance(solver, ULL2Solver):
        return solver.rho_b
    return vacuum(basis)


def universal_rhs(tau: float, chi: CorrelationOp, rho_s, rho_b_eff, modes: ModeSet) -> np.ndarray:
    coupling = Exchange.at(modes, tau)
    drive = coupling.bath_mean(np.asarray(rho_b_eff, dtype=complex))
    return -1j * commutator(drive, np.asarray(rho_s)) - 1j * coupling.ptrace_bath_commutator(
        chi.factored()
    )


def unfold_consistency(
    method: MethodId,
    tau: float,
    chi: CorrelationOp,
    rho_s,
    rho_b_eff,
    modes: ModeSet,
    rhs,
) -> float:
    """Frobenius norm of ``rhs`` minus the universal form evaluated on ``chi``.

    ``rhs`` is the method's own time derivative of ``rho_S`` at ``tau``.
    """
    if chi.method is not method:
        raise ConfigError(f"correlation belongs to {chi.method.value}, not {method.value}")
    rebuilt = universal_rhs(tau, chi, rho_s, rho_b_eff, modes)
    return float(np.linalg.norm(np.asarray(rhs) - rebuilt))


def solver_consistency(solver: Solver) -> float:
    """``unfold_consistency`` for a live solver at its current step."""
    basis = getattr(solver, "basis", None) or TruncatedBasis(solver.modes.n_modes)
    return unfold_consistency(
        solver.method,
        solver.tau,
        chi_of(solver),
        solver.rho_s,
        effective_bath(solver, basis),
        solver.modes,
        solver.rhs(),
    )


def chi_norm(chi) -> float:
    return chi.norm() if isinstance(chi, CorrelationOp) else float(np.linalg.norm(chi))

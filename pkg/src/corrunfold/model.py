"""Qubit coupled to a bath of two-level systems: spectral densities,
mode discretisation, interaction operators and closed-form bath integrals.

Conventions: frequencies in units of the qubit splitting, hbar = 1,
detuning ``Delta_k = omega0 - omega_k``.  In the truncated basis the
exchange operator ``A_k = sigma_- (x) Sigma_+^k`` has the single entry
``|0, e_k><1, vac|``; terms that would create a second bath excitation are
dropped.
"""
from __future__ import annotations

import warnings
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import integrate

from .errors import ConfigError
from .opalg import (
    Outer,
    TruncatedBasis,
    bath_col0,
    bath_matvec,
    bath_row0,
    bath_vecmat,
)

RESONANCE_ATOL = 1e-12
SUM_RULE_RTOL = 0.02


@dataclass(frozen=True)
class SpectralDensity:
    """Ohmic ``eta*w/pi * exp(-w/wc)`` or Lorentzian ``G*l^2 / (2 pi (w^2 + l^2))``."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        required = {"ohmic": ("eta", "omega_c"), "lorentzian": ("gamma", "lam")}
        if self.kind not in required:
            raise ConfigError(f"unknown spectral density kind {self.kind!r}")
        for name in required[self.kind]:
            value = self.params.get(name)
            if value is None or not np.isfinite(value) or value <= 0:
                raise ConfigError(f"{self.kind} parameter {name} must be > 0, got {value!r}")

    @classmethod
    def ohmic(cls, eta: float = 1.0, omega_c: float = 10.0) -> SpectralDensity:
        return cls("ohmic", {"eta": float(eta), "omega_c": float(omega_c)})

    @classmethod
    def lorentzian(cls, gamma: float = 1.0, lam: float = 0.2) -> SpectralDensity:
        return cls("lorentzian", {"gamma": float(gamma), "lam": float(lam)})

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        if self.kind == "ohmic":
            eta, wc = self.params["eta"], self.params["omega_c"]
            return eta * w / np.pi * np.exp(-w / wc)
        gamma, lam = self.params["gamma"], self.params["lam"]
        return gamma * lam**2 / (2 * np.pi * (w**2 + lam**2))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


@dataclass(frozen=True, eq=False)
class ModeSet:
    omegas: np.ndarray
    gs: np.ndarray
    omega0: float
    d_omega: float

    @property
    def n_modes(self) -> int:
        return len(self.omegas)

    @property
    def detunings(self) -> np.ndarray:
        return self.omega0 - self.omegas

    @property
    def resonant(self) -> np.ndarray:
        return np.abs(self.detunings) < RESONANCE_ATOL

    def scaled(self, factor: float) -> ModeSet:
        """Same grid with every coupling multiplied by ``factor``."""
        return ModeSet(self.omegas, self.gs * factor, self.omega0, self.d_omega)


def discretize(
    density: Callable, n_modes: int, d_omega: float, omega0: float = 1.0
) -> ModeSet:
    """Uniform grid ``omega_k = k*d_omega`` with ``g_k = sqrt(J(omega_k) d_omega)``.

    Warns when ``sum g_k^2`` misses ``int_0^{M d_omega} J`` by more than 2%.
    """
    if n_modes < 1 or d_omega <= 0 or omega0 <= 0:
        raise ConfigError(
            f"need n_modes >= 1, d_omega > 0, omega0 > 0 (got {n_modes}, {d_omega}, {omega0})"
        )
    omegas = d_omega * np.arange(1, n_modes + 1)
    j = np.asarray(density(omegas), dtype=float) * np.ones_like(omegas)
    if np.any(j < 0):
        raise ConfigError("spectral density must be non-negative on the grid")
    gs = np.sqrt(j * d_omega)

    total, _ = integrate.quad(density, 0.0, n_modes * d_omega, limit=500)
    discrete = float(np.sum(gs**2))
    if abs(discrete - total) > SUM_RULE_RTOL * abs(total):
        warnings.warn(
            f"discretised coupling sum {discrete:.6g} deviates from "
            f"integral {total:.6g} by more than {SUM_RULE_RTOL:.0%}",
            stacklevel=2,
        )
    return ModeSet(omegas, gs, float(omega0), float(d_omega))


def exchange_operator(basis: TruncatedBasis, a, b=None) -> sp.csr_array:
    """``sum_k a_k A_k + b_k A_k^dag`` as a sparse D x D array.

    ``b`` defaults to ``conj(a)``, which makes the result Hermitian.
    """
    a = np.asarray(a, dtype=complex)
    if a.shape != (basis.n_modes,):
        raise ConfigError(f"expected {basis.n_modes} coefficients, got shape {a.shape}")
    b = a.conj() if b is None else np.asarray(b, dtype=complex)
    n = basis.n_bath
    k = np.arange(1, n)
    rows = np.concatenate([k, np.full(n - 1, n)])
    cols = np.concatenate([np.full(n - 1, n), k])
    return sp.csr_array((np.concatenate([a, b]), (rows, cols)), shape=(basis.dim, basis.dim))


@dataclass(frozen=True, eq=False)
class Interaction:
    h_i: sp.csr_array
    a_ops: list
    h_s_phase: np.ndarray
    h_b_phase: np.ndarray


def _check_basis(modes: ModeSet, basis: TruncatedBasis):
    if modes.n_modes != basis.n_modes:
        raise ConfigError(f"mode set has M={modes.n_modes}, basis has M={basis.n_modes}")


def free_energies(modes: ModeSet, basis: TruncatedBasis) -> np.ndarray:
    """Diagonal of ``H_S + H_B`` over the flat basis."""
    _check_basis(modes, basis)
    bath = np.concatenate([[0.0], modes.omegas])
    return np.concatenate([bath, bath + modes.omega0])


def build_interaction(modes: ModeSet, basis: TruncatedBasis) -> Interaction:
    _check_basis(modes, basis)
    a_ops = []
    for k in range(modes.n_modes):
        unit = np.zeros(modes.n_modes)
        unit[k] = 1.0
        a_ops.append(exchange_operator(basis, unit, np.zeros(modes.n_modes)))
    n = basis.n_bath
    bath = np.concatenate([[0.0], modes.omegas])
    return Interaction(
        h_i=exchange_operator(basis, modes.gs),
        a_ops=a_ops,
        h_s_phase=np.repeat([0.0, modes.omega0], n),
        h_b_phase=np.tile(bath, 2),
    )


def interaction_coefficients(modes: ModeSet, tau: float) -> np.ndarray:
    """``A_k`` coefficients of ``H_I(tau)``: ``g_k exp(-i Delta_k tau)``."""
    return modes.gs * np.exp(-1j * modes.detunings * tau)


def hi_interaction_picture(modes: ModeSet, basis: TruncatedBasis, tau: float) -> sp.csr_array:
    _check_basis(modes, basis)
    return exchange_operator(basis, interaction_coefficients(modes, tau))


def kernel_L(modes: ModeSet, u):
    """Bath correlation ``L(u) = sum_k g_k^2 exp(i Delta_k u)``; vectorised over ``u``."""
    u = np.asarray(u, dtype=float)
    out = np.exp(1j * np.multiply.outer(u, modes.detunings)) @ (modes.gs**2)
    return complex(out) if out.ndim == 0 else out


def phi(modes: ModeSet, tau: float) -> np.ndarray:
    """``int_0^tau exp(-i Delta_k s) ds`` per mode (equals ``tau`` at resonance)."""
    x = modes.detunings * tau
    return tau * np.exp(-0.5j * x) * np.sinc(x / (2 * np.pi))


def gaussian_delta(x, width: float):
    return np.exp(-((np.asarray(x) / width) ** 2)) / (abs(width) * np.sqrt(np.pi))


def principal_inverse(x) -> np.ndarray:
    """``1/x`` with exactly resonant entries set to zero."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    off = np.abs(x) >= RESONANCE_ATOL
    out[off] = 1.0 / x[off]
    return out


def half_line_transform(modes: ModeSet, b_width: float) -> np.ndarray:
    """Regularised ``int_0^inf exp(i Delta_k s) ds = pi delta_b(Delta_k) + i P/Delta_k``."""
    if b_width <= 0:
        raise ConfigError(f"delta width must be > 0, got {b_width}")
    d = modes.detunings
    return np.pi * gaussian_delta(d, b_width) + 1j * principal_inverse(d)


@dataclass(frozen=True)
class RatePair:
    gamma: float
    epsilon: float


def redfield_rates(modes: ModeSet, b_width: float) -> RatePair:
    c = np.sum(modes.gs**2 * half_line_transform(modes, b_width))
    return RatePair(float(c.real), float(c.imag))


def tcl2_rates(modes: ModeSet, tau: float) -> RatePair:
    """Real and imaginary parts of ``int_0^tau L(u) du``."""
    x = modes.detunings * tau
    g2 = modes.gs**2
    gamma = np.sum(g2 * tau * np.sinc(x / np.pi))
    epsilon = np.sum(g2 * tau * np.sin(0.5 * x) * np.sinc(x / (2 * np.pi)))
    return RatePair(float(gamma), float(epsilon))


def cr_rates(modes: ModeSet, tau: float, b_width: float) -> RatePair:
    """Regularised ``int_0^inf L(s + tau) ds``, the corrected-Redfield rates."""
    c = np.sum(modes.gs**2 * np.exp(1j * modes.detunings * tau) * half_line_transform(modes, b_width))
    return RatePair(float(c.real), float(c.imag))


def redfield_K(modes: ModeSet, basis: TruncatedBasis, tau: float, b_width: float) -> sp.csr_array:
    """``K(tau) = int_0^inf H_I(tau - s) ds`` with Gaussian delta and principal value."""
    _check_basis(modes, basis)
    return redfield_kernel(modes, tau, b_width).to_sparse(basis)


def tcl2_K(modes: ModeSet, basis: TruncatedBasis, tau: float) -> sp.csr_array:
    """``int_0^tau H_I(s) ds``."""
    _check_basis(modes, basis)
    return tcl2_kernel(modes, tau).to_sparse(basis)


_SM = np.array([[0, 1], [0, 0]], dtype=complex)
_SP = _SM.T.copy()


def _comm2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


@dataclass(frozen=True, eq=False)
class Exchange:
    """``K = sigma_- (x) |v><vac| + sigma_+ (x) |vac><w|`` in factored form.

    Bath vectors ``v`` and ``w`` have length M+1 and a zero vacuum entry.
    ``K`` is Hermitian when ``w = conj(v)``.  Products of ``K`` with factored
    operators (see ``opalg.kron_blocks``) cost O(M) per rank-one term, which
    is what makes the D x D correlation dynamics cheap.
    """

    v: np.ndarray
    w: np.ndarray

    @classmethod
    def hermitian(cls, v) -> Exchange:
        v = np.asarray(v, dtype=complex)
        return cls(v, v.conj())

    @classmethod
    def from_modes(cls, coefficients) -> Exchange:
        """Hermitian exchange with ``A_k`` coefficients ``coefficients[k-1]``."""
        return cls.hermitian(np.concatenate([[0.0], np.asarray(coefficients, dtype=complex)]))

    @classmethod
    def at(cls, modes: ModeSet, tau: float) -> Exchange:
        """The interaction-picture ``H_I(tau)``."""
        return cls.from_modes(interaction_coefficients(modes, tau))

    def to_sparse(self, basis: TruncatedBasis) -> sp.csr_array:
        return exchange_operator(basis, self.v[1:], self.w[1:])

    def gap_parts(self, omega0: float) -> dict:
        """``{+omega0: lowering part, -omega0: raising part}``."""
        zero = np.zeros_like(self.v)
        return {omega0: Exchange(self.v, zero), -omega0: Exchange(zero, self.w)}

    def bath_mean(self, rho_b: np.ndarray) -> np.ndarray:
        """``Tr_B[K (I (x) rho_b)]``."""
        return _SM * (rho_b[0, :] @ self.v) + _SP * (self.w @ rho_b[:, 0])

    @staticmethod
    def system_mean_weights(rho_s: np.ndarray) -> tuple[complex, complex]:
        """``Tr_S[K (rho_s (x) I)] = a |v><0| + b |0><w|`` returned as ``(a, b)``."""
        return rho_s[1, 0], rho_s[0, 1]

    def bath_products(self, m) -> tuple[Outer, ...]:
        """``B m, B' m, m B, m B'`` with ``B = |v><0|`` and ``B' = |0><w|``."""
        n = len(self.v)
        e0 = np.zeros(n, dtype=complex)
        e0[0] = 1.0
        return (
            Outer(self.v, bath_row0(m)),
            Outer(e0, bath_vecmat(self.w, m)),
            Outer(bath_matvec(m, self.v), e0),
            Outer(bath_col0(m), self.w),
        )

    def system_commutator(self, rho_s: np.ndarray, rho_b: np.ndarray) -> np.ndarray:
        """``[Tr_S[K (rho_s (x) I)], rho_b]`` as a dense bath matrix."""
        a, b = self.system_mean_weights(rho_s)
        out = np.outer(a * self.v, rho_b[0, :]) - np.outer(rho_b[:, 0], b * self.w)
        out[0, :] += b * (self.w @ rho_b)
        out[:, 0] -= a * (rho_b @ self.v)
        return out

    def commutator_terms(self, terms: list) -> list:
        """``[K, sum_j c_j (x) m_j]`` as a new term list."""
        out = []
        for c, m in terms:
            b_m, bp_m, m_b, m_bp = self.bath_products(m)
            out += [(_SM @ c, b_m), (_SP @ c, bp_m), (-c @ _SM, m_b), (-c @ _SP, m_bp)]
        return out

    def tilde_commutator_terms(self, rho_s: np.ndarray, rho_b: np.ndarray) -> list:
        """``[K - h_S (x) I - I (x) h_B, rho_s (x) rho_b]`` with the mean fields
        ``h_S = Tr_B[K (I (x) rho_b)]`` and ``h_B = Tr_S[K (rho_s (x) I)]``."""
        h_s = self.bath_mean(rho_b)
        a, b = self.system_mean_weights(rho_s)
        b_m, bp_m, m_b, m_bp = self.bath_products(rho_b)
        return [
            (_SM @ rho_s - a * rho_s, b_m),
            (_SP @ rho_s - b * rho_s, bp_m),
            (a * rho_s - rho_s @ _SM, m_b),
            (b * rho_s - rho_s @ _SP, m_bp),
            (-_comm2(h_s, rho_s), rho_b),
        ]

    def ptrace_bath_commutator(self, terms: list) -> np.ndarray:
        """``Tr_B[K, X]`` for a factored ``X``."""
        out = np.zeros((2, 2), dtype=complex)
        for c, m in terms:
            out += _comm2(_SM, c) * (bath_row0(m) @ self.v) + _comm2(_SP, c) * (
                self.w @ bath_col0(m)
            )
        return out

    def partial_commutators(self, terms: list) -> tuple[np.ndarray, np.ndarray]:
        """``(Tr_B[K, X], Tr_S[K, X])`` for a factored ``X``.

        Only row 0, column 0 and, where the qubit weight is nonzero, one
        matrix-vector product of each bath factor are touched.
        """
        n = len(self.v)
        tr_b = self.ptrace_bath_commutator(terms)
        row_a = np.zeros(n, dtype=complex)
        mv_a = np.zeros(n, dtype=complex)
        wm_b = np.zeros(n, dtype=complex)
        col_b = np.zeros(n, dtype=complex)
        for c, m in terms:
            a, b = c[1, 0], c[0, 1]  # Tr(sigma_- c), Tr(sigma_+ c)
            if a != 0:
                row_a += a * bath_row0(m)
                mv_a += a * bath_matvec(m, self.v)
            if b != 0:
                wm_b += b * bath_vecmat(self.w, m)
                col_b += b * bath_col0(m)
        tr_s = np.outer(self.v, row_a) - np.outer(col_b, self.w)
        tr_s[:, 0] -= mv_a
        tr_s[0, :] += wm_b
        return tr_b, tr_s


def tcl2_kernel(modes: ModeSet, tau: float) -> Exchange:
    """``int_0^tau H_I(s) ds``."""
    return Exchange.from_modes(modes.gs * phi(modes, tau))


def redfield_kernel(modes: ModeSet, tau: float, b_width: float) -> Exchange:
    """``int_0^inf H_I(tau - s) ds`` with Gaussian delta and principal value."""
    return Exchange.from_modes(
        interaction_coefficients(modes, tau) * half_line_transform(modes, b_width)
    )


@dataclass(frozen=True, eq=False)
class ExchangeMemory:
    """Weighted sums ``sum_j c_j [K_j, rho_j (x) m]`` for exchange operators
    ``K_j`` and a fixed bath factor ``m``, stored exactly in factored form.

    Each commutator contributes four rank-one families whose free vector is
    linear in ``(v_j, w_j)``; summing over ``j`` only accumulates those
    vectors, one (2, 2, M+1) array per family.
    """

    vecs: np.ndarray  # (4, 2, 2, M+1)
    row: np.ndarray  # m[0, :]
    col: np.ndarray  # m[:, 0]
    bath: np.ndarray

    @classmethod
    def zero(cls, bath: np.ndarray) -> ExchangeMemory:
        bath = np.asarray(bath, dtype=complex)
        n = bath.shape[0]
        return cls(np.zeros((4, 2, 2, n), dtype=complex), bath[0, :].copy(), bath[:, 0].copy(), bath)

    def sample(self, coupling: Exchange, rho_s: np.ndarray) -> ExchangeMemory:
        """``[K, rho_s (x) m]`` alone, sharing this memory's bath factor."""
        v, w, m = coupling.v, coupling.w, self.bath
        vecs = np.empty_like(self.vecs)
        vecs[0] = (_SM @ rho_s)[:, :, None] * v
        vecs[1] = (_SP @ rho_s)[:, :, None] * (w @ m)
        vecs[2] = -(rho_s @ _SM)[:, :, None] * (m @ v)
        vecs[3] = -(rho_s @ _SP)[:, :, None] * w
        return ExchangeMemory(vecs, self.row, self.col, self.bath)

    def _like(self, vecs: np.ndarray) -> ExchangeMemory:
        return ExchangeMemory(vecs, self.row, self.col, self.bath)

    def __add__(self, other: ExchangeMemory) -> ExchangeMemory:
        return self._like(self.vecs + other.vecs)

    def __mul__(self, c: complex) -> ExchangeMemory:
        return self._like(c * self.vecs)

    __rmul__ = __mul__

    def terms(self) -> list:
        n = self.vecs.shape[-1]
        e0 = np.zeros(n, dtype=complex)
        e0[0] = 1.0
        out = []
        for s in range(2):
            for t in range(2):
                unit = np.zeros((2, 2), dtype=complex)
                unit[s, t] = 1.0
                out += [
                    (unit, Outer(self.vecs[0, s, t], self.row)),
                    (unit, Outer(e0, self.vecs[1, s, t])),
                    (unit, Outer(self.vecs[2, s, t], e0)),
                    (unit, Outer(self.col, self.vecs[3, s, t])),
                ]
        return out

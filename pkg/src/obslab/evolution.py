"""Exact spectral propagator of ``du/dt + a(t, D) u = 0`` and kernel diagnostics.

Because the symbol is polynomial in ``xi`` with time-only coefficients, the
evolution family is the Fourier multiplier ``exp(-int_s^t a(r, xi) dr)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import DomainError, EllipticityError, UsageError
from .spectral import (Field, GridSpec, Spectrum, boundary_leakage, forward_transform,
                       inverse_transform, lp_norm)
from .symbol import NonAutonomousSymbol, eval_polynomial, garding_lower_bound, xi_components


def _check_times(sym, s, t):
    if not (0 <= s <= sym.T and 0 <= t <= sym.T):
        raise DomainError(f"times ({s}, {t}) outside [0, {sym.T}]")
    if s > t:
        raise UsageError(f"evolution runs forward only, got s={s} > t={t}")


def symbol_time_integral(sym: NonAutonomousSymbol, s: float, t: float, xi):
    """Exact ``int_s^t a(r, xi) dr``."""
    _check_times(sym, s, t)
    return eval_polynomial(sym.integrated_coefficients(s, t), xi_components(xi, sym.d))


def log_multiplier(sym: NonAutonomousSymbol, grid: GridSpec, s: float, t: float) -> np.ndarray:
    """``-int_s^t a(r, xi) dr`` on the dual lattice of ``grid``."""
    if grid.d != sym.d:
        raise UsageError("grid and symbol dimensions differ")
    return -symbol_time_integral(sym, s, t, grid.xi)


def _require_elliptic(sym):
    cert = sym.certificate()
    if not cert.elliptic:
        raise EllipticityError(f"symbol not uniformly elliptic (sampled c = {cert.c:.3g})")


def propagation_multiplier(sym: NonAutonomousSymbol, grid: GridSpec, s: float, t: float) -> np.ndarray:
    _require_elliptic(sym)
    return np.exp(log_multiplier(sym, grid, s, t))


def propagate(sym: NonAutonomousSymbol, s: float, t: float, f: Field) -> Field:
    """``U(t, s) f`` for ``s <= t``; batch axes of ``f`` are carried along."""
    _check_times(sym, s, t)
    _require_elliptic(sym)
    if s == t:
        return Field(f.grid, np.array(f.values, copy=True))
    F = forward_transform(f)
    mult = propagation_multiplier(sym, f.grid, s, t)
    return inverse_transform(Spectrum(f.grid, F.values * mult))


def kernel(sym: NonAutonomousSymbol, s: float, t: float, grid: GridSpec) -> Field:
    """Convolution kernel ``p(t, s, .)`` of ``U(t, s)`` sampled on ``grid``."""
    _check_times(sym, s, t)
    if s == t:
        raise UsageError("the kernel is a distribution at s == t")
    return inverse_transform(Spectrum(grid, propagation_multiplier(sym, grid, s, t).astype(complex)))


def operator_norm_bound(sym: NonAutonomousSymbol, s: float, t: float, grid: GridSpec) -> float:
    """Grid L^1 norm of the kernel, an upper bound of ``||U(t, s)||_{p -> p}`` for every p."""
    if s == t:
        return 1.0
    return float(lp_norm(kernel(sym, s, t, grid), 1.0))


def operator_norm_p(sym: NonAutonomousSymbol, s: float, t: float, p: float, grid: GridSpec) -> float:
    """Bound of ``||U(t, s)||_{p -> p}`` by the kernel L^1 norm (Young); the value does not depend on ``p``."""
    if not p >= 1:
        raise UsageError(f"p must be >= 1, got {p}")
    return operator_norm_bound(sym, s, t, grid)


def cocycle_residual(sym: NonAutonomousSymbol, grid: GridSpec, r: float, s: float, t: float) -> float:
    """``max |m(t, r) - m(t, s) m(s, r)| / max |m(t, r)|`` for multipliers ``m``."""
    if not r <= s <= t:
        raise UsageError("need r <= s <= t")
    m_tr = propagation_multiplier(sym, grid, r, t)
    m_ts = propagation_multiplier(sym, grid, s, t)
    m_sr = propagation_multiplier(sym, grid, r, s)
    scale = np.max(np.abs(m_tr))
    return float(np.max(np.abs(m_tr - m_ts * m_sr)) / scale) if scale > 0 else 0.0


def heat_kernel(grid: GridSpec, tau: float) -> np.ndarray:
    """Whole-space heat kernel ``(4 pi tau)^{-d/2} exp(-|x|^2 / (4 tau))`` on the grid."""
    r2 = sum(c * c for c in grid.x)
    return (4 * np.pi * tau) ** (-grid.d / 2) * np.exp(-r2 / (4 * tau))


# -- Gaussian-type kernel bound ------------------------------------------------

def gaussian_constants(d: int, m: int, c0: float) -> tuple:
    """Constants ``(C1, C2)`` of the pointwise kernel bound.

    ``C1 = (2 pi)^-d |S^{d-1}| Gamma(d/m) / (m (c0/2)^{d/m})`` and
    ``C2 = (2^{m-1} - 1) / 2^m``.
    """
    sphere = 2 * math.pi ** (d / 2) / gamma_fn(d / 2)
    C1 = (2 * math.pi) ** (-d) * sphere * gamma_fn(d / m) / (m * (c0 / 2) ** (d / m))
    C2 = (2 ** (m - 1) - 1) / 2 ** m
    return float(C1), float(C2)


def gaussian_envelope(grid: GridSpec, tau: float, m: int, C1: float, C2: float, omega: float) -> np.ndarray:
    """``C1 tau^{-d/m} exp(omega tau) exp(-C2 (|x|^m / tau)^{1/(m-1)})``."""
    r = np.sqrt(sum(c * c for c in grid.x))
    return C1 * tau ** (-grid.d / m) * math.exp(omega * tau) * np.exp(-C2 * (r ** m / tau) ** (1.0 / (m - 1)))


@dataclass(frozen=True)
class GaussianBoundReport:
    C1: float
    C2: float
    omega: float
    c0: float
    tau: float
    max_ratio: float
    ratio_at_origin: float
    n_resolved: int
    noise_floor: float
    l1_norm: float
    l1_bound: float
    leakage: float

    @property
    def passed(self) -> bool:
        return self.max_ratio <= 1.0 and self.l1_norm <= self.l1_bound


# Values below this fraction of max|p| are at the level of FFT roundoff.
NOISE_FLOOR = 2.0 ** -40


def verify_gaussian_bound(sym: NonAutonomousSymbol, s: float, t: float, grid: GridSpec,
                          c0: float | None = None, C2: float | None = None) -> GaussianBoundReport:
    """Compare the sampled kernel with the Gaussian-type envelope.

    ``c0`` defaults to ``0.9 c`` with ``c`` the sampled ellipticity constant and
    ``omega`` is the matching Garding constant.  Grid points where ``|p|`` is
    below roundoff level are excluded from the pointwise ratio.  ``C2`` may be
    overridden to probe the sharpness of the decay rate.
    """
    _check_times(sym, s, t)
    if s == t:
        raise UsageError("need s < t")
    _require_elliptic(sym)
    cert = sym.certificate()
    if c0 is None:
        c0 = 0.9 * cert.c
    omega = garding_lower_bound(sym, c0, cert.c).omega
    C1, C2_default = gaussian_constants(sym.d, sym.m, c0)
    C2 = C2_default if C2 is None else float(C2)
    tau = t - s
    p = kernel(sym, s, t, grid)
    ap = np.abs(p.values)
    env = gaussian_envelope(grid, tau, sym.m, C1, C2, omega)
    floor = NOISE_FLOOR * ap.max()
    resolved = ap > floor
    ratio = np.divide(ap, env, out=np.zeros_like(ap), where=resolved & (env > 0))
    ratio[resolved & (env == 0)] = np.inf
    origin = tuple([grid.N // 2] * grid.d)
    sphere = 2 * math.pi ** (grid.d / 2) / gamma_fn(grid.d / 2)
    beta = sym.m / (sym.m - 1)
    integral = sphere * gamma_fn(grid.d / beta) / (beta * C2 ** (grid.d / beta))
    return GaussianBoundReport(
        C1=C1, C2=C2, omega=omega, c0=float(c0), tau=tau,
        max_ratio=float(ratio.max()), ratio_at_origin=float(ap[origin] / env[origin]),
        n_resolved=int(resolved.sum()), noise_floor=float(floor),
        l1_norm=float(lp_norm(p, 1.0)),
        l1_bound=float(C1 * math.exp(omega * tau) * integral),
        leakage=float(boundary_leakage(p)))


@dataclass(frozen=True)
class ExponentialBound:
    """``||U(t, s)||_{p -> p} <= M exp(omega (t - s))`` on the sampled pairs."""

    M: float
    omega: float
    n_pairs: int


def fit_exponential_bound(sym: NonAutonomousSymbol, grid: GridSpec, pairs,
                          c0: float | None = None) -> ExponentialBound:
    """Estimate ``(M, omega)``: Garding ``omega``, then ``M`` from kernel L^1 norms."""
    _require_elliptic(sym)
    cert = sym.certificate()
    c0 = 0.9 * cert.c if c0 is None else c0
    omega = max(garding_lower_bound(sym, c0, cert.c).omega, 0.0)
    M = 1.0
    pairs = list(pairs)
    for s, t in pairs:
        if t > s:
            M = max(M, operator_norm_bound(sym, s, t, grid) * math.exp(-omega * (t - s)))
    return ExponentialBound(float(M), float(omega), len(pairs))


# -- generator consistency -------------------------------------------------------

@dataclass(frozen=True)
class GeneratorResidual:
    residual: float
    flagged: bool
    scheme: str


def generator_consistency(sym: NonAutonomousSymbol, s: float, t: float, f: Field, h: float) -> GeneratorResidual:
    """Relative residual of ``d/dt U(t, s) f + A(t) U(t, s) f = 0`` by finite differences.

    Central differences are used unless a coefficient breakpoint lies within
    ``h`` of ``t``, in which case a one-sided second-order stencil on the side
    of the current piece is used and the result is flagged.
    """
    if not h > 0:
        raise UsageError("step h must be positive")
    _check_times(sym, s, t)
    grid = f.grid
    bps = sym.breakpoints[1:-1]
    near_left = np.any((bps > t - h) & (bps <= t))
    near_right = np.any((bps > t) & (bps < t + h))
    flagged = bool(near_left or near_right)

    def U(time):
        return propagate(sym, s, time, f).values

    if not flagged and t - h >= s and t + h <= sym.T:
        deriv = (U(t + h) - U(t - h)) / (2 * h)
        scheme = "central"
    elif (near_left or t - 2 * h < s) and t + 2 * h <= sym.T:
        deriv = (-3 * U(t) + 4 * U(t + h) - U(t + 2 * h)) / (2 * h)
        scheme = "forward"
    elif t - 2 * h >= s:
        deriv = (3 * U(t) - 4 * U(t - h) + U(t - 2 * h)) / (2 * h)
        scheme = "backward"
    else:
        raise UsageError("step h too large for the available time window")
    gen = eval_polynomial(sym.coefficients_at(t), grid.xi)
    Au = inverse_transform(Spectrum(grid, forward_transform(Field(grid, U(t))).values * gen)).values
    denom = float(np.sqrt(np.sum(np.abs(Au) ** 2)))
    if denom == 0:
        return GeneratorResidual(0.0, flagged, scheme)
    res = float(np.sqrt(np.sum(np.abs(deriv + Au) ** 2)) / denom)
    return GeneratorResidual(res, flagged, scheme)

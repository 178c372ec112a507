"""Time-dependent polynomial symbols with piecewise-constant coefficients.

A symbol of order ``m`` is ``a(t, xi) = sum_alpha a_alpha(t) (i xi)^alpha`` with
multi-indices ``|alpha| <= m``.  Each coefficient is piecewise constant on a
uniform partition of ``[0, T]``, so time integrals are exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DomainError, UsageError


@dataclass(frozen=True)
class CoefficientTrack:
    """Piecewise-constant complex function on ``[0, T]`` with equal pieces.

    Piece ``j`` covers ``[j T / n, (j + 1) T / n)``; the last piece is closed.
    """

    values: np.ndarray
    T: float

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=complex))
        if v.ndim != 1 or v.size == 0:
            raise UsageError("coefficient track needs a non-empty 1-d array of values")
        if not np.all(np.isfinite(v)):
            raise UsageError("coefficient track values must be finite")
        if not self.T > 0:
            raise UsageError(f"horizon T must be positive, got {self.T}")
        object.__setattr__(self, "values", v)
        # cumulative integral at the breakpoints
        cum = np.concatenate([[0.0], np.cumsum(v) * (self.T / v.size)])
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def constant(cls, value, T: float) -> "CoefficientTrack":
        return cls(np.array([value], dtype=complex), T)

    @property
    def n_pieces(self) -> int:
        return self.values.size

    @property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_pieces + 1)

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.T) or np.any(~np.isfinite(t)):
            raise DomainError(f"time outside [0, {self.T}]")
        return t

    def _piece(self, t):
        n = self.n_pieces
        return np.minimum((t * (n / self.T)).astype(np.int64), n - 1)

    def value_at(self, t):
        t = self._check(t)
        return self.values[self._piece(t)]

    def antiderivative(self, t):
        t = self._check(t)
        j = self._piece(t)
        return self._cum[j] + self.values[j] * (t - j * (self.T / self.n_pieces))

    def integral(self, s, t):
        """Exact ``int_s^t`` of the track."""
        return self.antiderivative(t) - self.antiderivative(s)

    def sup_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _as_index(alpha, d):
    a = tuple(int(k) for k in (alpha if np.ndim(alpha) else (alpha,)))
    if len(a) != d or any(k < 0 for k in a):
        raise UsageError(f"multi-index {alpha!r} invalid for dimension {d}")
    return a


@dataclass(frozen=True)
class NonAutonomousSymbol:
    """Polynomial symbol ``sum a_alpha(t) (i xi)^alpha`` of even order ``m``."""

    d: int
    m: int
    T: float
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise UsageError("dimension must be >= 1")
        if self.m < 2 or self.m % 2:
            raise UsageError(f"order m must be even and >= 2, got {self.m}")
        tracks = {}
        for alpha, tr in self.coeffs.items():
            a = _as_index(alpha, self.d)
            if sum(a) > self.m:
                raise UsageError(f"multi-index {a} exceeds order {self.m}")
            if not isinstance(tr, CoefficientTrack):
                tr = CoefficientTrack(np.atleast_1d(tr), self.T)
            if not math.isclose(tr.T, self.T):
                raise UsageError("all coefficient tracks must share the horizon T")
            tracks[a] = tr
        if not any(sum(a) == self.m and np.any(tr.values != 0) for a, tr in tracks.items()):
            raise UsageError("principal part is identically zero")
        object.__setattr__(self, "coeffs", tracks)

    @classmethod
    def from_xi_coefficients(cls, d, m, T, coeffs) -> "NonAutonomousSymbol":
        """Build from coefficients ``b_alpha(t)`` of ``sum b_alpha(t) xi^alpha``.

        Convenient for writing e.g. the heat symbol ``|xi|^2`` directly; the
        conversion is ``a_alpha = (-i)^|alpha| b_alpha``.
        """
        out = {}
        for alpha, vals in coeffs.items():
            a = _as_index(alpha, d)
            v = np.atleast_1d(np.asarray(vals, dtype=complex)) * (-1j) ** sum(a)
            out[a] = CoefficientTrack(v, T)
        return cls(d, m, T, out)

    @property
    def breakpoints(self) -> np.ndarray:
        pts = np.unique(np.concatenate([tr.breakpoints for tr in self.coeffs.values()]))
        return pts

    def piece_midpoints(self) -> np.ndarray:
        """One time per interval on which every coefficient is constant."""
        b = self.breakpoints
        return 0.5 * (b[:-1] + b[1:])

    def certificate(self) -> "EllipticityCertificate":
        """Default-resolution ellipticity certificate, computed once per instance."""
        cert = self.__dict__.get("_certificate")
        if cert is None:
            cert = check_uniform_ellipticity(self)
            object.__setattr__(self, "_certificate", cert)
        return cert

    def principal(self) -> dict:
        return {a: tr for a, tr in self.coeffs.items() if sum(a) == self.m}

    def coefficients_at(self, t) -> dict:
        return {a: tr.value_at(t) for a, tr in self.coeffs.items()}

    def integrated_coefficients(self, s, t) -> dict:
        return {a: tr.integral(s, t) for a, tr in self.coeffs.items()}


def xi_components(xi, d: int) -> tuple:
    """Split frequencies into per-axis arrays.

    Accepts a tuple of ``d`` arrays, an array with trailing axis ``d``, or
    (for ``d = 1``) any array of scalars.
    """
    if isinstance(xi, tuple):
        if len(xi) != d:
            raise UsageError(f"expected {d} frequency components")
        return tuple(np.asarray(c, dtype=float) for c in xi)
    xi = np.asarray(xi, dtype=float)
    if d == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
        return (xi,)
    if xi.ndim == 0 or xi.shape[-1] != d:
        raise UsageError(f"frequency array must have trailing axis of length {d}")
    return tuple(np.moveaxis(xi, -1, 0))


def eval_polynomial(coeffs: dict, comps: tuple):
    """``sum_alpha c_alpha (i xi)^alpha`` with ``c_alpha`` scalars or broadcastable arrays."""
    out = 0.0
    for alpha, c in coeffs.items():
        k = sum(alpha)
        mono = (1j) ** k
        for ax, e in enumerate(alpha):
            if e:
                mono = mono * comps[ax] ** e
        out = out + c * mono
    return out * np.ones(np.broadcast(*comps).shape)


def eval_symbol(sym: NonAutonomousSymbol, t, xi):
    """Value ``a(t, xi)``; ``t`` must be a scalar time."""
    return eval_polynomial(sym.coefficients_at(float(t)), xi_components(xi, sym.d))


def principal_symbol(sym: NonAutonomousSymbol, t, xi):
    comps = xi_components(xi, sym.d)
    return eval_polynomial({a: tr.value_at(float(t)) for a, tr in sym.principal().items()}, comps)


def sphere_directions(d: int, n: int = 512) -> np.ndarray:
    """Deterministic directions on the unit sphere, shape ``(k, d)``."""
    if d == 1:
        return np.array([[-1.0], [1.0]])
    if d == 2:
        ang = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    if d == 3:
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        phi = np.pi * (1 + 5 ** 0.5) * i
        rho = np.sqrt(1 - z * z)
        return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)
    rng = np.random.default_rng(d)
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass(frozen=True)
class EllipticityCertificate:
    """Sampled lower bound ``c`` of ``Re a_m(t, xi)`` on the unit sphere."""

    c: float
    elliptic: bool
    n_directions: int
    n_times: int
    worst_time: float
    worst_direction: tuple


def check_uniform_ellipticity(sym: NonAutonomousSymbol, xi_samples=None, t_samples=None,
                              n_directions: int = 512) -> EllipticityCertificate:
    """Estimate ``c = inf Re a_m(t, xi)`` over ``|xi| = 1``.

    By default times are the piece midpoints, which is exact for piecewise
    constant coefficients, and directions are a deterministic sphere lattice.
    Supplied frequency samples are projected to the unit sphere.
    """
    if xi_samples is None:
        dirs = sphere_directions(sym.d, n_directions)
    else:
        dirs = np.asarray(xi_samples, dtype=float).reshape(-1, sym.d)
        if dirs.shape[0] == 0:
            raise UsageError("empty frequency sample set")
        nrm = np.linalg.norm(dirs, axis=1, keepdims=True)
        if np.any(nrm == 0):
            raise UsageError("frequency samples must be nonzero")
        dirs = dirs / nrm
    times = sym.piece_midpoints() if t_samples is None else np.atleast_1d(np.asarray(t_samples, float))
    if times.size == 0:
        raise UsageError("empty time sample set")
    best = np.inf
    arg = (None, None)
    for t in times:
        vals = principal_symbol(sym, t, dirs).real
        j = int(np.argmin(vals))
        if vals[j] < best:
            best = float(vals[j])
            arg = (float(t), tuple(float(v) for v in dirs[j]))
    return EllipticityCertificate(best, best > 0, dirs.shape[0], times.size, arg[0], arg[1])


@dataclass(frozen=True)
class GardingBound:
    """``Re a(t, xi) >= c0 |xi|^m - omega`` for all sampled ``(t, xi)``."""

    omega: float
    c0: float
    c: float
    radius: float
    argmax_time: float
    argmax_xi: tuple


def _real_gap_poly(coeffs: dict, m: int, c0: float):
    """``xi -> c0 |xi|^m - Re a(xi)`` for fixed coefficient values, vectorised over ``(..., d)``."""
    def f(xi):
        comps = tuple(np.moveaxis(np.asarray(xi, float), -1, 0))
        r2 = sum(c * c for c in comps)
        return c0 * r2 ** (m // 2) - eval_polynomial(coeffs, comps).real
    return f


def _largest_positive_root(poly_desc) -> float:
    """Largest real positive root of a polynomial (descending coefficients), or 0."""
    p = np.trim_zeros(np.asarray(poly_desc, float), "f")
    if p.size <= 1:
        return 0.0
    r = np.roots(p)
    r = r[(np.abs(r.imag) <= 1e-9 * np.maximum(1, np.abs(r.real))) & (r.real > 0)].real
    return float(r.max()) if r.size else 0.0


def garding_lower_bound(sym: NonAutonomousSymbol, c0: float, c: float | None = None,
                        n_radial: int = 400, n_directions: int = 256) -> GardingBound:
    """Smallest ``omega`` with ``Re a(t, xi) >= c0 |xi|^m - omega``.

    The sup of ``c0 |xi|^m - Re a`` is sampled on a polar lattice inside a ball
    of radius ``R`` and polished by local optimisation.  Outside the ball a
    rigorous tail bound from ``c |xi|^m - sum sup|a_alpha| |xi|^|alpha|`` is used,
    with ``R`` chosen large enough that the tail never dominates.
    """
    if c is None:
        c = sym.certificate().c
    if not c > 0:
        raise UsageError("symbol is not uniformly elliptic")
    if not 0 < c0 < c:
        raise UsageError(f"c0 must lie in (0, c) = (0, {c}), got {c0}")
    m, d = sym.m, sym.d
    lower = np.zeros(m + 1)
    for a, tr in sym.coeffs.items():
        if sum(a) < m:
            lower[sum(a)] += tr.sup_abs()
    # g(rho) = (c - c0) rho^m - sum_k S_k rho^k  (ascending -> descending)
    g_asc = -lower.copy()
    g_asc[m] += c - c0
    g_desc = g_asc[::-1]
    gp_desc = np.polyder(g_desc)

    def g(rho):
        return float(np.polyval(g_desc, rho))

    R = max(_largest_positive_root(g_desc), _largest_positive_root(gp_desc), 1.0)

    times = sym.piece_midpoints()
    dirs = sphere_directions(d, n_directions)

    def sample(radius):
        best, arg = -np.inf, (0.0, (0.0,) * d)
        radii = np.linspace(0.0, radius, n_radial + 1)
        pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, d)
        for t in times:
            f = _real_gap_poly(sym.coefficients_at(t), m, c0)
            vals = f(pts)
            order = np.argsort(vals)[::-1][:4]
            for j in order:
                res = optimize.minimize(lambda z: -f(z), pts[j], method="BFGS",
                                        options={"gtol": 1e-12})
                cand = [(float(vals[j]), pts[j])]
                if np.linalg.norm(res.x) <= radius and np.isfinite(res.fun):
                    cand.append((float(-res.fun), res.x))
                for v, z in cand:
                    if v > best:
                        best, arg = v, (float(t), tuple(float(u) for u in np.ravel(z)))
        return best, arg

    best, arg = sample(R)
    tail = -g(R)
    if tail > best:
        # Enlarge the ball until the tail bound falls below the sampled max.
        R2 = _largest_positive_root(g_desc + np.eye(m + 1)[-1] * best)
        R = max(R, R2)
        best, arg = sample(R)
    omega = max(best, -g(R))
    return GardingBound(float(omega), float(c0), float(c), float(R), arg[0], arg[1])


def all_multi_indices(d: int, max_order: int):
    """Multi-indices of length ``d`` with ``|alpha| <= max_order``."""
    return [a for a in itertools.product(range(max_order + 1), repeat=d) if sum(a) <= max_order]

"""Non-autonomous Ornstein-Uhlenbeck systems.

The operator ``1/2 tr(A A^T D^2) - <B x, D> - 1/2 tr B`` with time-dependent
matrices ``A(t)``, ``B(t)`` generates, under a Kalman-type rank condition, the
evolution family

    U(t, s) f = F^{-1}( exp(1/2 int_s^t tr B) exp(-q_{t,s}/2) (F f)(R(t, s)^T .) )

where ``R`` is the transition matrix of ``x' = B(t) x`` and ``q_{t,s}`` a
Gram-type quadratic form.  This module computes ``R``, ``q``, the rank
condition, the propagator on a periodic grid, and the ``L^p`` bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.linalg
from scipy import integrate

from .errors import AliasingError, DomainError, IntegrationError, UsageError
from .spectral import (Field, GridSpec, Spectrum, forward_transform, inverse_transform, lp_norm,
                       project_smooth, projector_kernel_l1)


# -- matrix tracks ---------------------------------------------------------------

def _fd_weights(n: int, offsets: np.ndarray) -> np.ndarray:
    """Finite-difference weights for the ``n``-th derivative at 0 on the given offsets."""
    k = offsets.size
    V = np.vander(offsets, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[n] = math.factorial(n)
    return np.linalg.solve(V, rhs)


@dataclass(frozen=True)
class MatrixTrack:
    """Matrix-valued function of time with derivatives of every order.

    ``kind`` is one of ``constant``, ``polynomial`` (``coeffs[k]`` multiplies
    ``t^k``), ``trig`` (``M0 + Mc cos(w t) + Ms sin(w t)``) or ``callable``.
    Tagged kinds differentiate exactly; callables use central differences of
    fourth order and must accept times slightly outside ``[0, T]``.
    """

    kind: str
    d: int
    data: tuple
    T: float = 1.0

    @classmethod
    def constant(cls, M) -> "MatrixTrack":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        _square(M)
        return cls("constant", M.shape[0], (M,))

    @classmethod
    def polynomial(cls, coeffs) -> "MatrixTrack":
        c = np.asarray(coeffs, dtype=float)
        if c.ndim != 3:
            raise UsageError("polynomial coefficients must have shape (deg + 1, d, d)")
        _square(c[0])
        return cls("polynomial", c.shape[1], (c,))

    @classmethod
    def trig(cls, M0, Mc, Ms, freq: float) -> "MatrixTrack":
        mats = tuple(np.atleast_2d(np.asarray(m, dtype=float)) for m in (M0, Mc, Ms))
        _square(mats[0])
        return cls("trig", mats[0].shape[0], mats + (float(freq),))

    @classmethod
    def from_callable(cls, fn: Callable[[float], np.ndarray], d: int, T: float = 1.0) -> "MatrixTrack":
        return cls("callable", int(d), (fn,), float(T))

    @property
    def is_constant(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "polynomial":
            return not np.any(self.data[0][1:])
        if self.kind == "trig":
            return not (np.any(self.data[1]) or np.any(self.data[2])) or self.data[3] == 0
        return False

    def is_zero(self) -> bool:
        if self.kind == "constant":
            return not np.any(self.data[0])
        if self.kind == "polynomial":
            return not np.any(self.data[0])
        if self.kind == "trig":
            return not any(np.any(m) for m in self.data[:3])
        return False

    def value(self, t: float) -> np.ndarray:
        return self.derivative(t, 0)

    def derivative(self, t: float, n: int) -> np.ndarray:
        """``n``-th time derivative at ``t``."""
        if self.kind == "constant":
            return self.data[0].copy() if n == 0 else np.zeros((self.d, self.d))
        if self.kind == "polynomial":
            c = self.data[0]
            if n >= c.shape[0]:
                return np.zeros((self.d, self.d))
            dc = np.polynomial.polynomial.polyder(c, n, axis=0) if n else c
            return np.polynomial.polynomial.polyval(t, dc)
        if self.kind == "trig":
            M0, Mc, Ms, w = self.data
            # d^n cos(wt) = w^n cos(wt + n pi/2), likewise for sin
            ph = n * math.pi / 2
            out = w ** n * (Mc * math.cos(w * t + ph) + Ms * math.sin(w * t + ph))
            return out + (M0 if n == 0 else 0.0)
        fn = self.data[0]
        if n == 0:
            return np.asarray(fn(t), dtype=float)
        h = max(1e-4, np.finfo(float).eps ** (1.0 / (n + 4))) * self.T
        p = (n + 1) // 2 + 1
        offs = np.arange(-p, p + 1, dtype=float)
        w = _fd_weights(n, offs)
        return sum(wi * np.asarray(fn(t + o * h), dtype=float) for wi, o in zip(w, offs)) / h ** n

    def trace_integral(self, s: float, t: float) -> float:
        """Exact (tagged) or adaptive-quadrature ``int_s^t tr M``."""
        if self.kind == "constant":
            return float(np.trace(self.data[0]) * (t - s))
        if self.kind == "polynomial":
            tr = np.trace(self.data[0], axis1=1, axis2=2)
            P = np.polynomial.polynomial.polyint(tr)
            return float(np.polynomial.polynomial.polyval(t, P) - np.polynomial.polynomial.polyval(s, P))
        if self.kind == "trig":
            M0, Mc, Ms, w = self.data
            val = np.trace(M0) * (t - s)
            if w != 0:
                val += np.trace(Mc) * (math.sin(w * t) - math.sin(w * s)) / w
                val -= np.trace(Ms) * (math.cos(w * t) - math.cos(w * s)) / w
            return float(val)
        val, _ = integrate.quad(lambda r: float(np.trace(self.value(r))), s, t, epsabs=1e-14, epsrel=1e-13,
                                limit=200)
        return float(val)


def _square(M):
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise UsageError("matrix tracks must be square")


@dataclass(frozen=True)
class OUSystem:
    """Diffusion matrix track ``A``, drift matrix track ``B`` on ``[0, T]``.

    ``eps_window`` optionally restricts propagation to ``t <= eps_window``,
    the small-time window in which the quadratic form must be definite.
    """

    A: MatrixTrack
    B: MatrixTrack
    T: float
    eps_window: float | None = None

    def __post_init__(self):
        if self.A.d != self.B.d:
            raise UsageError("A and B must have the same dimension")
        if not self.T > 0:
            raise UsageError("horizon T must be positive")

    @property
    def d(self) -> int:
        return self.A.d

    @classmethod
    def kolmogorov(cls, n: int = 1, T: float = 1.0, eps_window: float | None = None) -> "OUSystem":
        """State ``(x, v)`` in ``R^n x R^n`` with ``A = [[0, 0], [0, sqrt2 Id]]``, ``B = [[0, Id], [0, 0]]``."""
        Z, I = np.zeros((n, n)), np.eye(n)
        A = np.block([[Z, Z], [Z, math.sqrt(2) * I]])
        B = np.block([[Z, I], [Z, Z]])
        return cls(MatrixTrack.constant(A), MatrixTrack.constant(B), float(T), eps_window)


def _check(sys, *times):
    for t in times:
        if not 0 <= t <= sys.T:
            raise DomainError(f"time {t} outside [0, {sys.T}]")


_RTOL, _ATOL = 1e-12, 1e-14


def solve_transition(sys: OUSystem, s: float, t: float) -> np.ndarray:
    """``R(t, s)`` from ``d/dt R = B(t) R``, ``R(s, s) = Id``; either time order is allowed."""
    _check(sys, s, t)
    d = sys.d
    if s == t:
        return np.eye(d)
    if sys.B.is_zero():
        return np.eye(d)

    def rhs(r, y):
        return (sys.B.value(r) @ y.reshape(d, d)).ravel()

    sol = integrate.solve_ivp(rhs, (s, t), np.eye(d).ravel(), method="DOP853", rtol=_RTOL, atol=_ATOL)
    if not sol.success:
        raise IntegrationError(f"transition solve failed: {sol.message}")
    return sol.y[:, -1].reshape(d, d)


def trace_integral(sys: OUSystem, s: float, t: float) -> float:
    return sys.B.trace_integral(s, t)


def liouville_check(sys: OUSystem, s: float, t: float) -> float:
    """``|det R(t, s) - exp(int tr B)| / exp(int tr B)``."""
    R = solve_transition(sys, s, t)
    ref = math.exp(trace_integral(sys, s, t))
    return abs(float(np.linalg.det(R)) - ref) / ref


def gram_matrix(sys: OUSystem, s: float, t: float) -> np.ndarray:
    """``Q_{t,s} = int_s^t R(s, r) A(r) A(r)^T R(s, r)^T dr`` via an augmented ODE."""
    _check(sys, s, t)
    if s > t:
        raise UsageError("need s <= t")
    d = sys.d
    if s == t or sys.A.is_zero():
        return np.zeros((d, d))

    def rhs(r, y):
        Phi = y[: d * d].reshape(d, d)
        Ar = sys.A.value(r)
        dPhi = -Phi @ sys.B.value(r)
        PA = Phi @ Ar
        return np.concatenate([dPhi.ravel(), (PA @ PA.T).ravel()])

    y0 = np.concatenate([np.eye(d).ravel(), np.zeros(d * d)])
    sol = integrate.solve_ivp(rhs, (s, t), y0, method="DOP853", rtol=_RTOL, atol=_ATOL)
    if not sol.success:
        raise IntegrationError(f"Gram solve failed: {sol.message}")
    Q = sol.y[d * d:, -1].reshape(d, d)
    return 0.5 * (Q + Q.T)


def quad_form_matrix(sys: OUSystem, s: float, t: float) -> np.ndarray:
    """Symmetric ``S`` with ``q_{t,s}(xi) = xi^T S xi``, i.e. ``S = R(t,s) Q_{t,s} R(t,s)^T``."""
    R = solve_transition(sys, s, t)
    S = R @ gram_matrix(sys, s, t) @ R.T
    return 0.5 * (S + S.T)


def quad_form(sys: OUSystem, s: float, t: float, xi) -> np.ndarray:
    """``q_{t,s}(xi)`` for ``xi`` with trailing axis ``d``."""
    S = quad_form_matrix(sys, s, t)
    xi = np.asarray(xi, dtype=float)
    return np.einsum("...i,ij,...j->...", xi, S, xi)


def kolmogorov_form(tau: float, xi, eta) -> np.ndarray:
    """Closed form ``2 tau |eta|^2 + 2 tau^2 eta.xi + 2/3 tau^3 |xi|^2``."""
    xi, eta = np.asarray(xi, float), np.asarray(eta, float)
    return (2 * tau * np.sum(eta * eta, -1) + 2 * tau ** 2 * np.sum(eta * xi, -1)
            + (2.0 / 3.0) * tau ** 3 * np.sum(xi * xi, -1))


# -- rank condition ---------------------------------------------------------------

@dataclass(frozen=True)
class KalmanResult:
    """Outcome of the generalised Kalman rank test.

    ``status`` is ``satisfied``, ``fails`` (provably, e.g. ``A = 0`` or an
    autonomous system after ``d - 1`` steps) or ``undecided`` (rank not full
    at ``k_max`` but could still fill later).
    """

    rank: int
    status: str
    k_used: int
    columns: np.ndarray
    singular_values: np.ndarray

    @property
    def satisfied(self) -> bool:
        return self.status == "satisfied"


def kalman_matrices(sys: OUSystem, T: float, k_max: int) -> list:
    """``Atilde_k(T)`` for ``k = 0..k_max``.

    With ``Atilde_0(t) = A(T - t)`` and ``Atilde_{k+1} = Atilde_k' + B(T - t) Atilde_k``,
    the value at ``t = T`` needs derivatives of ``A`` and ``B`` at time 0 only;
    they are combined with the Leibniz rule.
    """
    if not 0 < T <= sys.T:
        raise DomainError("Kalman time must lie in (0, T]")

    @lru_cache(maxsize=None)
    def dA(n):
        return (-1) ** n * sys.A.derivative(0.0, n)

    @lru_cache(maxsize=None)
    def dB(n):
        return (-1) ** n * sys.B.derivative(0.0, n)

    @lru_cache(maxsize=None)
    def D(k, n):
        # n-th derivative of Atilde_k at t = T
        if k == 0:
            return dA(n)
        out = D(k - 1, n + 1)
        for j in range(n + 1):
            out = out + math.comb(n, j) * dB(j) @ D(k - 1, n - j)
        return out

    return [D(k, 0) for k in range(k_max + 1)]


def kalman_generalized(sys: OUSystem, T: float | None = None, k_max: int | None = None) -> KalmanResult:
    """Accumulate the columns of ``Atilde_k(T)`` until they span ``R^d``."""
    T = sys.T if T is None else T
    d = sys.d
    k_max = 2 * d if k_max is None else int(k_max)
    if k_max < 0:
        raise UsageError("k_max must be nonnegative")
    mats = kalman_matrices(sys, T, k_max)
    cols = np.zeros((d, 0))
    rank, sv = 0, np.zeros(0)
    for k, Mk in enumerate(mats):
        cols = np.concatenate([cols, Mk], axis=1)
        sv = np.linalg.svd(cols, compute_uv=False)
        tol = d * np.finfo(float).eps * (sv[0] if sv.size else 0.0) * 1e3
        rank = int(np.sum(sv > tol)) if sv.size and sv[0] > 0 else 0
        if rank == d:
            return KalmanResult(rank, "satisfied", k, cols, sv)
    autonomous = sys.A.is_constant and sys.B.is_constant
    if sys.A.is_zero() or (autonomous and k_max >= d - 1):
        status = "fails"
    else:
        status = "undecided"
    return KalmanResult(rank, status, k_max, cols, sv)


# -- sheared transforms and the propagator ------------------------------------------

def _axis_transform(vals, grid: GridSpec, axis: int, scale: float, shift):
    """``sum_j h g_j exp(-i x_j (scale xi_k + shift))`` along one axis.

    ``shift`` broadcasts against ``vals`` with the transformed axis of length 1.
    """
    x = grid.x1
    shape = [1] * vals.ndim
    shape[axis] = grid.N
    xs = x.reshape(shape)
    if shift is not None:
        vals = vals * np.exp(-1j * xs * shift)
    if scale == 1.0:
        signs = np.where(grid.k1.astype(np.int64) % 2 == 0, 1.0, -1.0)
        out = np.fft.fft(vals, axis=axis) * grid.h
        return out * signs.reshape(shape)
    W = grid.h * np.exp(-1j * np.outer(scale * grid.xi1, x))
    moved = np.moveaxis(vals, axis, -1)
    return np.moveaxis(moved @ W.T, -1, axis)


def _triangular_shear(vals, grid: GridSpec, M: np.ndarray, lower: bool):
    """``(F g)(M xi)`` on the lattice for triangular ``M``, one axis at a time."""
    d = grid.d
    order = range(d) if lower else range(d - 1, -1, -1)
    done = []
    out = vals
    for i in order:
        axis = out.ndim - d + i
        shift = None
        if done:
            shift = sum(M[i, j] * _bcast(grid.xi1, out.ndim, out.ndim - d + j) for j in done)
        out = _axis_transform(out, grid, axis, float(M[i, i]), shift)
        done.append(i)
    return out


def _bcast(v, ndim, axis):
    shape = [1] * ndim
    shape[axis] = v.size
    return v.reshape(shape)


def _direct_shear(vals, grid: GridSpec, M: np.ndarray, chunk: int = 256):
    """Direct summation ``h^d sum_j g_j exp(-i x_j . M xi_k)``; exact but ``O(N^{2d})``."""
    d = grid.d
    pts = grid.points()
    targets = np.stack([c.ravel() for c in grid.xi], axis=-1) @ M.T
    batch = vals.shape[: vals.ndim - d]
    flat = vals.reshape(-1, pts.shape[0])
    out = np.empty((flat.shape[0], targets.shape[0]), dtype=complex)
    for a in range(0, targets.shape[0], chunk):
        E = np.exp(-1j * (targets[a:a + chunk] @ pts.T))
        out[:, a:a + chunk] = flat @ E.T
    return (out * grid.cell_volume).reshape(batch + grid.shape)


def _outside_box(grid: GridSpec, M: np.ndarray) -> np.ndarray:
    """Lattice points whose image ``M xi`` leaves the representable frequency box."""
    nyq = grid.nyquist * (1 + 1e-12)
    out = np.zeros(grid.shape, dtype=bool)
    for i in range(grid.d):
        zi = sum(M[i, j] * grid.xi[j] for j in range(grid.d))
        out |= np.abs(zi) > nyq
    return out


@dataclass(frozen=True)
class ShearResult:
    values: np.ndarray
    spill: float
    method: str


def sheared_spectrum(f: Field, M, damping: np.ndarray | None = None, method: str = "auto") -> ShearResult:
    """Evaluate ``(F f)(M xi)`` on the dual lattice.

    ``method``: ``auto`` picks the triangular sweep when ``M`` is triangular and
    otherwise an LU factorisation into two triangular sweeps; ``direct`` is
    plain summation; ``interp`` uses two-fold oversampling and cubic
    interpolation (approximate, fast).  Values at points mapped outside the
    frequency box are set to zero; the relative energy so discarded, weighted
    by ``damping``, is returned as ``spill``.
    """
    g = f.grid
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (g.d, g.d):
        raise UsageError("shear matrix has the wrong shape")
    if abs(np.linalg.det(M)) == 0:
        raise UsageError("shear matrix is singular")
    w = np.ones(g.shape) if damping is None else damping
    vals = f.values.astype(complex)
    spill_e = 0.0
    if method == "auto":
        if np.allclose(M, np.tril(M), rtol=0, atol=0):
            G, used = _triangular_shear(vals, g, M, True), "triangular"
        elif np.allclose(M, np.triu(M), rtol=0, atol=0):
            G, used = _triangular_shear(vals, g, M, False), "triangular"
        else:
            P, L, U = scipy.linalg.lu(M)
            # (F f)(P L U xi) = (F (f o P))(L U xi); the first sweep realises L on the lattice
            lead = vals.ndim - g.d
            g0 = np.transpose(vals, list(range(lead)) + [lead + p for p in _perm_axes(P)])
            H1 = _triangular_shear(g0, g, L, True)
            mask1 = _outside_box(g, L)
            spill_e += float(np.sum(np.abs(H1[..., mask1]) ** 2))
            H1[..., mask1] = 0
            g1 = inverse_transform(Spectrum(g, H1)).values
            G, used = _triangular_shear(g1, g, U, False), "lu"
    elif method == "direct":
        G, used = _direct_shear(vals, g, M), "direct"
    elif method == "interp":
        G, used = _interp_shear(vals, g, M), "interp"
    else:
        raise UsageError(f"unknown shear method {method!r}")
    mask = _outside_box(g, M)
    spill_e += float(np.sum(np.abs(G[..., mask]) ** 2 * w[mask]))
    G = np.where(mask, 0.0, G)
    # input content that would land outside the output lattice
    Minv = np.linalg.inv(M)
    F = forward_transform(Field(g, vals)).values
    lost = _outside_box(g, Minv)
    trunc_e = float(np.sum(np.abs(F[..., lost]) ** 2)) / abs(np.linalg.det(M))
    kept_e = float(np.sum(np.abs(G) ** 2 * w))
    total = kept_e + spill_e + trunc_e
    spill = math.sqrt((spill_e + trunc_e) / total) if total > 0 else 0.0
    return ShearResult(G, spill, used)


def _perm_axes(P):
    # (f o P)(y) = f(P y): axis i of the result reads axis perm[i] of f
    return [int(np.argmax(P[:, i])) for i in range(P.shape[0])]


def _interp_shear(vals, g: GridSpec, M):
    from scipy.ndimage import map_coordinates
    big = GridSpec(g.d, 2 * g.X, 2 * g.N)
    lead = vals.ndim - g.d
    pad = [(0, 0)] * lead + [(g.N // 2, g.N // 2)] * g.d
    F = forward_transform(Field(big, np.pad(vals, pad))).values
    F = np.fft.fftshift(F, axes=big.axes)
    coords = []
    for i in range(g.d):
        zi = sum(M[i, j] * g.xi[j] for j in range(g.d))
        coords.append(zi / big.dxi + big.N // 2)
    coords = np.stack(coords)
    flat = F.reshape((-1,) + big.shape)
    out = np.empty((flat.shape[0],) + g.shape, dtype=complex)
    for b in range(flat.shape[0]):
        re = map_coordinates(flat[b].real, coords, order=3, mode="constant", cval=0.0)
        im = map_coordinates(flat[b].imag, coords, order=3, mode="constant", cval=0.0)
        out[b] = re + 1j * im
    return out.reshape(vals.shape[:lead] + g.shape)


def apply_gaussian_shear(f: Field, Q, Lam, method: str = "auto", spill_tol: float = 1e-8) -> Field:
    """``F^{-1}(exp(-q/2) (F f)(Lam^T .))`` with ``q(xi) = <Q Lam^T xi, Lam^T xi>``."""
    g = f.grid
    Q = np.atleast_2d(np.asarray(Q, float))
    Lam = np.atleast_2d(np.asarray(Lam, float))
    S = Lam @ Q @ Lam.T
    xi = np.stack(g.xi, axis=-1)
    q = np.einsum("...i,ij,...j->...", xi, 0.5 * (S + S.T), xi)
    damp = np.exp(-0.5 * q)
    res = sheared_spectrum(f, Lam.T, damping=damp ** 2, method=method)
    if res.spill > spill_tol:
        raise AliasingError(f"spectral spill {res.spill:.2e} exceeds {spill_tol:.0e}", res.spill)
    return inverse_transform(Spectrum(g, res.values * damp))


def lemma_bound(Lam, p: float) -> float:
    """``|det Lam|^{-1/p'}`` with ``1/p + 1/p' = 1``."""
    inv_pp = 1.0 - (0.0 if math.isinf(p) else 1.0 / p)
    return float(abs(np.linalg.det(np.atleast_2d(Lam))) ** (-inv_pp))


@dataclass(frozen=True)
class OUStep:
    R: np.ndarray
    S: np.ndarray
    trace_integral: float


def ou_step(sys: OUSystem, s: float, t: float) -> OUStep:
    _check(sys, s, t)
    if s > t:
        raise UsageError("need s <= t")
    if sys.eps_window is not None and t > sys.eps_window:
        raise UsageError(f"t = {t} exceeds the positive-definiteness window {sys.eps_window}")
    R = solve_transition(sys, s, t)
    S = R @ gram_matrix(sys, s, t) @ R.T
    S = 0.5 * (S + S.T)
    if t > s:
        ev = np.linalg.eigvalsh(S)
        if ev[0] <= 1e-14 * max(ev[-1], 1e-300):
            raise UsageError(f"quadratic form not positive definite on [{s}, {t}] (min eigenvalue {ev[0]:.3g})")
    return OUStep(R, S, trace_integral(sys, s, t))


def ou_propagate(sys: OUSystem, s: float, t: float, f: Field, spill_tol: float = 1e-8,
                 method: str = "auto") -> Field:
    """``U(t, s) f`` on the periodic grid; raises :class:`AliasingError` if the shear spills."""
    if f.grid.d != sys.d:
        raise UsageError("grid and system dimensions differ")
    if s == t:
        _check(sys, s, t)
        return Field(f.grid, np.array(f.values, copy=True))
    st = ou_step(sys, s, t)
    g = f.grid
    xi = np.stack(g.xi, axis=-1)
    q = np.einsum("...i,ij,...j->...", xi, st.S, xi)
    damp = np.exp(0.5 * st.trace_integral - 0.5 * q)
    res = sheared_spectrum(f, st.R.T, damping=np.exp(-q), method=method)
    if res.spill > spill_tol:
        raise AliasingError(f"spectral spill {res.spill:.2e} exceeds {spill_tol:.0e}", res.spill)
    return inverse_transform(Spectrum(g, res.values * damp))


def ou_norm_bound(sys: OUSystem, s: float, t: float, p: float) -> float:
    """``exp((1/2 - 1/p') int_s^t tr B)``."""
    inv_pp = 1.0 - (0.0 if math.isinf(p) else 1.0 / p)
    return math.exp((0.5 - inv_pp) * trace_integral(sys, s, t))


@dataclass(frozen=True)
class NormBoundReport:
    bound: float
    ratios: np.ndarray
    max_ratio_over_bound: float

    @property
    def passed(self) -> bool:
        return self.max_ratio_over_bound <= 1 + 1e-10


def norm_bound_check(sys: OUSystem, s: float, t: float, p: float, fields: Field, **kw) -> NormBoundReport:
    """Check ``||U(t, s) f||_p <= exp((1/2 - 1/p') int tr B) ||f||_p`` on sampled fields."""
    u = ou_propagate(sys, s, t, fields, **kw)
    ratios = np.atleast_1d(lp_norm(u, p) / lp_norm(fields, p))
    b = ou_norm_bound(sys, s, t, p)
    return NormBoundReport(b, ratios, float(np.max(ratios) / b))


# -- dissipation ------------------------------------------------------------------

def l2_high_frequency_norm(sys: OUSystem, s: float, t: float, lam: float) -> float:
    """Exact ``||(Id - Q_{lam/(2 sqrt d)}) U(t, s)||_{L^2 -> L^2}`` for the sharp cube projector.

    The operator is a sheared Gaussian multiplier, so its norm is
    ``exp(1/2 int tr B) |det R|^{-1/2} exp(-min q / 2)`` with the minimum of
    ``q`` over the complement of the cube ``[-a, a]^d``, ``a = lam / (2 sqrt d)``,
    equal to ``a^2 min_i 1 / (S^{-1})_{ii}``.
    """
    st = ou_step(sys, s, t)
    a = lam / (2 * math.sqrt(sys.d))
    Sinv = np.linalg.inv(st.S)
    qmin = a * a * float(np.min(1.0 / np.diag(Sinv)))
    det = abs(float(np.linalg.det(st.R)))
    return math.exp(0.5 * st.trace_integral - 0.5 * math.log(det) - 0.5 * qmin)


@dataclass(frozen=True)
class OUDissipationFit:
    """``||(Id - Q) U(t, s)||_2 <= c0 exp(-c1 (t - s)^m1 lam^2)`` on the samples."""

    c0: float
    c1: float
    m1: float
    samples: np.ndarray


def fit_ou_l2_dissipation(sys: OUSystem, lambdas, gaps, starts=(0.0,)) -> OUDissipationFit:
    """Fit ``(c0, c1, m1)`` from exact sampled L^2 norms; ``c0`` is inflated to dominate."""
    rows = []
    for lam in lambdas:
        for s in starts:
            for tau in gaps:
                if s + tau <= sys.T and tau > 0:
                    rows.append((lam, s, tau, math.log(l2_high_frequency_norm(sys, s, s + tau, lam))))
    S = np.array(rows)
    if S.shape[0] < 2:
        raise UsageError("not enough samples for the dissipation fit")
    lam, _, tau, lr = S.T
    ok = lr < 0
    if ok.sum() < 2 or np.ptp(np.log(tau[ok])) == 0:
        raise UsageError("need decaying samples with at least two distinct gaps")
    A = np.stack([np.ones(ok.sum()), np.log(tau[ok])], axis=1)
    y = np.log(-lr[ok]) - 2 * np.log(lam[ok])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    c1, m1 = float(math.exp(coef[0])), float(coef[1])
    # cap the rate by the smallest observed one so that c0 stays moderate
    c1 = min(c1, float(np.min(-lr[ok] / (tau[ok] ** m1 * lam[ok] ** 2))))
    c0 = max(1.0, float(np.exp(np.max(lr + c1 * tau ** m1 * lam ** 2))))
    return OUDissipationFit(c0, c1, m1, S)


def _pq_factors(sys: OUSystem, p: float, n_grid: int = 9):
    K = 1.0 + projector_kernel_l1(sys.d)
    ts = np.linspace(0.0, sys.T, n_grid)
    worst_m, worst_n = 0.0, 0.0
    for i, a in enumerate(ts):
        for b in ts[i:]:
            e = math.exp((1 / p - 0.5) * trace_integral(sys, a, b))
            worst_m = max(worst_m, K ** (2 / p - 1) * e)
            worst_n = max(worst_n, K ** (1 - 2 / p) * e)
    return worst_m, worst_n


def ou_dissipation_constants(sys: OUSystem, fit: OUDissipationFit | None, p: float, lam: float,
                             s: float, t: float) -> float:
    """L^p dissipation bound interpolated from the L^2 fit.

    ``M_p (c0 e^{-c1 tau^m1 lam^2})^{2 - 2/p}`` for ``p <= 2`` and
    ``N_p (c0 e^{-c1 tau^m1 lam^2})^{2/p}`` for ``p >= 2``.
    """
    if fit is None:
        raise UsageError("an L^2 dissipation fit is required")
    if not 1 < p < math.inf:
        raise UsageError("p must lie in (1, inf)")
    _check(sys, s, t)
    base = fit.c0 * math.exp(-fit.c1 * (t - s) ** fit.m1 * lam ** 2)
    Mp, Np = _pq_factors(sys, p)
    if p <= 2:
        return Mp * base ** (2 - 2 / p)
    return Np * base ** (2 / p)


def verify_ou_dissipation(sys: OUSystem, fit: OUDissipationFit, p: float, lam: float, s: float, t: float,
                          fields: Field, **kw) -> tuple:
    """``(max_ratio, bound)`` for ``||(Id - P_lam) U(t, s) f||_p / ||f||_p`` on sampled fields."""
    u = ou_propagate(sys, s, t, fields, **kw)
    hi = Field(u.grid, u.values - project_smooth(u, lam).values)
    ratios = lp_norm(hi, p) / lp_norm(fields, p)
    return float(np.max(ratios)), ou_dissipation_constants(sys, fit, p, lam, s, t)

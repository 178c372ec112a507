"""Periodic grids, discrete Fourier transforms and frequency cutoffs.

Functions live on the torus ``[-X, X)^d`` sampled at ``x_j = -X + j h`` with
``h = 2X / N``.  The continuous transform is ``(F u)(xi) = int exp(-i x.xi) u(x) dx``
and is approximated by the Riemann sum at the dual lattice ``xi_k = pi k / X``.
Spectra are stored in numpy FFT ordering.  Values may carry leading batch axes;
all transforms act on the trailing ``d`` axes.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid with ``N`` points per axis on ``[-X, X)^d``."""

    d: int
    X: float
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise UsageError(f"dimension must be >= 1, got {self.d}")
        if not self.X > 0:
            raise UsageError(f"half-width X must be positive, got {self.X}")
        if self.N < 8 or self.N & (self.N - 1):
            raise UsageError(f"N must be a power of two >= 8, got {self.N}")

    @property
    def h(self) -> float:
        return 2.0 * self.X / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.d, 0))

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @property
    def dxi(self) -> float:
        """Spacing of the dual lattice."""
        return np.pi / self.X

    @property
    def nyquist(self) -> float:
        return np.pi / self.h

    @functools.cached_property
    def x1(self) -> np.ndarray:
        return -self.X + self.h * np.arange(self.N)

    @functools.cached_property
    def k1(self) -> np.ndarray:
        """Integer wave numbers in FFT ordering."""
        return np.fft.fftfreq(self.N, d=1.0 / self.N)

    @functools.cached_property
    def xi1(self) -> np.ndarray:
        return self.dxi * self.k1

    @functools.cached_property
    def x(self) -> tuple:
        """Coordinate arrays, one per axis, each of full grid shape."""
        return tuple(np.meshgrid(*([self.x1] * self.d), indexing="ij"))

    @functools.cached_property
    def xi(self) -> tuple:
        """Frequency arrays, one per axis, each of full grid shape (FFT ordering)."""
        return tuple(np.meshgrid(*([self.xi1] * self.d), indexing="ij"))

    @functools.cached_property
    def xi_norm(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.xi))

    @functools.cached_property
    def _phase(self) -> np.ndarray:
        # exp(i X xi_k) = (-1)^k accounts for the grid starting at -X
        signs = np.where(self.k1.astype(np.int64) % 2 == 0, 1.0, -1.0)
        out = signs
        for _ in range(self.d - 1):
            out = np.multiply.outer(out, signs)
        return out

    def points(self) -> np.ndarray:
        """Grid points as an array of shape ``(N**d, d)``."""
        return np.stack([c.ravel() for c in self.x], axis=-1)


@dataclass
class Field:
    """Samples of a function on a grid; leading axes are batch axes."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape[self.values.ndim - self.grid.d:] != self.grid.shape:
            raise UsageError(
                f"field shape {self.values.shape} does not end with grid shape {self.grid.shape}")

    @property
    def batch_shape(self) -> tuple:
        return self.values.shape[: self.values.ndim - self.grid.d]

    def norm(self, p: float = 2.0) -> np.ndarray:
        return lp_norm(self, p)


@dataclass
class Spectrum:
    """Samples of a Fourier transform on the dual lattice (FFT ordering)."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape[self.values.ndim - self.grid.d:] != self.grid.shape:
            raise UsageError(
                f"spectrum shape {self.values.shape} does not end with grid shape {self.grid.shape}")


def forward_transform(f: Field) -> Spectrum:
    """Riemann-sum Fourier transform of a grid field."""
    g = f.grid
    vals = np.fft.fftn(f.values, axes=g.axes)
    return Spectrum(g, vals * (g._phase * g.cell_volume))


def inverse_transform(F: Spectrum) -> Field:
    """Exact inverse of :func:`forward_transform`."""
    g = F.grid
    vals = np.fft.ifftn(F.values * g._phase, axes=g.axes)
    return Field(g, vals / g.cell_volume)


Multiplier = Union[np.ndarray, Callable[[tuple], np.ndarray]]


def apply_multiplier(F: Spectrum, m: Multiplier) -> Spectrum:
    """Pointwise product with a multiplier given as an array or as ``m(xi_tuple)``."""
    if callable(m):
        m = m(F.grid.xi)
    return Spectrum(F.grid, F.values * np.asarray(m))


def lp_norm(f: Field, p: float = 2.0) -> np.ndarray:
    """Grid L^p norm over the trailing axes; ``p = inf`` gives the max modulus."""
    if not p >= 1:
        raise UsageError(f"p must be >= 1, got {p}")
    a = np.abs(f.values)
    axes = f.grid.axes
    if np.isinf(p):
        return a.max(axis=axes)
    if p == 2:
        return np.sqrt(f.grid.cell_volume * np.sum(a * a, axis=axes))
    return (f.grid.cell_volume * np.sum(a ** p, axis=axes)) ** (1.0 / p)


def spectrum_l2_norm(F: Spectrum) -> np.ndarray:
    """L^2 norm of the function whose spectrum is ``F`` (discrete Plancherel)."""
    g = F.grid
    w = (g.dxi / (2 * np.pi)) ** g.d
    return np.sqrt(w * np.sum(np.abs(F.values) ** 2, axis=g.axes))


# -- smooth cutoff ---------------------------------------------------------

def _neg_inv(x):
    """``-1/x`` for ``x > 0`` and ``-inf`` elsewhere, without warnings."""
    pos = x > 0
    return np.where(pos, -1.0 / np.where(pos, x, 1.0), -np.inf)


def bump_eta(r) -> np.ndarray:
    """Smooth step equal to 1 on ``[0, 1/2]``, 0 on ``[1, inf)``, strictly between otherwise.

    Built from ``g(x) = exp(-1/x)`` as ``g(2 - 2r) / (g(2 - 2r) + g(2r - 1))``.
    """
    r = np.asarray(r, dtype=float)
    return np.exp(log_bump_eta(r))


def log_bump_eta(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    la = _neg_inv(2 - 2 * r)
    lb = _neg_inv(2 * r - 1)
    return la - np.logaddexp(la, lb)


def log_one_minus_eta(r) -> np.ndarray:
    """``log(1 - eta(r))`` evaluated without cancellation near ``r = 1/2``."""
    r = np.asarray(r, dtype=float)
    la = _neg_inv(2 - 2 * r)
    lb = _neg_inv(2 * r - 1)
    return lb - np.logaddexp(la, lb)


def smooth_cutoff(grid: GridSpec, lam: float) -> np.ndarray:
    """Multiplier ``eta(|xi| / lam)`` of the smooth projector on the grid lattice."""
    if not lam > 0:
        raise UsageError(f"cutoff lambda must be positive, got {lam}")
    return bump_eta(grid.xi_norm / lam)


def sharp_cutoff(grid: GridSpec, lam: float) -> np.ndarray:
    """Indicator of the cube ``[-lam, lam]^d``."""
    if not lam > 0:
        raise UsageError(f"cutoff lambda must be positive, got {lam}")
    inside = np.ones(grid.shape, dtype=bool)
    for c in grid.xi:
        inside &= np.abs(c) <= lam
    return inside.astype(float)


def project_smooth(f: Field, lam: float) -> Field:
    return inverse_transform(apply_multiplier(forward_transform(f), smooth_cutoff(f.grid, lam)))


def project_sharp(f: Field, lam: float) -> Field:
    return inverse_transform(apply_multiplier(forward_transform(f), sharp_cutoff(f.grid, lam)))


# Grids used to evaluate the L^1 norm of the unit-scale smooth projector kernel.
_KERNEL_GRIDS = {1: (80.0, 8192), 2: (40.0, 1024), 3: (16.0, 128)}


@functools.lru_cache(maxsize=None)
def projector_kernel_l1(d: int) -> float:
    """``|| F^{-1} eta(|.|) ||_{L^1(R^d)}``, the p-independent bound of the smooth projector."""
    if d not in _KERNEL_GRIDS:
        raise UsageError(f"projector kernel norm tabulated for d <= 3, got d={d}")
    X, N = _KERNEL_GRIDS[d]
    g = GridSpec(d, X, N)
    kern = inverse_transform(Spectrum(g, smooth_cutoff(g, 1.0).astype(complex)))
    return float(lp_norm(kern, 1.0))


def boundary_leakage(f: Field, fraction: float = 0.1, p: float = 2.0) -> np.ndarray:
    """Relative L^p mass within ``fraction * X`` of the torus boundary.

    Small values indicate that the periodic computation faithfully represents
    the whole-space problem.
    """
    g = f.grid
    outer = np.zeros(g.shape, dtype=bool)
    for c in g.x:
        outer |= np.abs(c) >= (1.0 - fraction) * g.X
    total = lp_norm(f, p)
    edge = lp_norm(Field(g, f.values * outer), p)
    return np.where(total > 0, edge / np.where(total > 0, total, 1.0), 0.0)


def shift_field(f: Field, shift) -> Field:
    """Translate ``f`` by the vector ``shift`` via a spectral phase (exact for band-limited data)."""
    g = f.grid
    shift = np.broadcast_to(np.asarray(shift, dtype=float), (g.d,))
    phase = np.exp(-1j * sum(s * c for s, c in zip(shift, g.xi)))
    return inverse_transform(apply_multiplier(forward_transform(f), phase))

"""Time-dependent sensor sets on the grid and their thickness.

A set is stored as a boolean mask over grid cells ``[x_j, x_j + h)^d``.  A
family over ``[0, T]`` holds one mask per equal time piece.  Window
measures use circular cumulative sums on integer counts, so for sets that are
unions of cell-aligned boxes the sampled infimum over anchors is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UsageError
from .spectral import Field, GridSpec


def _vec(v, d):
    return np.broadcast_to(np.asarray(v, dtype=float), (d,))


def box_mask(grid: GridSpec, boxes) -> np.ndarray:
    """Mask of a union of boxes ``[(lo, hi), ...]``, endpoints snapped to cell boundaries.

    Boxes wrap around the torus; a box at least ``2X`` long in an axis covers that axis.
    """
    mask = np.zeros(grid.shape, dtype=bool)
    for lo, hi in boxes:
        lo, hi = _vec(lo, grid.d), _vec(hi, grid.d)
        if np.any(hi < lo):
            raise UsageError(f"box with hi < lo: {lo}, {hi}")
        sel = np.ones(grid.shape, dtype=bool)
        for ax in range(grid.d):
            i0 = int(np.round((lo[ax] + grid.X) / grid.h))
            i1 = int(np.round((hi[ax] + grid.X) / grid.h))
            if i1 - i0 >= grid.N:
                continue
            idx = np.arange(i0, i1) % grid.N
            ax_sel = np.zeros(grid.N, dtype=bool)
            ax_sel[idx] = True
            shape = [1] * grid.d
            shape[ax] = grid.N
            sel &= ax_sel.reshape(shape)
        mask |= sel
    return mask


@dataclass
class SetFamily:
    """Measurable sets ``Omega(t)`` sampled on equal time pieces of ``[0, T]``."""

    grid: GridSpec
    T: float
    masks: np.ndarray

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=bool)
        if self.masks.shape[1:] != self.grid.shape or self.masks.shape[0] < 1:
            raise UsageError("masks must have shape (n_times, *grid.shape)")
        if not self.T > 0:
            raise UsageError("horizon T must be positive")

    @property
    def n_times(self) -> int:
        return self.masks.shape[0]

    @property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_times + 1)

    @property
    def times(self) -> np.ndarray:
        b = self.breakpoints
        return 0.5 * (b[:-1] + b[1:])

    def piece_index(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.T):
            raise DomainError(f"time outside [0, {self.T}]")
        return np.minimum((t * (self.n_times / self.T)).astype(np.int64), self.n_times - 1)

    def mask_at(self, t) -> np.ndarray:
        return self.masks[self.piece_index(t)]

    @classmethod
    def constant(cls, grid: GridSpec, T: float, mask) -> "SetFamily":
        return cls(grid, T, np.asarray(mask, dtype=bool)[None])

    @classmethod
    def from_boxes(cls, grid: GridSpec, T: float, boxes_per_piece) -> "SetFamily":
        return cls(grid, T, np.stack([box_mask(grid, b) for b in boxes_per_piece]))

    @classmethod
    def periodic_intervals(cls, grid: GridSpec, T: float, period: float = 1.0, fraction: float = 0.5,
                           velocity: float = 0.0, n_times: int = 1, axis: int = 0) -> "SetFamily":
        """Stripes ``{x : (x_axis - v t) mod period < fraction * period}``, one mask per piece.

        Membership is decided at cell left endpoints, which is exact when the
        stripe edges fall on cell boundaries.
        """
        if not (period > 0 and 0 <= fraction <= 1):
            raise UsageError("need period > 0 and fraction in [0, 1]")
        times = np.linspace(0.0, T, n_times + 1)[:-1]
        coord = grid.x[axis]
        masks = []
        for t in times:
            phase = np.mod(coord - velocity * t, period)
            # snap to absorb roundoff of cell-aligned edges
            phase = np.round(phase / grid.h) * grid.h
            masks.append((phase < fraction * period - 0.5 * grid.h) | (fraction >= 1))
        return cls(grid, T, np.stack(masks))

    @classmethod
    def halfline_example(cls, grid: GridSpec, T: float, axis: int = 0) -> "SetFamily":
        """``{x_axis >= 0}`` on the first half of ``[0, T]`` and ``{x_axis < 0}`` on the second."""
        right = grid.x[axis] >= -0.5 * grid.h
        return cls(grid, T, np.stack([right, ~right]))


def restrict(f: Field, mask) -> Field:
    """``1_Omega f``; the mask broadcasts over batch axes."""
    return Field(f.grid, f.values * np.asarray(mask, dtype=bool))


def _window_cells(grid: GridSpec, L) -> np.ndarray:
    L = _vec(L, grid.d)
    if np.any(L <= 0) or np.any(L > 2 * grid.X * (1 + 1e-12)):
        raise UsageError(f"window lengths must lie in (0, 2X], got {L}")
    n = np.maximum(np.round(L / grid.h).astype(np.int64), 1)
    return n


def window_counts(mask: np.ndarray, n_cells) -> np.ndarray:
    """Number of set cells in the window starting at each cell (periodic), exact integers."""
    out = np.asarray(mask, dtype=np.int64)
    lead = out.ndim - len(n_cells)
    for k, n in enumerate(n_cells):
        ax = lead + k
        N = out.shape[ax]
        ext = np.concatenate([out, np.take(out, np.arange(n) % N, axis=ax)], axis=ax)
        cs = np.cumsum(ext, axis=ax)
        zero = np.zeros_like(np.take(cs, [0], axis=ax))
        cs = np.concatenate([zero, cs], axis=ax)
        out = np.take(cs, np.arange(n, n + N), axis=ax) - np.take(cs, np.arange(N), axis=ax)
    return out


def window_fractions(fam_or_mask, grid: GridSpec, L) -> np.ndarray:
    """``|Omega cap (x + [0, L])| / |[0, L]|`` at every anchor cell, for each mask."""
    n = _window_cells(grid, L)
    counts = window_counts(fam_or_mask, n)
    return counts / float(np.prod(n))


def thickness_profile(mask, grid: GridSpec, L) -> float:
    """Largest ``rho`` with ``|Omega cap (x + [0, L])| >= rho |[0, L]|`` for all anchors."""
    return float(window_fractions(np.asarray(mask, bool), grid, L).min())


@dataclass(frozen=True)
class ThicknessDecision:
    holds: bool
    value: float
    witness_time: float | None = None
    witness_anchor: tuple | None = None


def _required(n, rho):
    # count threshold rho * prod(n) with a tolerance for rho given as decimal
    return rho * float(np.prod(n)) * (1 - 1e-12)


def is_uniformly_thick(fam: SetFamily, L, rho: float) -> ThicknessDecision:
    """Every sampled ``Omega(t)`` is ``(L, rho)``-thick; otherwise return a witness."""
    if not 0 <= rho <= 1:
        raise UsageError("rho must lie in [0, 1]")
    n = _window_cells(fam.grid, L)
    counts = window_counts(fam.masks, n)
    value = float(counts.min() / np.prod(n))
    if counts.min() >= _required(n, rho):
        return ThicknessDecision(True, value)
    flat = int(np.argmin(counts))
    j, *cell = np.unravel_index(flat, counts.shape)
    anchor = tuple(float(fam.grid.x1[c]) for c in cell)
    return ThicknessDecision(False, value, float(fam.times[j]), anchor)


def is_mean_thick(fam: SetFamily, L, rho: float) -> ThicknessDecision:
    """Time average over ``[0, T]`` of the window measure is at least ``rho |[0, L]|`` everywhere."""
    if not 0 <= rho <= 1:
        raise UsageError("rho must lie in [0, 1]")
    n = _window_cells(fam.grid, L)
    total = window_counts(fam.masks, n).sum(axis=0)
    value = float(total.min() / (np.prod(n) * fam.n_times))
    if total.min() >= _required(n, rho) * fam.n_times:
        return ThicknessDecision(True, value)
    cell = np.unravel_index(int(np.argmin(total)), total.shape)
    return ThicknessDecision(False, value, None, tuple(float(fam.grid.x1[c]) for c in cell))


def measure(mask, grid: GridSpec) -> float:
    return float(np.count_nonzero(mask) * grid.cell_volume)

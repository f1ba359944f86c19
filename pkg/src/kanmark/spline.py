"""Uniform B-spline grids and Cox-de Boor basis evaluation with analytic
derivatives.

A grid of degree k over G intervals on [t_min, t_max] carries uniformly
spaced knots extended k steps past each end at the same spacing, giving
G + 2k + 1 knots and G + k basis functions. Inputs are clamped to
[t_min, t_max] before evaluation so the basis is total on the reals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SplineGrid:
    degree: int
    intervals: int
    t_min: float
    t_max: float
    knots: np.ndarray

    @property
    def basis_count(self) -> int:
        return self.intervals + self.degree

    @property
    def spacing(self) -> float:
        return (self.t_max - self.t_min) / self.intervals


def build_grid(degree: int = 3, intervals: int = 5,
               t_min: float = -1.0, t_max: float = 1.0) -> SplineGrid:
    """Uniform knot vector with k-fold extension on each side."""
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if intervals < 1:
        raise ValueError(f"intervals must be >= 1, got {intervals}")
    if not t_min < t_max:
        raise ValueError(f"need t_min < t_max, got [{t_min}, {t_max}]")
    h = (t_max - t_min) / intervals
    knots = t_min + h * np.arange(-degree, intervals + degree + 1, dtype=np.float64)
    knots.setflags(write=False)
    return SplineGrid(int(degree), int(intervals), float(t_min), float(t_max), knots)


def _degree_zero(knots: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Indicator of the containing knot interval, right-open; points at the
    # very last knot fall into the final interval so the basis stays a
    # partition of unity at t_max even when there is no knot extension.
    idx = np.searchsorted(knots, x, side="right") - 1
    idx = np.clip(idx, 0, len(knots) - 2)
    b = np.zeros((x.size, len(knots) - 1))
    b[np.arange(x.size), idx] = 1.0
    return b


def _raise_degree(knots: np.ndarray, x: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    # Cox-de Boor recursion:
    #   B_{i,k} = (x - t_i)/(t_{i+k} - t_i) B_{i,k-1}
    #           + (t_{i+k+1} - x)/(t_{i+k+1} - t_{i+1}) B_{i+1,k-1}
    # Uniform knots make every denominator k*h > 0.
    t = knots
    left = (x[:, None] - t[None, :-k - 1]) / (t[k:-1] - t[:-k - 1])
    right = (t[None, k + 1:] - x[:, None]) / (t[k + 1:] - t[1:-k])
    return left * b[:, :-1] + right * b[:, 1:]


def basis_matrix(grid: SplineGrid, x) -> np.ndarray:
    """Basis values for a 1-D array of points; shape (len(x), basis_count).

    Points are clamped to [t_min, t_max] first.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    x = np.clip(x, grid.t_min, grid.t_max)
    b = _degree_zero(grid.knots, x)
    for k in range(1, grid.degree + 1):
        b = _raise_degree(grid.knots, x, b, k)
    return b


def basis_values(grid: SplineGrid, x: float) -> np.ndarray:
    """All basis function values at a single point."""
    if not np.isfinite(x):
        raise ValueError("x must be finite")
    return basis_matrix(grid, np.asarray([x]))[0]


def basis_derivative_matrix(grid: SplineGrid, x) -> np.ndarray:
    """d/dx of every basis function at each point; shape (len(x), basis_count).

    Uses the degree-lowering formula, which on a uniform grid collapses to
    (B_{i,k-1} - B_{i+1,k-1}) / h. At a knot the right-limit is returned.
    Strictly outside [t_min, t_max] the clamped basis is constant, so the
    derivative is 0 there.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if grid.degree == 0:
        return np.zeros((x.size, grid.basis_count))
    inside = (x >= grid.t_min) & (x <= grid.t_max)
    xc = np.clip(x, grid.t_min, grid.t_max)
    b = _degree_zero(grid.knots, xc)
    for k in range(1, grid.degree):
        b = _raise_degree(grid.knots, xc, b, k)
    d = (b[:, :-1] - b[:, 1:]) / grid.spacing
    d[~inside] = 0.0
    return d


def basis_derivatives(grid: SplineGrid, x: float) -> np.ndarray:
    """Derivatives of all basis functions at a single point."""
    if not np.isfinite(x):
        raise ValueError("x must be finite")
    return basis_derivative_matrix(grid, np.asarray([x]))[0]

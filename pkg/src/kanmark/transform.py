"""Orthonormal 1-D DCT-II / DCT-III pair and the frequency-domain
perturbation operator.

Forward:  X_k = s_k * sum_n x_n * cos(pi/N * (n + 1/2) * k)
Inverse:  x_n = sum_k s_k * X_k * cos(pi/N * (n + 1/2) * k)
with s_0 = sqrt(1/N) and s_k = sqrt(2/N) for k > 0. The orthonormal scaling
makes the pair exactly mutually inverse and norm-preserving, so the
perturbed signal satisfies ||perturb(y, p) - y||_2 = ||p||_2.

Evaluation is direct O(N^2) through a cached cosine matrix; N here is a
layer width (tens), so no fast transform is needed.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .numeric import ShapeError


@lru_cache(maxsize=None)
def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)[:, None]
    angles = np.pi * (np.arange(n, dtype=np.float64)[None, :] + 0.5) / n
    c = np.cos(k * angles)
    c[0] *= np.sqrt(1.0 / n)
    if n > 1:
        c[1:] *= np.sqrt(2.0 / n)
    c.setflags(write=False)
    return c


def _vector(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def dct(x) -> np.ndarray:
    """Orthonormal DCT-II of a 1-D signal."""
    x = _vector(x, "x")
    return _dct_matrix(x.size) @ x


def idct(spectrum) -> np.ndarray:
    """Exact inverse of :func:`dct` (orthonormal DCT-III)."""
    spectrum = _vector(spectrum, "spectrum")
    return _dct_matrix(spectrum.size).T @ spectrum


def perturb(y, p) -> np.ndarray:
    """idct(dct(y) + p): add a frequency-domain perturbation to a signal."""
    y = _vector(y, "y")
    p = _vector(p, "p")
    if y.size != p.size:
        raise ShapeError(f"perturb: signal length {y.size} vs perturbation {p.size}")
    return idct(dct(y) + p)


def perturb_rows(ys: np.ndarray, p) -> np.ndarray:
    """Apply :func:`perturb` to every row of a 2-D array."""
    ys = np.asarray(ys, dtype=np.float64)
    p = _vector(p, "p")
    if ys.ndim != 2 or ys.shape[1] != p.size:
        raise ShapeError(f"perturb_rows: rows of {ys.shape} vs perturbation {p.size}")
    c = _dct_matrix(p.size)
    return (ys @ c.T + p) @ c

"""Finite-difference weights and differentiation matrices on uniform grids."""

from __future__ import annotations

import numpy as np


def fornberg_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Weights c[k, j] so that f^(k)(z) ~ sum_j c[k, j] f(x_j), k = 0..m."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((m + 1, n))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def diff_matrix(N: int, dx: float, deriv: int, width: int = 7) -> np.ndarray:
    """Dense (N, N) derivative matrix; stencils shift inward at the edges."""
    if width > N:
        raise ValueError("grid too short for the requested stencil")
    D = np.zeros((N, N))
    half = width // 2
    for i in range(N):
        s = min(max(i - half, 0), N - width)
        idx = np.arange(s, s + width)
        D[i, idx] = fornberg_weights(float(i), idx.astype(float), deriv)[deriv]
    return D / dx**deriv


def diff(f: np.ndarray, dx: float, deriv: int = 1, axis: int = -1, width: int = 7) -> np.ndarray:
    """Derivative of samples ``f`` along ``axis``."""
    f = np.asarray(f)
    D = diff_matrix(f.shape[axis], dx, deriv, width)
    out = np.tensordot(D, np.moveaxis(f, axis, 0), axes=(1, 0))
    return np.moveaxis(out, 0, axis)

"""Centered finite differences on cell-centered fields.

All operators are second order in the interior and fall back to one-sided
second-order stencils on the first/last layer, so no ghost data is needed.
They act on the trailing three axes, which lets the same routines serve
scalars ``(n1,n2,n3)``, vectors ``(3,n1,n2,n3)`` and tensors
``(3,3,n1,n2,n3)``.
"""

from __future__ import annotations

import numpy as np

from .grid import Grid3


def diff(f: np.ndarray, grid: Grid3, axis: int) -> np.ndarray:
    """First derivative along spatial ``axis`` (0..2) of the trailing axes."""
    h = grid.spacing[axis]
    ax = f.ndim - 3 + axis
    out = np.empty_like(f)
    sl = lambda s: tuple(s if i == ax else slice(None) for i in range(f.ndim))  # noqa: E731
    out[sl(slice(1, -1))] = (f[sl(slice(2, None))] - f[sl(slice(0, -2))]) / (2 * h)
    out[sl(slice(0, 1))] = (
        -3 * f[sl(slice(0, 1))] + 4 * f[sl(slice(1, 2))] - f[sl(slice(2, 3))]
    ) / (2 * h)
    out[sl(slice(-1, None))] = (
        3 * f[sl(slice(-1, None))] - 4 * f[sl(slice(-2, -1))] + f[sl(slice(-3, -2))]
    ) / (2 * h)
    return out


def diff2(f: np.ndarray, grid: Grid3, axis: int) -> np.ndarray:
    """Second derivative along one axis; one-sided (first-order) at the edge layers."""
    h = grid.spacing[axis]
    ax = f.ndim - 3 + axis
    out = np.empty_like(f)
    sl = lambda s: tuple(s if i == ax else slice(None) for i in range(f.ndim))  # noqa: E731
    out[sl(slice(1, -1))] = (
        f[sl(slice(2, None))] - 2 * f[sl(slice(1, -1))] + f[sl(slice(0, -2))]
    ) / h**2
    out[sl(slice(0, 1))] = (
        2 * f[sl(slice(0, 1))] - 5 * f[sl(slice(1, 2))] + 4 * f[sl(slice(2, 3))] - f[sl(slice(3, 4))]
    ) / h**2
    out[sl(slice(-1, None))] = (
        2 * f[sl(slice(-1, None))] - 5 * f[sl(slice(-2, -1))] + 4 * f[sl(slice(-3, -2))] - f[sl(slice(-4, -3))]
    ) / h**2
    return out


def grad(f: np.ndarray, grid: Grid3) -> np.ndarray:
    """Gradient: prepends a derivative axis of length 3."""
    return np.stack([diff(f, grid, a) for a in range(3)])


def jacobian(v: np.ndarray, grid: Grid3) -> np.ndarray:
    """J[i, j] = d v_i / d x_j for a cell-centered vector field (3, n1, n2, n3)."""
    return np.stack([np.stack([diff(v[i], grid, j) for j in range(3)]) for i in range(3)])


def hessian_vector(v: np.ndarray, grid: Grid3) -> np.ndarray:
    """H[i, j, k] = d^2 v_i / dx_j dx_k, symmetrized mixed derivatives."""
    n = v.shape[1:]
    out = np.empty((3, 3, 3) + n)
    for i in range(3):
        for j in range(3):
            for k in range(j, 3):
                d = diff2(v[i], grid, j) if j == k else diff(diff(v[i], grid, j), grid, k)
                out[i, j, k] = d
                out[i, k, j] = d
    return out


def laplacian(f: np.ndarray, grid: Grid3) -> np.ndarray:
    return diff2(f, grid, 0) + diff2(f, grid, 1) + diff2(f, grid, 2)


def divergence_vector(v: np.ndarray, grid: Grid3) -> np.ndarray:
    return sum(diff(v[a], grid, a) for a in range(3))


def divergence_tensor(t: np.ndarray, grid: Grid3) -> np.ndarray:
    """(div T)_i = d T[i, j] / d x_j on a (3, 3, n1, n2, n3) tensor field."""
    return np.stack([sum(diff(t[i, j], grid, j) for j in range(3)) for i in range(3)])


def advect(w: np.ndarray, f: np.ndarray, grid: Grid3) -> np.ndarray:
    """(w . grad) f for vector or scalar f, centered differences."""
    if f.ndim == 3:
        return sum(w[j] * diff(f, grid, j) for j in range(3))
    return np.stack([sum(w[j] * diff(f[i], grid, j) for j in range(3)) for i in range(f.shape[0])])

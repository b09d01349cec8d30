"""Trilinear sampling of grid fields at arbitrary points."""

from __future__ import annotations

import numpy as np

from .grid import Grid3, MACVelocity


class TrilinearSampler:
    """Trilinear interpolation on a uniform lattice with given node origin.

    ``values`` has shape (ncomp, m1, m2, m3) or (m1, m2, m3); ``origin`` is
    the coordinate of node (0,0,0).  Points beyond the node hull are clamped
    axis-wise; points outside the padded box (half a spacing beyond the hull)
    return ``fill``.
    """

    def __init__(self, origin, spacing, values: np.ndarray, fill=0.0):
        self.v = values if values.ndim == 4 else values[None]
        self.origin = np.asarray(origin, dtype=float)
        self.h = np.asarray(spacing, dtype=float)
        self.n = np.array(self.v.shape[1:])
        self.fill = np.broadcast_to(np.asarray(fill, dtype=float), (self.v.shape[0],)).copy()

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        t = (pts - self.origin) / self.h
        i0 = np.floor(t).astype(np.int64)
        frac = t - i0
        lo_ok = t >= -0.5
        hi_ok = t <= self.n - 0.5
        valid = (lo_ok & hi_ok).all(axis=1)
        c0 = np.clip(i0, 0, self.n - 1)
        c1 = np.clip(i0 + 1, 0, self.n - 1)
        acc = np.zeros((self.v.shape[0], len(pts)))
        for corner in range(8):
            bits = [(corner >> a) & 1 for a in range(3)]
            wgt = np.ones(len(pts))
            ii = np.empty((len(pts), 3), dtype=np.int64)
            for a in range(3):
                wgt = wgt * (frac[:, a] if bits[a] else 1.0 - frac[:, a])
                ii[:, a] = (c1 if bits[a] else c0)[:, a]
            acc += wgt * self.v[:, ii[:, 0], ii[:, 1], ii[:, 2]]
        if not valid.all():
            acc[:, ~valid] = self.fill[:, None]
        return acc


def center_sampler(grid: Grid3, values: np.ndarray, fill=0.0) -> TrilinearSampler:
    origin = np.array([b[0] + 0.5 * h for (b, h) in zip(grid.bounds, grid.spacing)])
    return TrilinearSampler(origin, grid.spacing, values, fill)


def mac_sampler(grid: Grid3, u: MACVelocity):
    """Per-component samplers for a staggered velocity."""
    samplers = []
    for a in range(3):
        origin = np.array(
            [grid.bounds[s][0] + (0.0 if s == a else 0.5 * grid.spacing[s]) for s in range(3)]
        )
        samplers.append(TrilinearSampler(origin, grid.spacing, u.c[a]))
    return samplers


def sample_velocity(grid: Grid3, u: MACVelocity, pts: np.ndarray) -> np.ndarray:
    """Velocity at points (M, 3) from the staggered arrays, shape (M, 3)."""
    ss = mac_sampler(grid, u)
    return np.stack([ss[a](pts)[0] for a in range(3)], axis=-1)

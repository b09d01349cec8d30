"""Truncated exterior-domain grid and field containers.

The computational domain is a box ``[lo_a, hi_a]^3`` (possibly anisotropic)
minus an optional sphere centered at the origin.  Scalars and cell-centered
vectors/tensors live at cell centers; the velocity of the flow solver lives
on a staggered (MAC) layout with component ``a`` stored on faces normal to
axis ``a``.

The obstacle is represented by stair-step masking: a cell is solid when its
center lies inside the sphere, and a face is stamped (Dirichlet) when it is
adjacent to at least one solid cell or lies on the outer box boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class Grid3:
    """Uniform Cartesian grid on a box, optionally minus a centered sphere."""

    shape: tuple[int, int, int]
    bounds: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    sphere_radius: float | None = None

    @classmethod
    def cube(cls, half_width: float, cells_per_axis: int, sphere_radius: float | None = None) -> "Grid3":
        b = (-float(half_width), float(half_width))
        return cls((cells_per_axis,) * 3, (b, b, b), sphere_radius)

    @classmethod
    def box(cls, bounds, shape, sphere_radius=None) -> "Grid3":
        shape = tuple(int(n) for n in shape)
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        return cls(shape, bounds, sphere_radius)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple((hi - lo) / n for (lo, hi), n in zip(self.bounds, self.shape))

    @property
    def cell_volume(self) -> float:
        h1, h2, h3 = self.spacing
        return h1 * h2 * h3

    def center_axis(self, axis: int) -> np.ndarray:
        (lo, hi), n = self.bounds[axis], self.shape[axis]
        h = (hi - lo) / n
        return lo + h * (np.arange(n) + 0.5)

    def face_axis(self, axis: int) -> np.ndarray:
        (lo, hi), n = self.bounds[axis], self.shape[axis]
        return np.linspace(lo, hi, n + 1)

    @cached_property
    def center_mesh(self) -> np.ndarray:
        """Cell-center coordinates, shape (3, n1, n2, n3)."""
        ax = [self.center_axis(a) for a in range(3)]
        return np.stack(np.meshgrid(*ax, indexing="ij"))

    def center_points(self) -> np.ndarray:
        """Cell centers as an (n_cells, 3) array, x-fastest ordering preserved."""
        return self.center_mesh.reshape(3, -1).T

    @cached_property
    def center_radius(self) -> np.ndarray:
        return np.sqrt((self.center_mesh**2).sum(axis=0))

    @cached_property
    def solid_mask(self) -> np.ndarray:
        """Cells whose center lies inside the obstacle sphere."""
        if self.sphere_radius is None:
            return np.zeros(self.shape, dtype=bool)
        return self.center_radius < self.sphere_radius

    @cached_property
    def fluid_mask(self) -> np.ndarray:
        return ~self.solid_mask

    def face_shape(self, axis: int) -> tuple[int, int, int]:
        s = list(self.shape)
        s[axis] += 1
        return tuple(s)

    def face_mesh(self, axis: int) -> np.ndarray:
        ax = [self.face_axis(a) if a == axis else self.center_axis(a) for a in range(3)]
        return np.stack(np.meshgrid(*ax, indexing="ij"))

    def face_solid_adjacent(self, axis: int) -> np.ndarray:
        """Faces touching at least one solid cell (stamped to obstacle velocity)."""
        solid = self.solid_mask
        out = np.zeros(self.face_shape(axis), dtype=bool)
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[axis] = slice(0, -1)
        sl_hi[axis] = slice(1, None)
        out[tuple(sl_lo)] |= solid
        out[tuple(sl_hi)] |= solid
        return out

    def face_outer_boundary(self, axis: int) -> np.ndarray:
        """Faces lying on the outer box boundary along their own axis."""
        out = np.zeros(self.face_shape(axis), dtype=bool)
        sl = [slice(None)] * 3
        sl[axis] = 0
        out[tuple(sl)] = True
        sl[axis] = -1
        out[tuple(sl)] = True
        return out

    def region_labels(self, re: float) -> np.ndarray:
        """Wake-split labels per cell: 0 solid, 1 near field, 2 mid field, 3 far field.

        Near field is ``|x| <= 1``, mid field ``1 < |x| <= 1/re``, far field the
        rest; ties go to the lower-index region.
        """
        if re <= 0:
            raise UsageError("region split needs re > 0")
        r = self.center_radius
        lab = np.full(self.shape, 3, dtype=np.int8)
        lab[r <= 1.0 / re] = 2
        lab[r <= 1.0] = 1
        lab[self.solid_mask] = 0
        return lab

    def same_as(self, other: "Grid3") -> bool:
        return (
            self.shape == other.shape
            and self.bounds == other.bounds
            and self.sphere_radius == other.sphere_radius
        )


@dataclass
class Field:
    """A value array bound to a grid with a staggering tag.

    ``staggering`` is ``"center"`` or ``"face<a>"`` with ``a`` in 1..3; the
    trailing three axes of ``data`` must match the corresponding layout.
    """

    grid: Grid3
    data: np.ndarray
    staggering: str = "center"

    def __post_init__(self):
        expected = self.grid.shape if self.staggering == "center" else self.grid.face_shape(int(self.staggering[-1]) - 1)
        if tuple(self.data.shape[-3:]) != tuple(expected):
            raise UsageError(
                f"field data shape {self.data.shape} does not match staggering "
                f"'{self.staggering}' on grid {self.grid.shape}"
            )


@dataclass
class FieldSet:
    """Named fields sharing one grid handle."""

    grid: Grid3
    fields: dict[str, Field] = field(default_factory=dict)

    def add(self, name: str, data: np.ndarray, staggering: str = "center") -> Field:
        f = Field(self.grid, data, staggering)
        self.fields[name] = f
        return f

    def __getitem__(self, name: str) -> Field:
        return self.fields[name]


class MACVelocity:
    """Staggered velocity: component a on faces normal to axis a."""

    def __init__(self, grid: Grid3, components=None):
        self.grid = grid
        if components is None:
            components = [np.zeros(grid.face_shape(a)) for a in range(3)]
        self.c = list(components)
        for a in range(3):
            if tuple(self.c[a].shape) != grid.face_shape(a):
                raise UsageError(f"component {a} has shape {self.c[a].shape}, expected {grid.face_shape(a)}")

    @classmethod
    def zeros(cls, grid: Grid3) -> "MACVelocity":
        return cls(grid)

    def copy(self) -> "MACVelocity":
        return MACVelocity(self.grid, [a.copy() for a in self.c])

    def to_centers(self) -> np.ndarray:
        """Average face values to cell centers, shape (3, n1, n2, n3)."""
        out = np.empty((3,) + self.grid.shape)
        for a in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[a] = slice(0, -1)
            hi[a] = slice(1, None)
            out[a] = 0.5 * (self.c[a][tuple(lo)] + self.c[a][tuple(hi)])
        return out

    def divergence(self) -> np.ndarray:
        """Exact MAC divergence at cell centers."""
        h = self.grid.spacing
        out = np.zeros(self.grid.shape)
        for a in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[a] = slice(0, -1)
            hi[a] = slice(1, None)
            out += (self.c[a][tuple(hi)] - self.c[a][tuple(lo)]) / h[a]
        return out


def centers_to_faces(grid: Grid3, v_centers: np.ndarray) -> MACVelocity:
    """Interpolate a cell-centered vector field to MAC faces (2-point average).

    Outer boundary faces take the one-sided neighbor value; they are stamped
    by the solver anyway.
    """
    comps = []
    for a in range(3):
        arr = np.empty(grid.face_shape(a))
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        inner = [slice(None)] * 3
        inner[a] = slice(1, -1)
        arr[tuple(inner)] = 0.5 * (v_centers[a][tuple(lo)] + v_centers[a][tuple(hi)])
        first = [slice(None)] * 3
        first[a] = 0
        last = [slice(None)] * 3
        last[a] = -1
        cfirst = [slice(None)] * 3
        cfirst[a] = 0
        clast = [slice(None)] * 3
        clast[a] = -1
        arr[tuple(first)] = v_centers[a][tuple(cfirst)]
        arr[tuple(last)] = v_centers[a][tuple(clast)]
        comps.append(arr)
    return MACVelocity(grid, comps)

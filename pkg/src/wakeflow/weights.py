"""Anisotropic wake weights, admissibility predicates, and weighted norms.

Three weight families are supported, each optionally rescaled by a Reynolds
number (``re=None`` means the unscaled variant):

    plain    (1+|x|)^A (1+s(x))^B          "eta"
    bare     |x|^A (1+s(x))^B              "nu"
    hybrid   eta^{A-omega}_B * nu^omega_0  "mu"

with the wake distance ``s(x) = |x| - x1``.  Rescaled variants substitute
``re*x`` inside the ``1+|.|`` and ``s(.)`` factors while ``nu`` keeps the
bare ``|x|`` factor.

Admissibility predicates are the closed-form parameter windows used by the
singular-integral estimates; a numerical Muckenhoupt-style probe lives in
the diagnostics module, not here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UsageError
from .grid import Grid3
from .oseen_kernel import wake_distance

KINDS = ("eta", "nu", "mu")
REGIONS = ("all", "omega1", "omega2", "omega3")


@dataclass(frozen=True)
class WeightSpec:
    """One member of the eta/nu/mu family.

    ``omega`` is only meaningful for kind ``"mu"``; ``re=None`` selects the
    unscaled variant.
    """

    kind: str
    A: float
    B: float
    omega: float = 0.0
    re: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown weight kind {self.kind!r}")
        if self.re is not None and not self.re > 0:
            raise UsageError("re must be positive or None for the unscaled variant")
        if self.kind == "mu" and self.A >= 0 and not (0 <= self.omega <= self.A):
            raise UsageError("mu weight requires 0 <= omega <= A for A >= 0")


def eval_weight(spec: WeightSpec, x) -> np.ndarray | float:
    """Evaluate the weight at points x (..., 3)."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    r = np.linalg.norm(pts, axis=-1)
    scaled = spec.re is not None
    rs = spec.re * r if scaled else r
    s = wake_distance(spec.re * pts if scaled else pts)
    s = np.atleast_1d(s)

    if spec.kind == "eta":
        val = (1.0 + rs) ** spec.A * (1.0 + s) ** spec.B
    else:
        bare_exp = spec.A if spec.kind == "nu" else spec.omega
        if bare_exp < 0 and np.any(r == 0):
            raise DomainError("weight with a negative bare |x| exponent is singular at x = 0")
        if spec.kind == "nu":
            val = r**spec.A * (1.0 + s) ** spec.B
        else:
            val = (1.0 + rs) ** (spec.A - spec.omega) * (1.0 + s) ** spec.B * r**spec.omega
    return float(val[0]) if single else val


def integrable_over_space(a: float, b: float) -> bool:
    """Whole-space integrability of the reciprocal weight with exponents (a, b)."""
    return a + min(1.0, b) > 3.0


def is_ap_admissible(spec: WeightSpec, p: float) -> bool:
    """Closed-form Muckenhoupt A_p window for the eta/nu/mu family."""
    if not (1.0 < p < math.inf):
        raise UsageError("p must lie in (1, inf)")
    A, B = spec.A, spec.B
    ok = (-1.0 / p < B < (p - 1.0) / p) and (-3.0 / p < A + B < 3.0 * (p - 1.0) / p)
    if spec.kind in ("nu", "mu"):
        ok = ok and (-3.0 / p < A < 3.0 * (p - 1.0) / p)
    if spec.kind == "mu":
        ok = ok and (0.0 <= spec.omega <= A)
    return bool(ok)


def koch_admissible(A: float, B: float, p: float) -> bool:
    """Parameter window of the weighted bound for the second-gradient kernel."""
    if not (1.0 < p < math.inf):
        raise UsageError("p must lie in (1, inf)")
    lo, hi = -1.0 / p, 2.0 * (p - 1.0) / p
    line = (2.0 * (p - 1.0) + 1.0) / p
    return bool(
        lo < A < hi
        and lo < B < hi
        and A + B > lo
        and 2.0 * A - B < line
        and 2.0 * B - A < line
    )


def koch_violations(A: float, B: float, p: float) -> list[str]:
    """Human-readable list of violated window inequalities (empty if admissible)."""
    lo, hi = -1.0 / p, 2.0 * (p - 1.0) / p
    line = (2.0 * (p - 1.0) + 1.0) / p
    out = []
    if not (lo < A < hi):
        out.append(f"A must lie in ({lo:.4g}, {hi:.4g})")
    if not (lo < B < hi):
        out.append(f"B must lie in ({lo:.4g}, {hi:.4g})")
    if not (A + B > lo):
        out.append(f"A + B must exceed {lo:.4g}")
    if not (2 * A - B < line):
        out.append(f"2A - B must be below {line:.4g}")
    if not (2 * B - A < line):
        out.append(f"2B - A must be below {line:.4g}")
    return out


def gradkernel_admissible(A: float, B: float, p: float) -> bool:
    """Parameter window of the weighted bound for the first-gradient kernel."""
    if not (1.0 < p < math.inf):
        raise UsageError("p must lie in (1, inf)")
    return bool(
        0.0 < B < 1.5 - 1.5 / p
        and A + B > -1.0 / p
        and A < 1.5 - 2.0 / p
        and A - B < 0.5 - 1.0 / p
    )


def gradkernel_violations(A: float, B: float, p: float) -> list[str]:
    out = []
    if not (0.0 < B < 1.5 - 1.5 / p):
        out.append(f"B must lie in (0, {1.5 - 1.5 / p:.4g})")
    if not (A + B > -1.0 / p):
        out.append(f"A + B must exceed {-1.0 / p:.4g}")
    if not (A < 1.5 - 2.0 / p):
        out.append(f"A must be below {1.5 - 2.0 / p:.4g}")
    if not (A - B < 0.5 - 1.0 / p):
        out.append(f"A - B must be below {0.5 - 1.0 / p:.4g}")
    return out


def region_mask(grid: Grid3, region: str, re: float | None) -> np.ndarray:
    """Boolean cell mask for one of the wake-split regions (fluid cells only)."""
    if region not in REGIONS:
        raise UsageError(f"unknown region {region!r}")
    if region == "all":
        return grid.fluid_mask
    if re is None:
        raise UsageError("region splits need a Reynolds number")
    labels = grid.region_labels(re)
    return labels == {"omega1": 1, "omega2": 2, "omega3": 3}[region]


def weighted_lp_norm(
    field: np.ndarray,
    spec: WeightSpec,
    p: float,
    grid: Grid3,
    region: str = "all",
    region_re: float | None = None,
) -> float:
    """Discrete weighted L^p norm by midpoint quadrature on cell centers.

    ``field`` is either a scalar array matching the grid or a vector array
    with a leading component axis; vectors use the pointwise Euclidean
    magnitude.  ``p=inf`` returns the weighted maximum over cell centers.
    """
    field = np.asarray(field)
    if field.ndim == 4:
        mag = np.sqrt((field**2).sum(axis=0))
    elif field.ndim == 3:
        mag = np.abs(field)
    else:
        raise UsageError("field must be (n1,n2,n3) or (ncomp,n1,n2,n3)")
    if tuple(mag.shape) != tuple(grid.shape):
        raise UsageError("field shape does not match grid")
    if not (p >= 1):
        raise UsageError("p must be >= 1 (or inf)")

    mask = region_mask(grid, region, region_re if region_re is not None else spec.re)
    if not mask.any():
        raise DomainError(f"region {region!r} contains no cells on this grid")

    g = eval_weight(spec, grid.center_points()).reshape(grid.shape)
    vals = (mag * g)[mask]
    if math.isinf(p):
        return float(np.max(vals))
    return float((np.sum(vals**p) * grid.cell_volume) ** (1.0 / p))


def weight_field(spec: WeightSpec, grid: Grid3) -> np.ndarray:
    """Weight sampled at all cell centers, shape matching the grid."""
    return eval_weight(spec, grid.center_points()).reshape(grid.shape)

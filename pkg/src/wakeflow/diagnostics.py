"""Asymptotic-structure diagnostics: decay fits, wake anisotropy, operator
bounds, and weighted embedding probes.

These routines quantify behavior the theory predicts only up to unknown
constants, so they report fitted exponents, ratio distributions, and
stability statistics rather than hard pass/fail verdicts; thresholds live in
the acceptance tests.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UsageError
from .grid import Grid3
from .interp import center_sampler
from .oseen_kernel import wake_distance
from .representation import KernelConvolution
from .weights import (
    WeightSpec,
    eval_weight,
    gradkernel_violations,
    koch_violations,
    weighted_lp_norm,
)


@dataclass
class DecayFit:
    ray: np.ndarray
    radii: np.ndarray
    magnitudes: np.ndarray
    slope: float
    intercept: float
    r2: float
    r_range: tuple[float, float]
    excluded: int = 0

    def as_dict(self) -> dict:
        return {
            "ray": list(map(float, self.ray)),
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "r_range": list(self.r_range),
            "n_samples": int(len(self.radii)),
            "excluded": self.excluded,
        }


def _loglog_fit(radii, mags):
    lx, ly = np.log(radii), np.log(mags)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope, intercept = coef
    ss_tot = ((ly - ly.mean()) ** 2).sum()
    ss_res = ((ly - A @ coef) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(max(0.0, min(1.0, r2)))


def fit_decay(
    fieldvals,
    ray,
    r_min: float,
    r_max: float,
    n_samples: int = 16,
    grid: Grid3 | None = None,
) -> DecayFit:
    """Log-log least-squares decay exponent of |field| along a ray.

    ``fieldvals`` is either a callable points -> magnitudes (or vectors, in
    which case the Euclidean norm is fitted) or a grid array (scalar or
    vector) interpolated trilinearly; then ``grid`` is required.
    """
    if n_samples < 8:
        raise UsageError("need at least 8 samples for a decay fit")
    ray = np.asarray(ray, dtype=float)
    ray = ray / np.linalg.norm(ray)
    radii = np.geomspace(r_min, r_max, n_samples)
    pts = radii[:, None] * ray[None, :]
    if callable(fieldvals):
        vals = np.asarray(fieldvals(pts))
    else:
        if grid is None:
            raise UsageError("grid required for array fields")
        samp = center_sampler(grid, np.asarray(fieldvals))
        vals = samp(pts).T
    if vals.ndim > 1:
        mags = np.linalg.norm(vals.reshape(len(radii), -1), axis=1)
    else:
        mags = np.abs(vals)
    floor = 1e4 * np.finfo(float).eps * max(mags.max(), 1e-300)
    keep = mags > floor
    excluded = int((~keep).sum())
    if excluded:
        warnings.warn(f"decay fit excluded {excluded} underflow samples", stacklevel=2)
    if keep.sum() < 3:
        raise DomainError("not enough samples above the underflow floor")
    slope, intercept, r2 = _loglog_fit(radii[keep], mags[keep])
    return DecayFit(ray, radii[keep], mags[keep], slope, intercept, r2, (r_min, r_max), excluded)


def shell_sup_decay(
    func,
    r_min: float,
    r_max: float,
    n_radii: int = 20,
    n_angles: int = 72,
) -> DecayFit:
    """Decay fit of the angular supremum per radius (wake-envelope fit).

    The supremum over directions picks up the paraboloidal wake scaling that
    exact axis rays miss; sampling concentrates logarithmically toward the
    downstream axis.
    """
    radii = np.geomspace(r_min, r_max, n_radii)
    thetas = np.concatenate([[0.0], np.geomspace(1e-4, np.pi, n_angles)])
    sups = np.empty(n_radii)
    for i, r in enumerate(radii):
        pts = np.stack(
            [r * np.cos(thetas), r * np.sin(thetas), np.zeros_like(thetas)], axis=-1
        )
        vals = np.asarray(func(pts))
        mags = np.linalg.norm(vals.reshape(len(thetas), -1), axis=1)
        sups[i] = mags.max()
    slope, intercept, r2 = _loglog_fit(radii, sups)
    return DecayFit(np.array([1.0, 0, 0]), radii, sups, slope, intercept, r2, (r_min, r_max))


def region_partition_check(grid: Grid3, re: float) -> bool:
    """Every fluid cell carries exactly one wake-region label."""
    labels = grid.region_labels(re)
    counts = sum((labels == k).sum() for k in (1, 2, 3))
    return bool(counts == grid.fluid_mask.sum())


def wake_anisotropy_report(
    u_centers: np.ndarray,
    re: float,
    p: float,
    omega: float,
    grid: Grid3,
    r_min: float | None = None,
    r_max: float | None = None,
    n_samples: int = 16,
) -> dict:
    """Downstream/transverse decay fits of |u| plus the weighted supremum.

    The slope gap (transverse minus downstream) probes the wake anisotropy;
    the weighted supremum over the mid and far regions probes membership in
    the anisotropically weighted space.
    """
    mag = np.sqrt((np.asarray(u_centers) ** 2).sum(axis=0))
    scale = float(mag[grid.fluid_mask].max()) if grid.fluid_mask.any() else 0.0
    if scale < 1e4 * np.finfo(float).eps:
        return {"degenerate": "no wake", "scale": scale}
    half = min(min(abs(lo), abs(hi)) for (lo, hi) in grid.bounds)
    r_lo = 2.0 if r_min is None else r_min
    r_hi = 0.85 * half if r_max is None else r_max
    down = fit_decay(u_centers, (1.0, 0.0, 0.0), r_lo, r_hi, n_samples, grid)
    trans = fit_decay(u_centers, (0.0, 1.0, 0.0), r_lo, r_hi, n_samples, grid)
    spec = WeightSpec("mu", 1.0 - 3.0 / p, 1.0 - 2.0 / p, omega, re)
    labels = grid.region_labels(re)
    mask = (labels == 2) | (labels == 3)
    wvals = eval_weight(spec, grid.center_points()).reshape(grid.shape)
    wsup = float((mag * wvals)[mask].max()) if mask.any() else float("nan")
    return {
        "downstream": down.as_dict(),
        "transverse": trans.as_dict(),
        "slope_gap": trans.slope - down.slope,
        "weighted_sup": wsup,
        "weight": {"A": spec.A, "B": spec.B, "omega": omega, "re": re},
    }


# ------------------------------------------------------------ operator suites

KERNEL_CHOICES = ("hess_oseen", "grad_oseen", "pressure")


@dataclass
class OperatorSuiteReport:
    kernel: str
    p: float
    weight_in: tuple
    weight_out: tuple
    ratios: list = field(default_factory=list)
    max_ratio: float = 0.0
    median_ratio: float = 0.0
    first_half_max: float = 0.0
    second_half_max: float = 0.0
    flatness: float = 0.0
    violations: list = field(default_factory=list)
    re_sweep: list = field(default_factory=list)
    sweep_ratios: list = field(default_factory=list)
    fitted_re_exponent: float | None = None

    def as_dict(self) -> dict:
        return {
            "kernel": self.kernel,
            "p": self.p,
            "weight_in": list(self.weight_in),
            "weight_out": list(self.weight_out),
            "ratios": list(map(float, self.ratios)),
            "max_ratio": self.max_ratio,
            "median_ratio": self.median_ratio,
            "first_half_max": self.first_half_max,
            "second_half_max": self.second_half_max,
            "flatness": self.flatness,
            "violations": list(self.violations),
            "re_sweep": list(map(float, self.re_sweep)),
            "sweep_ratios": list(map(float, self.sweep_ratios)),
            "fitted_re_exponent": self.fitted_re_exponent,
        }


def trial_field(
    grid: Grid3,
    rng: np.random.Generator,
    width_scale: float = 1.0,
    annulus: tuple[float, float] | None = None,
) -> np.ndarray:
    """Sum of three unit-L2 Gaussian bumps with centers in the mid-field annulus.

    Values below 1e-12 of the peak are flushed to zero so the field is
    compactly supported on the grid.
    """
    half = min(min(abs(lo), abs(hi)) for (lo, hi) in grid.bounds)
    lo, hi = annulus if annulus is not None else (1.0, max(1.5, half - 2.0))
    X = grid.center_mesh
    f = np.zeros((3,) + grid.shape)
    for _ in range(3):
        # radius distribution uniform in shell volume
        u = rng.uniform(lo**3, hi**3)
        rad = u ** (1.0 / 3.0)
        direc = rng.normal(size=3)
        direc /= np.linalg.norm(direc)
        c = rad * direc
        amp = rng.normal(size=3)
        sig = width_scale * rng.uniform(0.35, 0.7)
        bump = np.exp(-(((X[0] - c[0]) ** 2 + (X[1] - c[1]) ** 2 + (X[2] - c[2]) ** 2) / sig**2))
        f += amp[:, None, None, None] * bump
    peak = np.abs(f).max()
    if peak > 0:
        f[np.abs(f) < 1e-12 * peak] = 0.0
        nrm = np.sqrt((f**2).sum() * grid.cell_volume)
        f /= nrm
    return f


def operator_bound_suite(
    kernel: str,
    p: float,
    weight: dict,
    n_trials: int,
    seed: int,
    grid: Grid3 | None = None,
    re: float = 1.0,
    re_sweep: list | None = None,
    allow_inadmissible: bool = False,
    box_scale: float = 12.0,
    cells: int = 40,
    width_growth: float = 2.0,
    omega: float = 0.0,
) -> OperatorSuiteReport:
    """Empirical weighted-bound probe for one convolution kernel.

    For each seeded trial field the weighted-norm ratio ||Tf|| / ||f|| is
    recorded; trial widths grow deterministically so the flatness statistic
    exhausts the support scale.  With ``re_sweep`` the box is rescaled with
    1/re (the wake scale) and the exponent of the median ratio against re is
    fitted.
    """
    if kernel not in KERNEL_CHOICES:
        raise UsageError(f"unknown kernel {kernel!r}")
    A, B = weight["A"], weight["B"]
    violations = (
        koch_violations(A, B, p) if kernel in ("hess_oseen", "pressure") else gradkernel_violations(A, B, p)
    )
    if kernel == "pressure":
        # pressure kernel admissibility window: Muckenhoupt class of the weight
        from .weights import is_ap_admissible

        violations = [] if is_ap_admissible(WeightSpec("eta", A, B), p) else ["weight is not A_p admissible"]
    if violations and not allow_inadmissible:
        raise UsageError("; ".join(violations))

    report = OperatorSuiteReport(
        kernel=kernel,
        p=p,
        weight_in=("eta", A, B) if omega == 0.0 else ("mu", A, B, 2 * omega),
        weight_out=("eta", A, B) if omega == 0.0 else ("mu", A, B, omega),
        violations=violations,
    )
    if n_trials == 0:
        return report

    def run_ratios(re_val: float, box: float, trials: int, seed_val: int) -> list:
        g = Grid3.cube(box, cells)
        conv = KernelConvolution(g, kernel, re=re_val, deriv=(0, 0))
        rng = np.random.default_rng(seed_val)
        if omega == 0.0:
            w_out = WeightSpec("eta", A, B, re=None if re_val == 1.0 else re_val)
            w_in = w_out
        else:
            w_out = WeightSpec("mu", A, B, omega, re=re_val)
            w_in = WeightSpec("mu", A, B, 2 * omega, re=re_val)
        annulus = (1.0, max(1.5, box - 2.0))
        out = []
        for t in range(trials):
            ws = 1.0 + width_growth * t / max(trials - 1, 1)
            f = trial_field(g, rng, width_scale=ws, annulus=annulus)
            Tf = conv.apply(f)
            num = weighted_lp_norm(Tf, w_out, p, g)
            den = weighted_lp_norm(f, w_in, p, g)
            out.append(num / den if den > 0 else np.nan)
        return out

    if re_sweep:
        medians = []
        for re_val in re_sweep:
            ratios = run_ratios(re_val, box_scale / re_val / 10.0, max(n_trials, 3), seed)
            medians.append(float(np.median(ratios)))
            report.sweep_ratios.append(float(np.median(ratios)))
        report.re_sweep = list(re_sweep)
        slope, _, _ = _loglog_fit(np.asarray(re_sweep, dtype=float), np.asarray(medians))
        report.fitted_re_exponent = slope
        report.ratios = medians
    else:
        ratios = run_ratios(re, box_scale, n_trials, seed)
        report.ratios = ratios
        half = len(ratios) // 2
        report.max_ratio = float(np.max(ratios))
        report.median_ratio = float(np.median(ratios))
        report.first_half_max = float(np.max(ratios[:half])) if half else report.max_ratio
        report.second_half_max = float(np.max(ratios[half:]))
        report.flatness = report.second_half_max / report.first_half_max if half else 1.0
    return report


def weighted_sup_embedding_check(
    g_field: np.ndarray,
    grad_field: np.ndarray,
    spec: WeightSpec,
    p: float,
    grid: Grid3,
) -> dict:
    """Ratio of the weighted supremum to the weighted W^{1,p} norms.

    Probes the embedding constant; the theory asserts uniformity in the
    Reynolds scaling for the hybrid weight family.
    """
    if p <= 3:
        raise UsageError("embedding check needs p > 3")
    if spec.A < 0 or spec.B < 0 or not (0 <= spec.omega <= max(spec.A, 0)):
        raise UsageError("embedding check needs A, B >= 0 and omega in [0, A]")
    if spec.re is not None and spec.re > 1:
        raise UsageError("embedding check is stated for re <= 1")
    sup = weighted_lp_norm(g_field, spec, np.inf, grid)
    lp = weighted_lp_norm(g_field, spec, p, grid)
    lp_grad = weighted_lp_norm(grad_field, spec, p, grid)
    denom = lp + lp_grad
    if sup == 0.0 and denom == 0.0:
        return {"degenerate": "zero field", "ratio": float("nan")}
    return {"sup": sup, "lp": lp, "lp_grad": lp_grad, "ratio": sup / denom}

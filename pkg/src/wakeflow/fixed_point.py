"""Successive approximation for the coupled transport/Oseen system.

One application of the solution map takes a velocity/pressure pair (w, s),
assembles the transport right-hand side, solves the damped transport
equation for the auxiliary field z (and its divergence-form potential), and
feeds z into the exterior Oseen solve with boundary velocity -e1.  Iterating
from (0, 0) realizes the successive-approximation scheme; the iteration
report tracks the graded norms, successor differences, and contraction
ratios that the theory predicts shrink with (re, we).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fd
from .errors import UsageError
from .grid import Grid3, MACVelocity
from .oseen_kernel import OseenParams
from .oseen_solver import OseenProblem, OseenSolver
from .transport import TransportProblem, assemble_rhs_tensor, assemble_rhs_vector, solve_transport
from .weights import WeightSpec, weighted_lp_norm


@dataclass
class FlowState:
    """Velocity, auxiliary pressure, transport field and its tensor potential."""

    u: MACVelocity
    q: np.ndarray
    z: np.ndarray | None = None
    Z: np.ndarray | None = None

    def u_centers(self) -> np.ndarray:
        return self.u.to_centers()

    @classmethod
    def zero(cls, grid: Grid3) -> "FlowState":
        return cls(MACVelocity.zeros(grid), np.zeros(grid.shape))


@dataclass
class IterationReport:
    v_norms: list = field(default_factory=list)
    weighted_v_norms: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    converged: bool = False
    aborted: str | None = None
    iterations: int = 0
    norm_ceiling: float = 0.0
    oseen_momentum_residual: float = 0.0
    oseen_div_residual: float = 0.0
    transport_consistency: float = 0.0

    def as_dict(self) -> dict:
        return {
            "v_norms": list(self.v_norms),
            "weighted_v_norms": list(self.weighted_v_norms),
            "deltas": list(self.deltas),
            "ratios": list(self.ratios),
            "converged": self.converged,
            "aborted": self.aborted,
            "iterations": self.iterations,
            "norm_ceiling": self.norm_ceiling,
            "oseen_momentum_residual": self.oseen_momentum_residual,
            "oseen_div_residual": self.oseen_div_residual,
            "transport_consistency": self.transport_consistency,
        }


@dataclass
class FixedPointConfig:
    grid: Grid3
    params: OseenParams
    forcing_f: np.ndarray | None = None
    forcing_H: np.ndarray | None = None
    tol: float = 1e-7
    max_iterations: int = 25
    p: float = 7.0
    omega: float | None = None
    under_relaxation: float = 1.0
    linear_tol: float = 1e-8
    transport_tol: float = 1e-8
    we_max: float = 0.5
    outer_correction_passes: int = 0

    def __post_init__(self):
        if self.omega is None:
            self.omega = default_omega(self.p)
        if self.p <= 6:
            raise UsageError("weighted space needs p > 6")
        if not (self.omega < 0.5 - 1.5 / self.p):
            raise UsageError("omega must be below 1/2 - 3/(2p)")
        if not (0 < self.under_relaxation <= 1):
            raise UsageError("under-relaxation factor must lie in (0, 1]")


def default_omega(p: float) -> float:
    return min(0.25, 0.5 * (0.5 - 1.5 / p))


def map_solution(
    w_centers: np.ndarray,
    s_press: np.ndarray,
    config: FixedPointConfig,
    solver: OseenSolver,
    warm_start=None,
) -> tuple[FlowState, dict]:
    """One application of the solution map (w, s) -> z -> (u, q)."""
    params = config.params
    grid = config.grid
    re, we = params.re, params.we

    B = assemble_rhs_vector(config.forcing_f, w_centers, s_press, re, we, grid)
    problem = TransportProblem(grid, w_centers, we, rhs=B.total, we_max=config.we_max)
    z, transport_report = solve_transport(
        problem, tol=config.transport_tol, return_report=True
    )

    C = assemble_rhs_tensor(config.forcing_H, w_centers, s_press, re, we, grid)
    drift = w_centers + np.array([1.0, 0.0, 0.0])[:, None, None, None]
    Z = C.total - we * np.einsum("ixyz,jxyz->ijxyz", z, drift)

    oseen_problem = OseenProblem(grid, re, rhs_z=z, rhs_Z=Z)
    if config.outer_correction_passes > 0:
        u, q, info, _ = solver.solve_with_outer_correction(
            oseen_problem, passes=config.outer_correction_passes
        )
    else:
        u, q, info = solver.solve(oseen_problem, x0=warm_start, tol=config.linear_tol)
    stage = {
        "transport": transport_report,
        "oseen_iterations": info.iterations,
        "oseen_momentum_residual": info.momentum_residual,
        "oseen_div_residual": info.div_residual,
    }
    return FlowState(u, q, z, Z), stage


def v_norm(state: FlowState, k: int, re: float, grid: Grid3) -> float:
    """Graded solution norm: re^(1/4) ||u||_4 + ||grad u||_{k,2} + ||q||_{k,2}."""
    if k not in (1, 2):
        raise UsageError("discrete graded norms support k in {1, 2}")
    spec = WeightSpec("eta", 0.0, 0.0)
    uc = state.u_centers()
    term_u = re**0.25 * weighted_lp_norm(uc, spec, 4.0, grid)
    grads = fd.jacobian(uc, grid)
    parts = [np.sqrt((grads**2).sum(axis=(0, 1)))]
    hess = fd.hessian_vector(uc, grid)
    parts.append(np.sqrt((hess**2).sum(axis=(0, 1, 2))))
    if k == 2:
        third = np.stack([fd.diff(hess[i, j, kk], grid, a) for i in range(3) for j in range(3) for kk in range(3) for a in range(3)])
        parts.append(np.sqrt((third**2).sum(axis=0)))
    term_gu = np.sqrt(sum(weighted_lp_norm(pt, spec, 2.0, grid) ** 2 for pt in parts))
    qparts = [state.q, np.sqrt((fd.grad(state.q, grid) ** 2).sum(axis=0))]
    if k == 2:
        qh = fd.hessian_vector(state.q[None], grid)[0]
        qparts.append(np.sqrt((qh**2).sum(axis=(0, 1))))
    term_q = np.sqrt(sum(weighted_lp_norm(pt, spec, 2.0, grid) ** 2 for pt in qparts))
    return float(term_u + term_gu + term_q)


def diff_v_norm(a: FlowState, b: FlowState, re: float, grid: Grid3) -> float:
    d = FlowState(
        MACVelocity(grid, [a.u.c[i] - b.u.c[i] for i in range(3)]),
        a.q - b.q,
    )
    return v_norm(d, 1, re, grid)


def weighted_v_norm(state: FlowState, p: float, omega: float, re: float, grid: Grid3) -> float:
    """The anisotropically weighted solution norm of the wake theory."""
    if p <= 6:
        raise UsageError("weighted solution norm needs p > 6")
    if not (omega < 0.5 - 1.5 / p):
        raise UsageError("omega must be below 1/2 - 3/(2p)")
    w_u = WeightSpec("mu", 1.0 - 3.0 / p, 1.0 - 2.0 / p, omega, re)
    w_gu = WeightSpec("mu", 1.5 - 3.0 / p, 1.0 - 2.0 / p, omega, re)
    w_q = WeightSpec("mu", 1.5 - 3.0 / p, 0.5 - 2.0 / p, omega, re)
    uc = state.u_centers()
    total = weighted_lp_norm(uc, w_u, p, grid)
    grads = fd.jacobian(uc, grid)
    gu = np.sqrt((grads**2).sum(axis=(0, 1)))
    hess = fd.hessian_vector(uc, grid)
    g2u = np.sqrt((hess**2).sum(axis=(0, 1, 2)))
    total += weighted_lp_norm(gu, w_gu, p, grid) + weighted_lp_norm(g2u, w_gu, p, grid)
    gq = np.sqrt((fd.grad(state.q, grid) ** 2).sum(axis=0))
    total += weighted_lp_norm(state.q, w_q, p, grid) + weighted_lp_norm(gq, w_q, p, grid)
    return float(total)


def recover_pressure(q: np.ndarray, u_centers: np.ndarray, re: float, we: float, grid: Grid3) -> np.ndarray:
    """Physical renormalized pressure from the auxiliary transport pressure."""
    if re <= 0:
        raise UsageError("re must be positive")
    gq = fd.grad(q, grid)
    drift = u_centers + np.array([1.0, 0.0, 0.0])[:, None, None, None]
    return (q + we * (drift * gq).sum(axis=0)) / re


def iterate(config: FixedPointConfig, initial: FlowState | None = None):
    """Run successive approximations; returns (final state, IterationReport)."""
    grid = config.grid
    params = config.params
    solver = OseenSolver(grid, params.re, tol=config.linear_tol)
    state = FlowState.zero(grid) if initial is None else initial
    report = IterationReport()

    if config.max_iterations == 0:
        return state, report

    ceiling = 0.0
    bad_streak = 0
    warm = None
    for it in range(1, config.max_iterations + 1):
        w = state.u_centers()
        new_state, stage = map_solution(w, state.q, config, solver, warm_start=warm)
        if config.under_relaxation < 1.0 and it > 1:
            theta = config.under_relaxation
            mixed_u = [theta * new_state.u.c[i] + (1 - theta) * state.u.c[i] for i in range(3)]
            new_state = FlowState(
                MACVelocity(grid, mixed_u),
                theta * new_state.q + (1 - theta) * state.q,
                new_state.z,
                new_state.Z,
            )
        delta = diff_v_norm(new_state, state, params.re, grid)
        vn = v_norm(new_state, 1, params.re, grid)
        wvn = weighted_v_norm(new_state, config.p, config.omega, params.re, grid)
        report.v_norms.append(vn)
        report.weighted_v_norms.append(wvn)
        report.deltas.append(delta)
        ceiling = max(ceiling, vn)
        if it >= 2:
            ratio = delta / report.deltas[-2] if report.deltas[-2] > 0 else 0.0
            report.ratios.append(ratio)
            if ratio >= 1.0:
                bad_streak += 1
            else:
                bad_streak = 0
        state = new_state
        warm = (state.u.c, state.q)
        report.iterations = it
        report.norm_ceiling = ceiling
        report.oseen_momentum_residual = stage["oseen_momentum_residual"]
        report.oseen_div_residual = stage["oseen_div_residual"]
        report.transport_consistency = stage["transport"].get("consistency_residual", 0.0)
        if delta <= config.tol * max(ceiling, 1e-300):
            report.converged = True
            break
        if bad_streak >= 3:
            report.aborted = "no contraction for 3 consecutive iterations"
            break
    return state, report


def measured_contraction_ratio(report: IterationReport) -> float:
    """Median of the recorded successor-difference ratios above noise level."""
    if not report.ratios:
        return float("nan")
    usable = [
        r
        for r, d in zip(report.ratios, report.deltas[1:])
        if d > 1e3 * np.finfo(float).eps * max(report.norm_ceiling, 1.0)
    ]
    if not usable:
        usable = report.ratios
    return float(np.median(usable))

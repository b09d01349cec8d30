"""Fundamental solutions of the Laplace and Oseen operators.

The Oseen velocity tensor at unit Reynolds number is evaluated from the
classical scalar potential

    Phi(x) = (1/4pi) * Ein(sig),       sig = (|x| - x1) / 2,
    Ein(z) = integral_0^z (1 - exp(-t))/t dt,

via ``O_ij = (delta_ij Lap - d_i d_j) Phi``.  ``Lap Phi`` collapses to the
scalar kernel ``exp(-sig) / (4pi |x|)`` of the scalar Oseen operator, so the
tensor and all derivatives reduce to elementary functions of ``sig`` and the
derivatives of ``Ein``; the exponential integral itself is only needed for
the potential.  General Reynolds numbers use the exact rescalings

    O(x, re)          = re   * O(re x, 1)
    grad O(x, re)     = re^2 * (grad O)(re x, 1)
    grad^2 O(x, re)   = re^3 * (grad^2 O)(re x, 1).

Normalization conventions, pinned by tests: the Laplace fundamental solution
is ``E = 1/(4pi |x|)`` (``-Lap E = delta``), and the small-``re|x|`` limit of
the Oseen tensor is the Stokeslet ``(1/8pi)(delta_ij/|x| + x_i x_j/|x|^3)``.
With these choices the pressure paired with tensor column j in the momentum
equation is ``+x_j/(4pi |x|^3)``, i.e. minus the gradient of E.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AccuracyError, DomainError

_EULER_GAMMA = 0.5772156649015328606
_FOUR_PI = 4.0 * np.pi

# Series / continued-fraction switch for the exponential-integral family.
_SWITCH = 1.0
_SERIES_TERMS = 26
_CF_MAX_ITER = 120


@dataclass(frozen=True)
class OseenParams:
    """Reynolds/Weissenberg pair plus kernel accuracy target."""

    re: float
    we: float = 0.0
    kernel_tol: float = 1e-10

    def __post_init__(self):
        if not self.re > 0:
            raise DomainError("re must be positive")
        if self.we < 0:
            raise DomainError("we must be nonnegative")
        if not (0 < self.kernel_tol <= 1e-6):
            raise DomainError("kernel_tol must lie in (0, 1e-6]")


def _as_points(x) -> tuple[np.ndarray, bool]:
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    return np.atleast_2d(pts), single


def wake_distance(x) -> np.ndarray | float:
    """s(x) = |x| - x1, the anisotropy variable; zero on the downstream axis."""
    pts, single = _as_points(x)
    s = np.linalg.norm(pts, axis=-1) - pts[..., 0]
    return float(s[0]) if single else s


def complementary_expint(z: np.ndarray) -> np.ndarray:
    """Ein(z) = int_0^z (1-exp(-t))/t dt  for z >= 0.

    Power series below the switch point, ``gamma + log z + E1(z)`` above it
    with E1 from a modified-Lentz continued fraction.
    """
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < _SWITCH
    zs = z[small]
    acc = np.zeros_like(zs)
    term = np.ones_like(zs)
    for k in range(1, _SERIES_TERMS + 1):
        term = term * zs / k if k > 1 else zs.copy()
        acc += (-1) ** (k + 1) * term / k
    out[small] = acc

    zl = z[~small]
    if zl.size:
        out[~small] = _EULER_GAMMA + np.log(zl) + _expint_e1_cf(zl)
    return out


def _expint_e1_cf(z: np.ndarray) -> np.ndarray:
    """E1(z) by continued fraction (modified Lentz), valid for z >= 1."""
    tiny = 1e-300
    b = z + 1.0
    c = np.full_like(z, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    converged = np.zeros(z.shape, dtype=bool)
    for i in range(1, _CF_MAX_ITER + 1):
        a = -float(i * i)
        b = b + 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h = h * delta
        converged |= np.abs(delta - 1.0) < 1e-16
        if converged.all():
            break
    else:
        raise AccuracyError("E1 continued fraction failed to converge")
    return h * np.exp(-z)


def _potential_derivs(sig: np.ndarray, order: int) -> list[np.ndarray]:
    """Derivatives d^n/dsig^n of Ein(sig) for n = 1..order (order <= 4).

    Closed forms have catastrophic cancellation as sig -> 0, so the power
    series is used below the switch point.  d/dsig Ein = (1-exp(-sig))/sig.
    """
    sig = np.asarray(sig, dtype=float)
    small = sig < _SWITCH
    ss = sig[small]
    sl = sig[~small]
    es = np.exp(-sl) if sl.size else sl
    out = []
    for n in range(1, order + 1):
        vals = np.empty_like(sig)
        # series: sum_{t>=0} (-1)^(n+t+1) sig^t / ((n+t) t!)
        acc = np.zeros_like(ss)
        term = np.ones_like(ss)
        for t in range(_SERIES_TERMS):
            if t > 0:
                term = term * ss / t
            acc += ((-1) ** (n + t + 1)) * term / (n + t)
        vals[small] = acc
        if sl.size:
            if n == 1:
                vals[~small] = -np.expm1(-sl) / sl
            elif n == 2:
                vals[~small] = (es * (1.0 + sl) - 1.0) / sl**2
            elif n == 3:
                vals[~small] = (2.0 - es * (sl**2 + 2 * sl + 2.0)) / sl**3
            else:
                vals[~small] = (es * (sl**3 + 3 * sl**2 + 6 * sl + 6.0) - 6.0) / sl**4
        out.append(vals)
    return out


def scalar_potential(x) -> np.ndarray | float:
    """The Oseen scalar potential Phi(x) = Ein((|x|-x1)/2) / 4pi."""
    pts, single = _as_points(x)
    sig = 0.5 * (np.linalg.norm(pts, axis=-1) - pts[..., 0])
    val = complementary_expint(sig) / _FOUR_PI
    return float(val[0]) if single else val


def laplace_fundamental(x) -> np.ndarray | float:
    """E(x) = 1/(4pi |x|), the fundamental solution with -Lap E = delta."""
    pts, single = _as_points(x)
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r == 0):
        raise DomainError("laplace fundamental solution is singular at x = 0")
    val = 1.0 / (_FOUR_PI * r)
    return float(val[0]) if single else val


def grad_laplace_fundamental(x) -> np.ndarray:
    """grad E = -x / (4pi |x|^3); the pressure part of the Oseen pair."""
    pts, single = _as_points(x)
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r == 0):
        raise DomainError("grad of the Laplace fundamental solution is singular at x = 0")
    val = -pts / (_FOUR_PI * r**3)[..., None]
    return val[0] if single else val


def oseenlet_pressure(x) -> np.ndarray:
    """Pressure of the unit Oseenlet column: +x/(4pi |x|^3) = -grad E."""
    return -grad_laplace_fundamental(x)


def grad_oseenlet_pressure(x) -> np.ndarray:
    """d_k [x_i/(4pi r^3)]: shape (..., i, k)."""
    pts, single = _as_points(x)
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r == 0):
        raise DomainError("pressure kernel gradient singular at x = 0")
    eye = np.eye(3)
    g = (eye / r[..., None, None] ** 3 - 3.0 * pts[..., :, None] * pts[..., None, :] / r[..., None, None] ** 5) / _FOUR_PI
    return g[0] if single else g


def _sigma_geometry(pts: np.ndarray, order: int):
    """sig and its tensor derivatives for points (M, 3) away from the origin."""
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r == 0):
        raise DomainError("Oseen tensor is singular at x = 0")
    xh = pts / r[:, None]
    sig = 0.5 * (r - pts[:, 0])
    e1 = np.zeros(3)
    e1[0] = 1.0
    d1 = 0.5 * (xh - e1)  # d_i sig
    eye = np.eye(3)
    rr = r[:, None, None]
    d2 = 0.5 * (eye / rr - xh[:, :, None] * xh[:, None, :] / rr)  # d_i d_j sig
    geo = {"r": r, "xh": xh, "sig": sig, "d1": d1, "d2": d2}
    if order >= 1:
        x = pts
        r3 = r**3
        r5 = r**5
        sym3 = (
            eye[None, :, :, None] * x[:, None, None, :]
            + eye[None, :, None, :] * x[:, None, :, None]
            + eye[None, None, :, :] * x[:, :, None, None]
        )
        xxx = x[:, :, None, None] * x[:, None, :, None] * x[:, None, None, :]
        geo["d3"] = 0.5 * (-sym3 / r3[:, None, None, None] + 3.0 * xxx / r5[:, None, None, None])
    if order >= 2:
        x = pts
        r3 = r**3
        r5 = r**5
        r7 = r**7
        ee = (
            eye[None, :, :, None, None] * eye[None, None, None, :, :]
            + eye[None, :, None, :, None] * eye[None, None, :, None, :]
            + eye[None, :, None, None, :] * eye[None, None, :, :, None]
        )
        xo = x[:, :, None, None, None]
        xp = x[:, None, :, None, None]
        xq = x[:, None, None, :, None]
        xs = x[:, None, None, None, :]
        exx = (
            eye[None, :, :, None, None] * xq * xs
            + eye[None, :, None, :, None] * xp * xs
            + eye[None, :, None, None, :] * xp * xq
            + eye[None, None, :, :, None] * xo * xs
            + eye[None, None, :, None, :] * xo * xq
            + eye[None, None, None, :, :] * xo * xp
        )
        xxxx = xo * xp * xq * xs
        geo["d4"] = 0.5 * (
            -ee / r3[:, None, None, None, None]
            + 3.0 * exx / r5[:, None, None, None, None]
            - 15.0 * xxxx / r7[:, None, None, None, None]
        )
    return geo


def _oseen_unit(pts: np.ndarray, order: int):
    """O(x,1) and requested derivative tensors at points (M, 3).

    Returns a dict with keys among 'O' (M,3,3), 'grad' (M,3,3,3) where
    grad[m,i,j,k] = d_k O_ij, and 'hess' (M,3,3,3,3) with
    hess[m,i,j,k,l] = d_k d_l O_ij.
    """
    geo = _sigma_geometry(pts, order)
    r, sig, d1, d2 = geo["r"], geo["sig"], geo["d1"], geo["d2"]
    psi = _potential_derivs(sig, order + 2)
    eye = np.eye(3)
    esig = np.exp(-sig)
    G = esig / (_FOUR_PI * r)

    phi2 = (psi[1][:, None, None] * d1[:, :, None] * d1[:, None, :] + psi[0][:, None, None] * d2) / _FOUR_PI
    out = {"O": eye[None, :, :] * G[:, None, None] - phi2}
    if order == 0:
        return out

    x = pts
    r2 = (r**2)[:, None]
    gvec = d1 + x / r2  # so that d_k G = -G * gvec_k
    dG = -G[:, None] * gvec
    d3 = geo["d3"]
    phi3 = (
        psi[2][:, None, None, None] * d1[:, :, None, None] * d1[:, None, :, None] * d1[:, None, None, :]
        + psi[1][:, None, None, None]
        * (
            d2[:, :, :, None] * d1[:, None, None, :]
            + d2[:, :, None, :] * d1[:, None, :, None]
            + d2[:, None, :, :] * d1[:, :, None, None]
        )
        + psi[0][:, None, None, None] * d3
    ) / _FOUR_PI
    out["grad"] = eye[None, :, :, None] * dG[:, None, None, :] - phi3
    if order == 1:
        return out

    d4 = geo["d4"]
    rr2 = r2[:, :, None]
    ddG = G[:, None, None] * (
        gvec[:, :, None] * gvec[:, None, :]
        - d2
        - eye[None, :, :] / rr2
        + 2.0 * x[:, :, None] * x[:, None, :] / rr2**2
    )
    s1 = d1
    s2 = d2
    p4 = psi[3][:, None, None, None, None]
    p3 = psi[2][:, None, None, None, None]
    p2 = psi[1][:, None, None, None, None]
    p1 = psi[0][:, None, None, None, None]
    a_i = s1[:, :, None, None, None]
    a_j = s1[:, None, :, None, None]
    a_k = s1[:, None, None, :, None]
    a_l = s1[:, None, None, None, :]
    s_ij = s2[:, :, :, None, None]
    s_ik = s2[:, :, None, :, None]
    s_il = s2[:, :, None, None, :]
    s_jk = s2[:, None, :, :, None]
    s_jl = s2[:, None, :, None, :]
    s_kl = s2[:, None, None, :, :]
    t_ijk = d3[:, :, :, :, None]
    t_ijl = d3[:, :, :, None, :]
    t_ikl = d3[:, :, None, :, :]
    t_jkl = d3[:, None, :, :, :]
    phi4 = (
        p4 * a_i * a_j * a_k * a_l
        + p3
        * (
            s_ij * a_k * a_l
            + s_ik * a_j * a_l
            + s_il * a_j * a_k
            + s_jk * a_i * a_l
            + s_jl * a_i * a_k
            + s_kl * a_i * a_j
        )
        + p2 * (s_ij * s_kl + s_ik * s_jl + s_il * s_jk + t_ijk * a_l + t_ijl * a_k + t_ikl * a_j + t_jkl * a_i)
        + p1 * d4
    ) / _FOUR_PI
    out["hess"] = eye[None, :, :, None, None] * ddG[:, None, None, :, :] - phi4
    return out


def oseen_tensor(x, re: float = 1.0) -> np.ndarray:
    """Oseen velocity tensor O(x, re) = re * O(re x, 1); shape (..., 3, 3)."""
    if re <= 0:
        raise DomainError("re must be positive")
    pts, single = _as_points(x)
    val = re * _oseen_unit(re * pts, 0)["O"]
    return val[0] if single else val


def oseen_tensor_grad(x, re: float = 1.0) -> np.ndarray:
    """First derivatives d_k O_ij(x, re), shape (..., 3, 3, 3), k last."""
    if re <= 0:
        raise DomainError("re must be positive")
    pts, single = _as_points(x)
    val = re**2 * _oseen_unit(re * pts, 1)["grad"]
    return val[0] if single else val


def oseen_tensor_hess(x, re: float = 1.0, chunk: int = 200_000) -> np.ndarray:
    """Second derivatives d_k d_l O_ij(x, re), shape (..., 3, 3, 3, 3).

    Evaluation is chunked; the (M,3,3,3,3) intermediate tensors dominate
    memory otherwise.
    """
    if re <= 0:
        raise DomainError("re must be positive")
    pts, single = _as_points(x)
    out = np.empty(pts.shape[:-1] + (3, 3, 3, 3))
    for start in range(0, pts.shape[0], chunk):
        sl = slice(start, start + chunk)
        out[sl] = _oseen_unit(re * pts[sl], 2)["hess"]
    out *= re**3
    return out[0] if single else out


def oseen_pair(x, re: float = 1.0):
    """(O, grad O) in one geometry pass; shapes (..., 3, 3) and (..., 3, 3, 3)."""
    if re <= 0:
        raise DomainError("re must be positive")
    pts, single = _as_points(x)
    res = _oseen_unit(re * pts, 1)
    O = re * res["O"]
    g = re**2 * res["grad"]
    return (O[0], g[0]) if single else (O, g)


def stokeslet(x) -> np.ndarray:
    """Stokes fundamental tensor (1/8pi)(delta/r + x x /r^3); the re->0 limit."""
    pts, single = _as_points(x)
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r == 0):
        raise DomainError("Stokeslet is singular at x = 0")
    eye = np.eye(3)
    val = (eye[None] / r[:, None, None] + pts[:, :, None] * pts[:, None, :] / (r**3)[:, None, None]) / (8 * np.pi)
    return val[0] if single else val


def stokeslet_grad(x) -> np.ndarray:
    """d_k St_ij, shape (..., 3, 3, 3)."""
    pts, single = _as_points(x)
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r == 0):
        raise DomainError("Stokeslet is singular at x = 0")
    eye = np.eye(3)
    r3 = (r**3)[:, None, None, None]
    r5 = (r**5)[:, None, None, None]
    xi = pts[:, :, None, None]
    xj = pts[:, None, :, None]
    xk = pts[:, None, None, :]
    val = (
        -eye[None, :, :, None] * xk / r3
        + (eye[None, :, None, :] * xj + eye[None, None, :, :] * xi) / r3
        - 3.0 * xi * xj * xk / r5
    ) / (8 * np.pi)
    return val[0] if single else val


def stokeslet_hess(x) -> np.ndarray:
    """d_k d_l St_ij, shape (..., 3, 3, 3, 3); the -3-homogeneous CZ core."""
    pts, single = _as_points(x)
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r == 0):
        raise DomainError("Stokeslet is singular at x = 0")
    eye = np.eye(3)
    M = pts.shape[0]
    r3 = (r**3).reshape(M, 1, 1, 1, 1)
    r5 = (r**5).reshape(M, 1, 1, 1, 1)
    r7 = (r**7).reshape(M, 1, 1, 1, 1)
    xi = pts.reshape(M, 3, 1, 1, 1)
    xj = pts.reshape(M, 1, 3, 1, 1)
    xk = pts.reshape(M, 1, 1, 3, 1)
    xl = pts.reshape(M, 1, 1, 1, 3)
    d_ij = eye.reshape(1, 3, 3, 1, 1)
    d_ik = eye.reshape(1, 3, 1, 3, 1)
    d_il = eye.reshape(1, 3, 1, 1, 3)
    d_jk = eye.reshape(1, 1, 3, 3, 1)
    d_jl = eye.reshape(1, 1, 3, 1, 3)
    d_kl = eye.reshape(1, 1, 1, 3, 3)
    # d_k d_l (delta_ij / r)
    part1 = d_ij * (-d_kl / r3 + 3.0 * xk * xl / r5)
    # d_k d_l (x_i x_j / r^3)
    part2 = (
        (d_ik * d_jl + d_il * d_jk) / r3
        - 3.0 * (d_ik * xj * xl + d_il * xj * xk + d_jk * xi * xl + d_jl * xi * xk + d_kl * xi * xj) / r5
        + 15.0 * xi * xj * xk * xl / r7
    )
    return ((part1 + part2) / (8 * np.pi))[0] if single else (part1 + part2) / (8 * np.pi)


def decay_envelope(x, k: int, re: float, c: float, region: str = "far") -> np.ndarray | float:
    """Theoretical decay envelope for |grad^k O(x, re)|.

    ``region="far"`` uses the wake-weighted envelope
    c re^{k/2} / (|x|^{1+k/2} (1+s(re x))^{1+k/2}); ``region="mid"`` drops
    the wake factor.
    """
    if k not in (0, 1, 2):
        raise DomainError("envelope defined for k in {0, 1, 2}")
    if region not in ("far", "mid"):
        raise DomainError("region must be 'far' or 'mid'")
    pts, single = _as_points(x)
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r == 0):
        raise DomainError("envelope singular at x = 0")
    val = c * re ** (k / 2) / r ** (1 + k / 2)
    if region == "far":
        s = wake_distance(re * pts)
        s = np.atleast_1d(s)
        val = val / (1.0 + s) ** (1 + k / 2)
    return float(val[0]) if single else val

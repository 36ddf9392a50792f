"""
Weighted resolvent bounds, resolvent application and the Eisenstein limit.

Resolvent application and the boundary limit use the exact kernel of the
hyperbolic 3-space, integrated in geodesic polar coordinates about the
evaluation point (where the volume form is sinh^2 r dr dOmega and the
kernel singularity cancels).  Schur bounds handle kernels that depend on
the distance only, using the hyperbolic law of cosines to express the
weight of the integration point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import make_interp_spline
from scipy.special import eval_legendre

from ._fd import diff
from .hamflow import mobius_translate
from .metric import AHMetric, _cutoff
from .parametrix import SpectralParams, model_resolvent_h3, radial_profile


class ResolutionError(RuntimeError):
    """Quadrature did not converge under grid doubling."""


class LimitError(RuntimeError):
    """Richardson corrections failed to decrease."""


def boundary_weight(R) -> np.ndarray:
    """Boundary defining function rho as a function of the distance R to the origin.

    rho = sech R = x / (1 + x^2/4) with x = 2 e^(-R): it agrees with the collar
    variable to relative order x^2, is capped by 1 at the origin and is
    smooth there, with derivatives of moderate size everywhere.
    """
    return 1.0 / np.cosh(np.asarray(R, dtype=float))


def _check_weights(a: float, b: float, lam_imag: float):
    if a + b < 0:
        raise ValueError("weights must satisfy a + b >= 0")
    if not (a > lam_imag and b > lam_imag):
        raise ValueError("weights must exceed Im lambda")


def _require_ball3(M: AHMetric):
    if M.terms or M.n != 2:
        raise NotImplementedError("exact-kernel quadrature is available on the unperturbed ball with n = 2")


# ---------------------------------------------------------------------------
# Schur bounds


@dataclass
class SchurQuadrature:
    r_max: float = 80.0
    panel: float = 0.5
    nodes_per_panel: int = 8
    n_angle: int = 128
    theta_min: float = 1e-22
    R_max: float = 15.0
    n_sup: int = 31

    def doubled(self) -> "SchurQuadrature":
        return SchurQuadrature(self.r_max, self.panel / 2, self.nodes_per_panel, 2 * self.n_angle,
                               self.theta_min, self.R_max, self.n_sup)


def _radial_nodes(q: SchurQuadrature, r_max: float):
    x, w = leggauss(q.nodes_per_panel)
    edges = np.arange(0.0, r_max + 1e-12, q.panel)
    if edges[-1] < r_max:
        edges = np.append(edges, r_max)
    a, b = edges[:-1, None], edges[1:, None]
    r = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    wr = (0.5 * (b - a) * w).ravel()
    return r, wr


def _angle_nodes(q: SchurQuadrature):
    x, w = leggauss(q.n_angle)
    lo, hi = np.log(q.theta_min), np.log(np.pi)
    t = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    th = np.exp(t)
    return th, 0.5 * (hi - lo) * w * th


def _sphere_average(n: int, R: float, r: np.ndarray, b: float, th, wth) -> np.ndarray:
    """Integral over the unit sphere of rho(R')^b at distance r from a point at distance R."""
    s2 = np.sin(0.5 * th) ** 2
    c = np.cosh(R - r)[:, None] + 2 * np.sinh(R) * np.sinh(r)[:, None] * s2[None]
    Rp = np.log(c + np.sqrt(np.maximum(c * c - 1, 0.0)))
    f = boundary_weight(Rp) ** b
    if n == 2:
        return 2 * np.pi * f @ (np.sin(th) * wth)
    return 2 * f @ wth


def _schur_integral(n, kabs, r, wr, R, a, b, th, wth):
    vol = np.sinh(r) ** n
    return boundary_weight(R) ** a * np.sum(wr * kabs * vol * _sphere_average(n, R, r, b, th, wth))


def _sup_over_R(n, kabs, r, wr, a, b, q: SchurQuadrature):
    th, wth = _angle_nodes(q)
    grid = np.linspace(0.0, q.R_max, q.n_sup)
    vals = np.array([_schur_integral(n, kabs, r, wr, R, a, b, th, wth) for R in grid])
    for _ in range(2):
        k = int(np.argmax(vals))
        dR = grid[1] - grid[0] if len(grid) > 1 else q.R_max / q.n_sup
        lo, hi = max(grid[k] - dR, 0.0), grid[k] + dR
        grid = np.linspace(lo, hi, 11)
        vals = np.array([_schur_integral(n, kabs, r, wr, R, a, b, th, wth) for R in grid])
    k = int(np.argmax(vals))
    return float(vals[k]), float(grid[k])


@dataclass
class SchurEntry:
    I: float
    II: float
    bound: float
    sup_point: tuple
    doubling_change: float


def schur_bound(M: AHMetric, kernel_abs, a: float, b: float, lam_imag: float = 0.0,
                quad: SchurQuadrature | None = None, r_max: float | None = None,
                check_doubling: bool = True) -> SchurEntry:
    """Schur bound of the weighted operator rho^a K rho'^b for a kernel |K|(r).

    ``kernel_abs`` maps distances to kernel magnitudes.  The row integral
    I = sup_z rho(z)^a int |K| rho'^b dg(z') and the column integral II
    (a and b exchanged) are evaluated with the sup over the distance of z
    to the origin, which is all that matters on the rotation-invariant ball.
    """
    _check_weights(a, b, lam_imag)
    if M.terms:
        raise NotImplementedError("Schur quadrature requires a rotation-invariant model")
    q = quad or SchurQuadrature()

    def run(qq):
        r, wr = _radial_nodes(qq, r_max or qq.r_max)
        kabs = np.asarray(kernel_abs(r), dtype=float)
        I, R1 = _sup_over_R(M.n, kabs, r, wr, a, b, qq)
        if a == b:
            II, R2 = I, R1  # |K| depends on r only
        else:
            II, R2 = _sup_over_R(M.n, kabs, r, wr, b, a, qq)
        return I, II, (R1, R2)

    I, II, sup = run(q)
    change = 0.0
    if check_doubling:
        I2, II2, _ = run(q.doubled())
        change = max(abs(I2 - I) / I, abs(II2 - II) / II)
        if change > 0.02:
            raise ResolutionError(f"Schur integrals changed by {change:.3g} under grid doubling")
    return SchurEntry(I, II, float(np.sqrt(I * II)), sup, change)


@dataclass
class WeightedNormReport:
    a: float
    b: float
    hs: np.ndarray
    lam: np.ndarray
    I: np.ndarray
    II: np.ndarray
    bounds: np.ndarray
    slope: float
    kappa_used: float
    predicted: float


def resolvent_kernel_abs(M: AHMetric, params: SpectralParams, J: int = 1):
    """|R(lambda)| as a function of r: exact for n = 2, WKB of order J for n = 1.

    R(lambda) = h^2 P(h, sigma)^(-1); on the plane the kernel is
    h^2 K_J built from the radial transport profile.
    """
    lam = params.lam
    if M.n == 2:
        return (lambda r: np.abs(model_resolvent_h3(lam, np.maximum(r, 1e-300)))), None
    prof = radial_profile(M, params, J=J)
    h = params.h

    def kabs(r):
        amp = prof.amplitudes(np.maximum(r, 1e-300))
        A = sum(amp[j] * h**j for j in range(J + 1))
        val = h ** (2 - M.n / 2 - 1) * np.exp(params.sigma.imag * r / h) * np.abs(A)
        return np.where(np.isfinite(val), val, 0.0)

    return kabs, float(prof.r[-1])


def high_energy_scaling(M: AHMetric, a: float, b: float, h_list, lam_imag: float = -0.3, kappa: float = 0.0,
                        J: int = 1, quad: SchurQuadrature | None = None) -> WeightedNormReport:
    """Weighted Schur bounds of R(lambda) at lambda = 1/h + i lam_imag and their log-log slope."""
    hs = np.asarray(sorted(h_list, reverse=True), dtype=float)
    if len(hs) < 4:
        raise ValueError("need at least four values of h")
    _check_weights(a, b, lam_imag)
    Is, IIs, bounds, lams = [], [], [], []
    for h in hs:
        lam = 1.0 / h + 1j * lam_imag
        p = SpectralParams.from_lambda(lam)
        kabs, rmax = resolvent_kernel_abs(M, p, J)
        e = schur_bound(M, kabs, a, b, lam_imag, quad, r_max=rmax)
        Is.append(e.I)
        IIs.append(e.II)
        bounds.append(e.bound)
        lams.append(lam)
    bounds = np.asarray(bounds)
    slope = float(np.polyfit(np.log(1.0 / hs), np.log(bounds), 1)[0])
    return WeightedNormReport(a, b, hs, np.asarray(lams), np.asarray(Is), np.asarray(IIs), bounds, slope,
                              kappa, M.n / 2 - 1 + kappa)


# ---------------------------------------------------------------------------
# separable test functions g(R) Y_l(omega)


@dataclass
class SeparableFunction:
    """g(R) times a zonal harmonic of degree l about the last axis.

    ``R`` is a uniform grid from 0; g vanishes beyond ``R[-1]``.  Even or odd
    reflection through R = 0 according to the parity of l keeps differences
    centred at the origin.
    """

    n: int
    R: np.ndarray
    g: np.ndarray
    degree: int = 0
    _spl: object = field(default=None, repr=False)

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        self.g = np.asarray(self.g)
        Rx, gx = self.extended()
        self._spl = make_interp_spline(Rx, gx, k=5)

    def extended(self):
        sgn = (-1) ** self.degree
        return np.concatenate([-self.R[:0:-1], self.R]), np.concatenate([sgn * self.g[:0:-1], self.g])

    @property
    def support(self) -> float:
        nz = np.flatnonzero(np.abs(self.g) > 0)
        return float(self.R[nz[-1] + 1]) if nz.size and nz[-1] + 1 < self.R.size else float(self.R[-1])

    def radial(self, R) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        out = np.zeros(R.shape, dtype=self.g.dtype)
        m = R <= self.R[-1]
        out[m] = self._spl(R[m])
        return out

    def harmonic(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        if self.n == 2:
            return eval_legendre(self.degree, np.clip(omega[..., -1], -1, 1))
        return np.cos(self.degree * np.arctan2(omega[..., 1], omega[..., 0]))

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        rad = np.linalg.norm(z, axis=-1)
        R = 2 * np.arctanh(np.minimum(rad, 1 - 1e-16))
        om = z / np.maximum(rad, 1e-300)[..., None]
        if self.degree:
            return self.radial(R) * self.harmonic(om)
        return self.radial(R)

    def scaled(self, c) -> "SeparableFunction":
        return SeparableFunction(self.n, self.R, c * self.g, self.degree)

    def __add__(self, other: "SeparableFunction") -> "SeparableFunction":
        if other.degree != self.degree or not np.array_equal(other.R, self.R):
            raise ValueError("incompatible separable functions")
        return SeparableFunction(self.n, self.R, self.g + other.g, self.degree)


def gaussian_bump(n: int = 2, width: float = 0.5, degree: int = 0, dR: float = 0.005,
                  cut: float = 6.0) -> SeparableFunction:
    """exp(-R^2 / 2 w^2) sinh(R)^l, smoothly tapered to zero at R = cut * width.

    The taper keeps repeated differences of g free of truncation jumps.
    """
    Rs = cut * width
    R = dR * np.arange(int(np.ceil(Rs / dR)) + 1)
    g = np.exp(-(R**2) / (2 * width**2)) * np.sinh(R) ** degree * _cutoff(R, 0.7 * Rs, Rs)[0]
    g[R >= Rs] = 0.0
    return SeparableFunction(n, R, g, degree)


def _radial_derivatives(f: SeparableFunction, width: int = 9):
    Rx, gx = f.extended()
    dR = f.R[1] - f.R[0]
    k = f.R.size - 1
    return diff(gx, dR, 1, width=width)[k:], diff(gx, dR, 2, width=width)[k:]


def _weighted_laplacian(f: SeparableFunction, b: float) -> SeparableFunction:
    """rho^(-b) Delta_g (rho^b g Y_l) with the weight differentiated exactly.

    With omega = (log rho^b)' = -b tanh R the conjugated Laplacian reads
    -(g'' + 2 omega g' + (omega' + omega^2) g) - n coth R (g' + omega g)
    + l(l+n-1) g / sinh^2 R.
    """
    n, l = f.n, f.degree
    R, g = f.R, f.g
    g1, g2 = _radial_derivatives(f)
    om = -b * np.tanh(R)
    dom = -b / np.cosh(R) ** 2
    out = np.empty_like(g2)
    pos = R > 0
    Rp = R[pos]
    out[pos] = (-(g2[pos] + 2 * om[pos] * g1[pos] + (dom[pos] + om[pos] ** 2) * g[pos])
                - n / np.tanh(Rp) * (g1[pos] + om[pos] * g[pos])
                + l * (l + n - 1) * g[pos] / np.sinh(Rp) ** 2)
    if l == 0:
        # at the origin g' = 0, coth R g' -> g'' and coth R tanh R -> 1
        out[~pos] = -(n + 1) * g2[~pos] + (b + n * b) * g[~pos]
    else:
        # the radial coefficient of a smooth function vanishes like R^l at the origin
        out[~pos] = 0.0
    return SeparableFunction(n, R, out, l)


def laplacian_separable(f: SeparableFunction) -> SeparableFunction:
    """Delta_g (g Y_l) on the ball: -g'' - n coth R g' + l(l+n-1) g / sinh^2 R."""
    return _weighted_laplacian(f, 0.0)


def conjugated_operator(f: SeparableFunction, b: float) -> SeparableFunction:
    """P_b v = rho^(-b) Delta_g (rho^b v) - (n^2/4) v."""
    lap = _weighted_laplacian(f, b)
    return SeparableFunction(f.n, f.R, lap.g - f.n**2 / 4 * f.g, f.degree)


def weighted(f: SeparableFunction, b: float) -> SeparableFunction:
    """rho^b f."""
    return SeparableFunction(f.n, f.R, boundary_weight(f.R) ** b * f.g, f.degree)


# ---------------------------------------------------------------------------
# resolvent application by quadrature


@dataclass
class PolarQuadrature:
    n_r: int = 192
    n_theta: int = 192
    n_phi: int | None = None  # default: 1 for radial integrands, else 4 l + 8

    def doubled(self) -> "PolarQuadrature":
        return PolarQuadrature(2 * self.n_r, 2 * self.n_theta, None if self.n_phi is None else 2 * self.n_phi)


def _frame(axis):
    axis = axis / np.linalg.norm(axis)
    k = np.argmin(np.abs(axis))
    e1 = np.eye(3)[k] - axis[k] * axis
    e1 /= np.linalg.norm(e1)
    return axis, e1, np.cross(axis, e1)


def _polar_nodes(z, R_sup, q: PolarQuadrature, n_phi: int):
    """Nodes and weights covering the ball of radius R_sup about 0.

    The polar axis points from z towards the origin, so a radial integrand
    does not depend on the azimuth.  Angles are clustered towards the axis.
    """
    z = np.asarray(z, dtype=float)
    rad = np.linalg.norm(z)
    d = 2 * np.arctanh(rad)
    if d > R_sup:
        r_lo, r_hi = d - R_sup, d + R_sup
        th_max = np.arcsin(min(np.sinh(R_sup) / np.sinh(d), 1.0))
    else:
        r_lo, r_hi = 0.0, d + R_sup
        th_max = np.pi
    xr, wr = leggauss(q.n_r)
    r = 0.5 * (r_hi - r_lo) * xr + 0.5 * (r_hi + r_lo)
    wr = 0.5 * (r_hi - r_lo) * wr
    xt, wt = leggauss(q.n_theta)
    u = 0.5 * (xt + 1)
    th = th_max * u**2
    wt = th_max * u * wt * np.sin(th)
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    wp = np.full(n_phi, 2 * np.pi / n_phi)
    axis = -z if rad > 0 else np.array([0.0, 0.0, 1.0])
    a, e1, e2 = _frame(axis)
    dirs = (np.cos(th)[:, None, None] * a + np.sin(th)[:, None, None]
            * (np.cos(ph)[None, :, None] * e1 + np.sin(ph)[None, :, None] * e2))  # (T, P, 3)
    w_pts = np.tanh(r / 2)[:, None, None, None] * dirs[None]
    pts = mobius_translate(-z[None], w_pts.reshape(-1, 3)).reshape(w_pts.shape)
    W = wr[:, None, None] * wt[None, :, None] * wp[None, None, :]
    return pts.reshape(-1, 3), r, W, np.sinh(r) ** 2


def apply_resolvent(M: AHMetric, lam: complex, f, targets, quad: PolarQuadrature | None = None,
                    support: float | None = None) -> np.ndarray:
    """(R(lambda) f)(z) at ball-chart targets with the exact kernel.

    ``f`` is a SeparableFunction (or any callable of ball points together with
    ``support``, the radius of a ball about the origin containing supp f).
    """
    _require_ball3(M)
    q = quad or PolarQuadrature()
    R_sup = f.support if support is None else support
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    out = np.empty(len(targets), dtype=complex)
    deg = getattr(f, "degree", None)
    n_phi = q.n_phi or (1 if deg == 0 else 4 * (deg or 4) + 8)
    for i, z in enumerate(targets):
        pts, r, W, vol = _polar_nodes(z, R_sup, q, n_phi)
        kern = np.exp(-1j * complex(lam) * r) * np.sinh(r) / (4 * np.pi)  # kernel times sinh^2 r
        vals = f(pts).reshape(len(r), -1)
        out[i] = np.sum((kern[:, None] * vals) * W.reshape(len(r), -1))
    return out


@dataclass
class ResolventResidual:
    R: np.ndarray
    u: np.ndarray
    relative_l2: float


def resolvent_pde_residual(M: AHMetric, lam: complex, f: SeparableFunction, R_range=(0.2, None), dR: float = 0.02,
                           quad: PolarQuadrature | None = None) -> ResolventResidual:
    """Relative L^2 error of (Delta_g - n^2/4 - lambda^2) R(lambda) f - f on a radial line.

    Differences are taken along the last axis, where the zonal harmonic
    equals one; the angular part of the Laplacian is applied exactly.
    """
    lo, hi = R_range
    hi = f.support + 1.0 if hi is None else hi
    R = np.arange(lo - 3 * dR, hi + 3 * dR + 1e-12, dR)
    z = np.tanh(R / 2)[:, None] * np.array([0.0, 0.0, 1.0])
    u = apply_resolvent(M, lam, f, z, quad)
    n, l = f.n, f.degree
    lap = -diff(u, dR, 2) - n * diff(u, dR, 1) / np.tanh(R) + l * (l + n - 1) * u / np.sinh(R) ** 2
    res = lap - (n * n / 4 + complex(lam) ** 2) * u - f.radial(R)
    m = slice(3, -3)
    w = np.sinh(R[m]) ** n
    rel = np.sqrt(np.sum(w * np.abs(res[m]) ** 2) / np.sum(w * np.abs(f.radial(R[m])) ** 2))
    return ResolventResidual(R[m], u[m], float(rel))


# ---------------------------------------------------------------------------
# Eisenstein boundary limit


@dataclass
class EisensteinTrace:
    lam: complex
    y: np.ndarray  # boundary points (unit vectors)
    values: np.ndarray  # extrapolated limit
    x_levels: np.ndarray
    raw: np.ndarray  # (levels, points) of x^(-n/2 - i lam) R f
    corrections: np.ndarray  # magnitudes of successive extrapolation corrections
    anisotropy: float


def richardson_limit(x, vals, powers=(2, 4)):
    """Extrapolate samples at decreasing x to x = 0 with the given powers of x.

    Returns the limit and the magnitudes of the successive corrections
    (raw value at the smallest x to the first extrapolant, and so on).
    """
    x = np.asarray(x, dtype=float)
    vals = np.asarray(vals)
    ests = [vals[-1]]
    for k in range(1, min(len(powers), len(x) - 1) + 1):
        xs = x[-(k + 1):]
        V = np.stack([np.ones_like(xs)] + [xs**p for p in powers[:k]], axis=1)
        coef = np.linalg.solve(V, vals[-(k + 1):].reshape(k + 1, -1))
        ests.append(coef[0].reshape(vals.shape[1:]))
    corr = np.array([np.max(np.abs(ests[i + 1] - ests[i])) for i in range(len(ests) - 1)])
    return ests[-1], corr


def eisenstein_apply(M: AHMetric, lam: complex, f, y, x_levels=(1e-2, 5e-3, 2.5e-3),
                     quad: PolarQuadrature | None = None, support: float | None = None) -> EisensteinTrace:
    """x^(-n/2 - i lam) (R(lambda) f)(x, y) at x_levels, extrapolated to x = 0.

    The expansion of the rescaled resolvent in the collar variable of the
    ball contains even powers of x only, so the extrapolation removes the
    x^2 and x^4 terms.
    """
    _require_ball3(M)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    y = y / np.linalg.norm(y, axis=-1, keepdims=True)
    xl = np.asarray(sorted(x_levels, reverse=True), dtype=float)
    R_sup = f.support if support is None else support
    if np.any(2 * np.exp(-R_sup) < 2 * xl.max()):
        raise ValueError("f must be supported in x >= 2 max(x_levels)")
    n = M.n
    raw = np.empty((len(xl), len(y)), dtype=complex)
    for k, x in enumerate(xl):
        rho = (2 - x) / (2 + x)
        u = apply_resolvent(M, lam, f, rho * y, quad, support=R_sup)
        raw[k] = x ** (-n / 2 - 1j * complex(lam)) * u
    lim, corr = richardson_limit(xl, raw)
    if len(corr) > 1 and corr[-1] > corr[-2]:
        raise LimitError(f"extrapolation corrections grow: {corr}")
    aniso = float(np.ptp(np.abs(lim)) / np.max(np.abs(lim))) if len(y) > 1 else 0.0
    return EisensteinTrace(complex(lam), y, lim, xl, raw, corr, aniso)


def eisenstein_radial_oracle(lam: complex, f: SeparableFunction, n_quad: int = 4000) -> complex:
    """Boundary limit for radial f on the ball: (2^(-i lam)/lam) int f sin(lam s) sinh s ds."""
    if f.degree != 0 or f.n != 2:
        raise ValueError("oracle needs a radial function on the 3-ball")
    s = np.linspace(0.0, f.R[-1], n_quad + 1)
    ws = np.full(s.size, 2.0)
    ws[1::2] = 4.0
    ws[0] = ws[-1] = 1.0
    ws *= (s[1] - s[0]) / 3
    lam = complex(lam)
    return 2 ** (-1j * lam) / lam * np.sum(ws * f.radial(s) * np.sin(lam * s) * np.sinh(s))


@dataclass
class CommutationReport:
    lam: complex
    b: float
    order: int
    lhs: np.ndarray
    rhs: np.ndarray
    residual: float


def eisenstein_commutation_check(M: AHMetric, lam: complex, v: SeparableFunction, b: float, y=None,
                                 order: int = 1, quad: PolarQuadrature | None = None,
                                 x_levels=(1e-2, 5e-3, 2.5e-3)) -> CommutationReport:
    """Relative L^2 residual of lambda^(2k) E(rho^b v) = E(rho^b P_b^k v) over boundary points."""
    lam = complex(lam)
    if not b > M.n / 2 + abs(lam.imag):
        raise ValueError("the weight must satisfy b > n/2 + |Im lambda|")
    if y is None:
        y = _boundary_grid(M.n, 12)
    if not np.any(v.g):
        z = np.zeros(len(np.atleast_2d(y)), dtype=complex)
        return CommutationReport(lam, b, order, z, z, 0.0)
    w = v
    for _ in range(order):
        w = conjugated_operator(w, b)
    lhs = lam ** (2 * order) * eisenstein_apply(M, lam, weighted(v, b), y, x_levels, quad).values
    rhs = eisenstein_apply(M, lam, weighted(w, b), y, x_levels, quad,
                           support=weighted(v, b).support).values
    res = float(np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))
    return CommutationReport(lam, b, order, lhs, rhs, res)


def _boundary_grid(n: int, count: int) -> np.ndarray:
    from .hamflow import sphere_directions

    return sphere_directions(n, count)


@dataclass
class DecayFit:
    lams: np.ndarray
    norms: np.ndarray  # ||E(lambda) rho^b v||
    norms_image: np.ndarray  # ||E(lambda) rho^b P_b v||
    slope: float
    slope_image: float
    gain: float
    floor_hit: bool


def eisenstein_decay_fit(M: AHMetric, lams, v: SeparableFunction, b: float, y=None,
                         quad: PolarQuadrature | None = None, floor: float = 1e-12) -> DecayFit:
    """Log-log slopes of ||E(lambda) rho^b v|| and of the identity-based estimate.

    Both norms are computed by independent quadratures.  The identity
    E(lambda) rho^b P_b v = lambda^2 E(lambda) rho^b v predicts that the
    slope of the image exceeds the slope of v by two, i.e. each application
    of the conjugated operator buys a factor |lambda|^(-2) in the decay of v.
    """
    lams = np.asarray(lams, dtype=float)
    if y is None:
        y = _boundary_grid(M.n, 8)
    Pv = conjugated_operator(v, b)
    wv, wP = weighted(v, b), weighted(Pv, b)
    n1, n2 = [], []
    for lam in lams:
        n1.append(np.linalg.norm(eisenstein_apply(M, lam, wv, y, quad=quad).values))
        n2.append(np.linalg.norm(eisenstein_apply(M, lam, wP, y, quad=quad, support=wv.support).values))
    n1, n2 = np.asarray(n1), np.asarray(n2)
    s1 = float(np.polyfit(np.log(lams), np.log(n1), 1)[0])
    s_img = float(np.polyfit(np.log(lams), np.log(n2), 1)[0])
    return DecayFit(lams, n1, n2, s1, s_img, s_img - s1, bool(np.min(n1) < floor))


# ---------------------------------------------------------------------------
# direct checks


@dataclass
class SchurValidity:
    bound: float
    ratios: np.ndarray  # ||rho^a |K| rho'^b f|| / ||f|| for the sampled f
    operator_norm: float  # largest singular value of the discretized operator
    n_points: int

    @property
    def passed(self) -> bool:
        return bool(np.max(self.ratios) <= self.bound and self.operator_norm <= self.bound)


def schur_validity_check(M: AHMetric, kernel_abs, a: float, b: float, bound: float, n_samples: int = 10,
                         R_cut: float = 5.0, n_R: int = 24, n_dir: int = 80,
                         rng: np.random.Generator | None = None) -> SchurValidity:
    """Apply the weighted operator rho^a |K| rho'^b to random f on a point cloud.

    The cloud is a product of Gauss nodes in the distance R to the origin and
    quasi-uniform directions, with weights from the volume form
    sinh^n R dR dOmega.  The diagonal (singular) entries are dropped.
    """
    from .hamflow import sphere_directions

    if M.terms:
        raise NotImplementedError("the direct check requires a rotation-invariant model")
    rng = rng or np.random.default_rng(0)
    n = M.n
    xg, wg = leggauss(n_R)
    R = 0.5 * R_cut * (xg + 1)
    wR = 0.5 * R_cut * wg * np.sinh(R) ** n
    dirs = sphere_directions(n, n_dir)
    area = 4 * np.pi if n == 2 else 2 * np.pi
    Rp = np.repeat(R, len(dirs))
    w = np.repeat(wR, len(dirs)) * area / len(dirs)
    om = np.tile(dirs, (n_R, 1))
    s2 = np.clip(0.5 * (1 - om @ om.T), 0.0, 1.0)
    c = np.cosh(Rp[:, None] - Rp[None]) + 2 * np.sinh(Rp)[:, None] * np.sinh(Rp)[None] * s2
    d = np.arccosh(np.maximum(c, 1.0))
    np.fill_diagonal(d, 1.0)
    K = np.asarray(kernel_abs(d.ravel()), dtype=float).reshape(d.shape)
    np.fill_diagonal(K, 0.0)
    rho = boundary_weight(Rp)
    sw = np.sqrt(w)
    B = (sw * rho**a)[:, None] * K * (rho**b * sw)[None]
    ratios = []
    for _ in range(n_samples):
        f = rng.standard_normal(len(Rp)) + 1j * rng.standard_normal(len(Rp))
        ratios.append(np.linalg.norm(B @ f) / np.linalg.norm(f))
    return SchurValidity(float(bound), np.asarray(ratios), float(np.linalg.norm(B, 2)), len(Rp))


@dataclass
class HolomorphyReport:
    lams: np.ndarray
    residuals: np.ndarray  # relative Cauchy-Riemann residual at each lambda

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals))


def eisenstein_holomorphy_check(M: AHMetric, lams, f: SeparableFunction, y0=None, delta: float = 1e-3,
                                quad: PolarQuadrature | None = None) -> HolomorphyReport:
    """Four-point Cauchy-Riemann residual of lambda -> (E(lambda) f)(y0).

    The derivative along the real axis is compared with the derivative along
    the imaginary axis, both by centred differences of step ``delta``.
    """
    y0 = np.array([[0.0] * M.n + [1.0]]) if y0 is None else np.atleast_2d(y0)
    res = []
    for lam in np.atleast_1d(lams).astype(complex):
        E = {s: eisenstein_apply(M, lam + s, f, y0, quad=quad).values[0]
             for s in (delta, -delta, 1j * delta, -1j * delta)}
        d_re = (E[delta] - E[-delta]) / (2 * delta)
        d_im = (E[1j * delta] - E[-1j * delta]) / (2j * delta)
        res.append(abs(d_re - d_im) / abs(d_re))
    return HolomorphyReport(np.atleast_1d(lams).astype(complex), np.asarray(res))

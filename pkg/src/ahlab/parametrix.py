"""
Geometric-optics approximation of the semiclassical resolvent kernel.

The operator is P(h, sigma) = h^2 (Delta_g - n^2/4) - sigma^2 with the
positive Laplacian.  Off the diagonal its inverse is approximated by

    K_J(z, z') = h^(-n/2-1) exp(-i sigma r / h) sum_{j<=J} a_j(z, z') h^j,

where r is the geodesic distance and the a_j solve transport equations
along the geodesic from z'.  The amplitudes only need the spreading of
nearby geodesics, which is read off the Jacobi fields carried by the flows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from ._fd import diff
from .hamflow import (
    CausticError,
    PhasePoint,
    Trajectory,
    det_perp_from_phi,
    flow,
    flow_batch,
    shoot,
)
from .metric import BALL, AHMetric, radius_of_x


class BoxError(ValueError):
    """Spectral parameter outside the box around sigma = 1."""


# ---------------------------------------------------------------------------
# spectral parameters


@dataclass(frozen=True)
class SpectralParams:
    h: float
    sigma: complex
    eps: float = 0.25
    C: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.h < 1.0:
            raise BoxError(f"h = {self.h} must lie in (0, 1)")
        s = complex(self.sigma)
        object.__setattr__(self, "sigma", s)
        if abs(s.real - 1.0) > self.eps * (1 + 1e-14) or abs(s.imag) > self.C * self.h * (1 + 1e-12):
            raise BoxError(f"sigma = {s} is outside the box (eps={self.eps}, C={self.C}, h={self.h})")

    @property
    def lam(self) -> complex:
        return self.sigma / self.h

    @classmethod
    def from_lambda(cls, lam: complex, eps: float = 0.25, C: float = 1.0) -> "SpectralParams":
        lam = complex(lam)
        if lam.real == 0.0:
            raise BoxError("Re lambda must be nonzero")
        h = 1.0 / abs(lam.real)
        return cls(h, lam * h, eps, C)

    def with_h(self, h: float, sigma: complex | None = None) -> "SpectralParams":
        return SpectralParams(h, self.sigma if sigma is None else sigma, self.eps, self.C)


def model_resolvent_h3(lam: complex, r0) -> np.ndarray:
    """Outgoing resolvent kernel of the hyperbolic 3-space, exp(-i lam r)/(4 pi sinh r)."""
    r0 = np.asarray(r0, dtype=float)
    if np.any(r0 <= 0):
        raise ValueError("r0 must be positive")
    return np.exp(-1j * complex(lam) * r0) / (4 * np.pi * np.sinh(r0))


def model_kernel_h3(params: SpectralParams, r0) -> np.ndarray:
    """Inverse kernel of P(h, sigma) on the hyperbolic 3-space."""
    r0 = np.asarray(r0, dtype=float)
    if np.any(r0 <= 0):
        raise ValueError("r0 must be positive")
    h = params.h
    return h**-2 * np.exp(-1j * params.sigma * r0 / h) / (4 * np.pi * np.sinh(r0))


def radial_operator_residual(lam: complex, r, step: float = 1e-2) -> np.ndarray:
    """Relative residual of (-d_r^2 - 2 coth r d_r - 1 - lam^2) R0 by central differences."""
    r = np.asarray(r, dtype=float)
    offs = np.arange(-3, 4)
    w2 = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90]) / step**2
    w1 = np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60]) / step
    F = model_resolvent_h3(lam, r[..., None] + step * offs)
    f = F[..., 3]
    d2 = F @ w2
    d1 = F @ w1
    res = -d2 - 2 / np.tanh(r) * d1 - (1 + complex(lam) ** 2) * f
    scale = np.abs(complex(lam)) ** 2 * np.abs(f)
    return np.abs(res) / scale


def indicial_roots(n: int, params: SpectralParams) -> tuple:
    """Roots alpha of h^2(-alpha^2 + n alpha - n^2/4) - sigma^2 = 0."""
    c = 1j * params.sigma / params.h
    return n / 2 + c, n / 2 - c


def indicial_symbol(n: int, params: SpectralParams, alpha) -> np.ndarray:
    """Value of the indicial operator on x^alpha divided by x^alpha."""
    a = np.asarray(alpha, dtype=complex)
    return params.h**2 * (-(a**2) + n * a - n * n / 4) - params.sigma**2


def _a0_constant(n: int, sigma: complex) -> complex:
    """Near-diagonal normalisation: a_0 ~ const * r^(-n/2) as r -> 0."""
    if n == 2:
        return 1.0 / (4 * np.pi)
    if n == 1:
        # flat two-dimensional outgoing kernel -(i/4) H_0^(2)(lam r) at large lam r
        return np.exp(-0.25j * np.pi) / np.sqrt(8 * np.pi * complex(sigma))
    raise ValueError("amplitude normalisation is available for n = 1, 2")


# ---------------------------------------------------------------------------
# eikonal check


@dataclass
class EikonalReport:
    max_residual: float
    residuals: np.ndarray
    skipped: int


def eikonal_residual(M: AHMetric, pairs, rel_step: float = 1e-3) -> EikonalReport:
    """max |p(z, d_z r(z, z')) - 1/2| with the gradient from central differences.

    ``pairs`` is an (N, 2, d) array of (z, z'); r is differentiated in z.  The
    step is a fixed fraction of min(r, 1) in geodesic units so that the
    differences resolve the cone singularity of r near the diagonal.
    """
    pairs = np.asarray(pairs, dtype=float)
    z, zp = pairs[:, 0], pairs[:, 1]
    N, d = z.shape
    try:
        base = shoot(M, zp, z)
    except Exception:
        base = None
    res = np.full(N, np.nan)
    skipped = 0
    for i in range(N):
        try:
            r0 = base.r[i] if base is not None else shoot(M, zp[i : i + 1], z[i : i + 1]).r[0]
            conf = 0.5 * (1 - z[i] @ z[i])  # coordinate length of a unit geodesic step
            dz = rel_step * min(r0, 1.0) * conf
            pts = z[i] + dz * np.concatenate([np.eye(d), -np.eye(d)])
            rr = shoot(M, np.repeat(zp[i : i + 1], 2 * d, 0), pts).r
            grad = (rr[:d] - rr[d:]) / (2 * dz)
            gs = M.ball_eval(z[i : i + 1], derivs=False)[1][0]
            res[i] = abs(0.5 * grad @ gs @ grad - 0.5)
        except Exception:
            skipped += 1
    ok = np.isfinite(res)
    return EikonalReport(float(np.max(res[ok])) if ok.any() else np.nan, res, skipped)


# ---------------------------------------------------------------------------
# transport along a single trajectory


@dataclass
class AmplitudeTrace:
    r: np.ndarray  # arclength samples (>= r_init)
    a: np.ndarray  # (J+1, K) complex amplitudes
    x: np.ndarray  # collar variable along the curve
    theta: np.ndarray  # normalised Jacobi determinant
    r_init: float

    @property
    def order(self) -> int:
        return self.a.shape[0] - 1


def _solve_transport(r, theta, b, a_init, theta_init):
    """Solve -2 A' + (Delta r) A = b with Delta r = -(log theta)'.

    With A = theta^(-1/2) B the equation reads B' = -theta^(1/2) b / 2.
    """
    sq = np.sqrt(theta)
    B = a_init * np.sqrt(theta_init) - 0.5 * _cumint(sq * b, r)
    return B / sq


def _cumint(f, r, axis=-1):
    """Cumulative Simpson integral of complex samples, zero at the first node."""
    f = np.asarray(f)
    out = cumulative_simpson(f.real, x=r, axis=axis, initial=0.0)
    if np.iscomplexobj(f):
        out = out + 1j * cumulative_simpson(f.imag, x=r, axis=axis, initial=0.0)
    return out


def transport_solve(M: AHMetric, traj: Trajectory, params: SpectralParams, J: int = 0, sources=None,
                    r_init: float = 0.1, init=None) -> AmplitudeTrace:
    """Amplitudes along a unit-speed trajectory started at the source point.

    ``sources`` is a sequence of J+1 arrays (or callables of r) giving the
    right-hand sides b_j on the samples with r >= r_init; the default is the
    homogeneous equation for a_0.  Higher orders of the resolvent hierarchy
    need transverse derivatives and are computed by :func:`fan_amplitudes`
    or, for rotation-invariant models, :func:`radial_profile`.
    ``init`` overrides the initial values a_j(r_init) (default: the
    near-diagonal normalisation for a_0 and zero otherwise).
    """
    if abs(traj.energies[0] - 0.5) > 1e-8:
        raise ValueError("trajectory must have unit speed")
    if traj.det_perp is None:
        raise ValueError("trajectory was computed without Jacobi fields")
    if J > 0 and sources is None:
        raise ValueError("higher transport orders need explicit sources")
    r_all = traj.times
    th_all = traj.det_perp
    sel = r_all > 0
    if np.any(th_all[sel] <= 0):
        raise CausticError("Jacobi determinant vanished along the trajectory")
    keep = r_all >= r_init - 1e-12
    r = r_all[keep]
    th = th_all[keep]
    if r.size < 3:
        raise ValueError("trajectory has too few samples beyond r_init")
    if abs(r[0] - r_init) > 1e-12:
        rs, ls = r_all[sel], np.log(th_all[sel])
        th_init = float(np.exp(CubicSpline(rs, ls)(r_init)))
        r = np.concatenate([[r_init], r])
        th = np.concatenate([[th_init], th])
    th_init = th[0]
    n = M.n
    if init is None:
        init = [_a0_constant(n, params.sigma) * np.sinh(r_init) ** (-n / 2)] + [0.0] * J
    a = np.zeros((J + 1, r.size), dtype=complex)
    for j in range(J + 1):
        if sources is None:
            b = np.zeros(r.size)
        else:
            b = sources[j](r) if callable(sources[j]) else np.asarray(sources[j], dtype=complex)
            if b.shape != r.shape:
                raise ValueError("source samples must match the trajectory samples beyond r_init")
        a[j] = _solve_transport(r, th, b, init[j], th_init)
    xs = np.interp(r, r_all, traj.x)
    return AmplitudeTrace(r, a, xs, th, r_init)


def boundary_exponent_fit(trace: AmplitudeTrace, decade: float = 10.0) -> float:
    """Slope of log |a_0| against log x over the last decade of x."""
    x = trace.x
    xmin = np.min(x)
    if xmin > 1e-3:
        raise ValueError("insufficient boundary samples: the trace must reach x <= 1e-3")
    m = x <= decade * xmin
    if np.count_nonzero(m) < 5:
        raise ValueError("insufficient boundary samples in the last decade")
    return float(np.polyfit(np.log(x[m]), np.log(np.abs(trace.a[0][m])), 1)[0])


# ---------------------------------------------------------------------------
# radial reduction on rotation-invariant models


@dataclass
class RadialProfile:
    """Transport amplitudes as functions of r for a rotation-invariant model."""

    n: int
    r: np.ndarray
    theta: np.ndarray
    a: np.ndarray  # (J+1, K)
    params: SpectralParams
    r_init: float
    _splines: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        w = np.exp(self.n * self.r / 2)
        self._splines = [(CubicSpline(self.r, (aj * w).real), CubicSpline(self.r, (aj * w).imag))
                         for aj in self.a]

    def amplitudes(self, r) -> np.ndarray:
        """a_j(r) for j = 0..J; below r_init the near-diagonal form is used."""
        r = np.asarray(r, dtype=float)
        out = np.zeros((self.a.shape[0],) + r.shape, dtype=complex)
        inside = r < self.r_init
        rr = np.clip(r, self.r_init, self.r[-1])
        w = np.exp(-self.n * rr / 2)
        for j, (sr, si) in enumerate(self._splines):
            out[j] = (sr(rr) + 1j * si(rr)) * w
        out[:, r > self.r[-1]] = np.nan
        c = _a0_constant(self.n, self.params.sigma)
        out[0, inside] = c * np.sinh(r[inside]) ** (-self.n / 2)
        out[1:, inside] = 0.0
        return out


def radial_profile(M: AHMetric, params: SpectralParams, J: int = 1, r_max: float = 40.0, ds: float = 0.0025,
                   r_init: float = 0.1) -> RadialProfile:
    """Transport hierarchy along one ray from the origin of a rotation-invariant model.

    The amplitudes are independent of the direction, so the Laplacian
    reduces to its radial part; the ray is followed into the collar chart
    where the spreading stays accurate far out.  Samples are uniform in
    log r, which resolves the r^(-n/2) behaviour near the source.
    """
    if M.terms:
        raise ValueError("radial reduction requires a rotation-invariant model")
    n, d = M.n, M.dim
    s = np.log(r_init) + ds * np.arange(int(np.ceil(np.log(r_max / r_init) / ds)) + 1)
    r = np.exp(s)
    start = PhasePoint.unit(M, BALL, np.zeros(d), np.eye(d)[0])
    traj = flow(M, start, r[-1], x_min=np.exp(-r[-1]), t_eval=r)
    # chart switches add event samples between grid points
    k = np.clip(np.searchsorted(traj.times, r - 1e-13), 0, traj.times.size - 1)
    if not np.allclose(traj.times[k], r, rtol=1e-13, atol=0):
        raise RuntimeError("radial flow did not reach the requested grid")
    th = traj.det_perp[k]
    if np.any(th <= 0):
        raise CausticError("Jacobi determinant vanished on the radial ray")

    def d1(f):
        return diff(f, ds, 1) / r

    def d2(f):
        return (diff(f, ds, 2) - diff(f, ds, 1)) / r**2

    dlog = d1(np.log(th))
    a = np.zeros((J + 1, r.size), dtype=complex)
    c = _a0_constant(n, params.sigma) * np.sinh(r_init) ** (-n / 2)
    a[0] = _solve_transport(r, th, np.zeros(r.size), c, th[0])
    for j in range(1, J + 1):
        lap = -d2(a[j - 1]) - dlog * d1(a[j - 1])
        S = -(1j / params.sigma) * (lap - n * n / 4 * a[j - 1])
        a[j] = _solve_transport(r, th, S, 0.0, th[0])
    return RadialProfile(n, r, th, a, params, r_init)


# ---------------------------------------------------------------------------
# ray fans in geodesic polar coordinates


@dataclass
class RayFan:
    """Geodesics from one source on a grid of directions (alpha) and radii r.

    Arrays are indexed (alpha_1, ..., alpha_n, r).  ``G_inv`` is the inverse
    angular metric in the alpha coordinates, ``sqrt_G`` its root determinant
    and ``theta`` the normalised spreading (sinh^n r on the ball).
    """

    n: int
    source: np.ndarray
    r: np.ndarray
    alpha: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    sqrt_G: np.ndarray
    G_inv: np.ndarray

    @property
    def dr(self) -> float:
        return float(self.r[1] - self.r[0])

    @property
    def dalpha(self) -> float:
        return float(self.alpha[1] - self.alpha[0])

    @property
    def center(self) -> tuple:
        return (len(self.alpha) // 2,) * self.n


def _g_frame(g0: np.ndarray, e0: np.ndarray) -> np.ndarray:
    """g0-orthonormal basis whose first vector is parallel to e0."""
    d = len(e0)
    vecs = [e0 / np.sqrt(e0 @ g0 @ e0)]
    for k in np.argsort(np.abs(e0)):
        w = np.eye(d)[k]
        for v in vecs:
            w = w - (v @ g0 @ w) * v
        nw = np.sqrt(w @ g0 @ w)
        if nw > 1e-6:
            vecs.append(w / nw)
        if len(vecs) == d:
            break
    return np.array(vecs)


def build_fan(M: AHMetric, source, direction, r_max: float, dr: float = 0.01, n_alpha: int = 9,
              dalpha: float = 0.05, r_init: float = 0.1) -> RayFan:
    """Flow a grid of geodesics around ``direction`` (a ball-chart vector at source)."""
    n, d = M.n, M.dim
    z0 = np.asarray(source, dtype=float)
    g0 = M.ball_eval(z0[None], derivs=False)[0][0]
    E = _g_frame(g0, np.asarray(direction, dtype=float))
    e0, Et = E[0], E[1:]
    alpha = dalpha * (np.arange(n_alpha) - (n_alpha - 1) / 2)
    A = np.stack(np.meshgrid(*([alpha] * n), indexing="ij"), -1).reshape(-1, n)
    w = e0 + A @ Et
    nw = np.sqrt(1 + np.sum(A * A, -1))
    u = w / nw[:, None]
    du = Et[None] / nw[:, None, None] - (A / nw[:, None] ** 2)[:, :, None] * u[:, None, :]  # (Q, n, d)
    K = int(round((r_max - r_init) / dr)) + 1
    r = r_init + dr * np.arange(K)
    Q = len(A)
    zeta0 = u @ g0
    bf = flow_batch(M, np.repeat(z0[None, None], Q, 1), zeta0[None], r[-1], r / r[-1], variational=True)
    Z = bf.z[0]  # (Q, K, d)
    Jz = bf.phi[0][..., :d, d:]  # (Q, K, d, d)
    dzda = np.einsum("qkij,jl,qal->qkia", Jz, g0, du)
    g = M.ball_eval(Z.reshape(-1, d), derivs=False)[0].reshape(Q, K, d, d)
    G = np.einsum("qkia,qkij,qkjb->qkab", dzda, g, dzda)
    hS = np.einsum("qai,ij,qbj->qab", du, g0, du)
    sqG = np.sqrt(np.linalg.det(G))
    if np.any(np.linalg.det(G) <= 0):
        raise CausticError("angular Jacobian degenerate inside the fan")
    theta = sqG / np.sqrt(np.linalg.det(hS))[:, None]
    shp = (n_alpha,) * n
    return RayFan(n, z0, r, alpha, Z.reshape(shp + (K, d)), theta.reshape(shp + (K,)),
                  sqG.reshape(shp + (K,)), np.linalg.inv(G).reshape(shp + (K, n, n)))


_R_WIDTH = 7
_A_WIDTH = 5


def fan_laplacian(fan: RayFan, f: np.ndarray) -> np.ndarray:
    """Positive Laplacian of samples f on the fan grid."""
    n = fan.n
    ax_r = n
    dlog = diff(np.log(fan.sqrt_G), fan.dr, 1, ax_r, _R_WIDTH)
    out = -diff(f, fan.dr, 2, ax_r, _R_WIDTH) - dlog * diff(f, fan.dr, 1, ax_r, _R_WIDTH)
    grads = [diff(f, fan.dalpha, 1, b, _A_WIDTH) for b in range(n)]
    for a in range(n):
        flux = sum(fan.sqrt_G * fan.G_inv[..., a, b] * grads[b] for b in range(n))
        out = out - diff(flux, fan.dalpha, 1, a, _A_WIDTH) / fan.sqrt_G
    return out


def fan_distance_laplacian(fan: RayFan) -> np.ndarray:
    """Delta_g r = -d/dr log theta."""
    return -diff(np.log(fan.sqrt_G), fan.dr, 1, fan.n, _R_WIDTH)


def fan_amplitudes(fan: RayFan, params: SpectralParams, J: int = 1) -> np.ndarray:
    """Transport hierarchy on the fan; returns (J+1,) + grid shape."""
    n = fan.n
    r = fan.r
    r_init = r[0]
    th = fan.theta
    c = _a0_constant(n, params.sigma) * np.sinh(r_init) ** (-n / 2)
    a = np.zeros((J + 1,) + th.shape, dtype=complex)
    a[0] = c * np.sqrt(th[..., :1] / th)
    for j in range(1, J + 1):
        S = -(1j / params.sigma) * (fan_laplacian(fan, a[j - 1]) - n * n / 4 * a[j - 1])
        B = -0.5 * _cumint(np.sqrt(th) * S, r)
        a[j] = B / np.sqrt(th)
    return a


def fan_residual(fan: RayFan, amps: np.ndarray, params: SpectralParams) -> np.ndarray:
    """|e^{-i psi} P(h, sigma) K_J| / |e^{-i psi} K_J| on the fan grid.

    The phase psi = -sigma r / h is applied analytically, so only the smooth
    amplitude sum is differenced:
    P(e^{i psi} A) = e^{i psi} [i sigma h (2 A_r - (Delta r) A) + h^2 (Delta - n^2/4) A].
    """
    h, s, n = params.h, params.sigma, fan.n
    lap_r = fan_distance_laplacian(fan)
    A = sum(amps[j] * h**j for j in range(amps.shape[0]))
    T = 2 * diff(A, fan.dr, 1, n, _R_WIDTH) - lap_r * A
    L = fan_laplacian(fan, A) - n * n / 4 * A
    R = 1j * s * h * T + h * h * L
    return np.abs(R) / np.abs(A)


# ---------------------------------------------------------------------------
# kernel assembly


@dataclass
class KernelGrid:
    params: SpectralParams
    pairs: np.ndarray  # (N, 2, d) of (z, z')
    values: np.ndarray  # (N,) complex
    order: int
    distances: np.ndarray
    amplitudes: np.ndarray  # (J+1, N)
    diagnostics: dict = field(default_factory=dict)


def _pair_geometry(M: AHMetric, zs, zt, r_init: float):
    """Distances and normalised spreading at r_init and at the target."""
    sh = shoot(M, zs, zt)
    r = sh.r
    N = len(r)
    s_init = np.minimum(r_init / r, 1.0)
    th_i = np.empty(N)
    th_e = np.empty(N)
    for i in range(N):
        s_out = np.unique([s_init[i], 1.0])
        bf = flow_batch(M, zs[i : i + 1], sh.covector[i : i + 1], r[i : i + 1], s_out, variational=True)
        dets = det_perp_from_phi(M, zs[i], bf.z[0], bf.phi[0], r[i] * s_out)
        th_i[i], th_e[i] = dets[0], dets[-1]
    if np.any(th_e <= 0):
        raise CausticError("Jacobi determinant vanished on a connecting geodesic")
    return sh, r, th_i, th_e


def kernel_values(n: int, params: SpectralParams, r, amplitudes) -> np.ndarray:
    h = params.h
    A = sum(amplitudes[j] * h**j for j in range(len(amplitudes)))
    return h ** (-n / 2 - 1) * np.exp(-1j * params.sigma * r / h) * A


def assemble_kernel(M: AHMetric, params: SpectralParams, pairs, J: int = 0, r_init: float = 0.1,
                    profile: RadialProfile | None = None, fan_kw: dict | None = None) -> KernelGrid:
    """K_J at pairs (z, z') with amplitudes transported along the geodesic from z'.

    a_0 follows from the Jacobi spreading of the connecting geodesic.  For
    J >= 1 a ray fan is built around each connecting geodesic, unless a
    precomputed radial profile of a rotation-invariant model is supplied.
    """
    pairs = np.asarray(pairs, dtype=float)
    z, zp = pairs[:, 0], pairs[:, 1]
    if np.any(np.linalg.norm(z - zp, axis=-1) < 1e-12):
        raise ValueError("diagonal pairs are rejected")
    n = M.n
    sh, r, th_i, th_e = _pair_geometry(M, zp, z, r_init)
    amps = np.zeros((J + 1, len(r)), dtype=complex)
    c = _a0_constant(n, params.sigma)
    near = r < r_init
    amps[0] = np.where(near, c * np.sinh(r) ** (-n / 2),
                       c * np.sinh(r_init) ** (-n / 2) * np.sqrt(th_i / th_e))
    diag = {"theta_end": th_e, "shoot_iterations": sh.iterations}
    if J >= 1:
        if profile is not None:
            if M.terms:
                raise ValueError("radial profiles only apply to rotation-invariant models")
            amps[1:] = profile.amplitudes(r)[1 : J + 1]
        else:
            kw = dict(dr=0.01, n_alpha=9, dalpha=0.05)
            kw.update(fan_kw or {})
            for i in range(len(r)):
                if near[i]:
                    continue
                fan = build_fan(M, zp[i], sh.covector[i] @ M.ball_eval(zp[i : i + 1], derivs=False)[1][0],
                                r[i] + 3 * kw["dr"], r_init=r_init, **_snap(r[i], r_init, kw))
                a = fan_amplitudes(fan, params, J)
                k = int(round((r[i] - r_init) / fan.dr))
                amps[1:, i] = a[(slice(1, None),) + fan.center + (k,)]
    vals = kernel_values(n, params, r, amps)
    # phase structure r = -log rho_L - log rho_R + F
    rho_l = np.minimum(2 * (1 - np.linalg.norm(z, axis=-1)) / (1 + np.linalg.norm(z, axis=-1)), 1.0)
    rho_r = np.minimum(2 * (1 - np.linalg.norm(zp, axis=-1)) / (1 + np.linalg.norm(zp, axis=-1)), 1.0)
    diag["phase_remainder"] = r + np.log(rho_l) + np.log(rho_r)
    return KernelGrid(params, pairs, vals, J, r, amps, diag)


def _snap(r_target: float, r_init: float, kw: dict) -> dict:
    """Fan options with dr adjusted so that r_target is a grid point."""
    out = dict(kw)
    m = max(int(round((r_target - r_init) / kw["dr"])), 8)
    out["dr"] = (r_target - r_init) / m
    return out


def cauchy_riemann_residual(M: AHMetric, pairs, h: float, sigma: complex = 1 + 0.05j, delta: float = 1e-4,
                            r_init: float = 0.1, C: float = 1.0) -> float:
    """Relative residual of d/d(conj sigma) K_0 by a four-point stencil."""
    pairs = np.asarray(pairs, dtype=float)
    n = M.n
    _, r, th_i, th_e = _pair_geometry(M, pairs[:, 1], pairs[:, 0], r_init)

    def K(s):
        p = SpectralParams(h, s, C=C)
        a0 = _a0_constant(n, s) * np.sinh(r_init) ** (-n / 2) * np.sqrt(th_i / th_e)
        return kernel_values(n, p, r, [a0])

    dx = (K(sigma + delta) - K(sigma - delta)) / (2 * delta)
    dy = (K(sigma + 1j * delta) - K(sigma - 1j * delta)) / (2 * delta)
    return float(np.max(np.abs(dx + 1j * dy) / np.abs(dx)))


@dataclass
class PhaseDiagnostic:
    x_levels: np.ndarray
    remainder: np.ndarray  # r + log x'
    variation: float  # over the last decade


def phase_boundary_diagnostic(M: AHMetric, z, omega, x_levels=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3)) -> PhaseDiagnostic:
    """r(z, z') + log x' along z' = rho(x') omega approaching the boundary."""
    x_levels = np.sort(np.asarray(x_levels, dtype=float))[::-1]
    om = np.asarray(omega, dtype=float)
    om = om / np.linalg.norm(om)
    zt = radius_of_x(x_levels)[:, None] * om
    zs = np.repeat(np.asarray(z, dtype=float)[None], len(x_levels), 0)
    r = shoot(M, zs, zt).r
    rem = r + np.log(x_levels)
    last = x_levels <= x_levels[-1] * 10 * (1 + 1e-9)
    return PhaseDiagnostic(x_levels, rem, float(np.ptp(rem[last])))


# ---------------------------------------------------------------------------
# residual order of the WKB construction


@dataclass
class WKBOrderFit:
    hs: np.ndarray
    residuals: np.ndarray  # (len(hs), N) relative residuals at the pairs
    slope: float
    floor: np.ndarray  # discretisation floor estimate per h
    floor_reached: bool


def wkb_residual_order(M: AHMetric, params_list, pairs, J: int, fan_kw: dict | None = None,
                       r_init: float = 0.1, fans=None) -> WKBOrderFit:
    """Fit log residual of the discretised P(h, sigma) K_J against log h.

    Each pair (z, z') contributes the relative residual at z of the
    truncated WKB kernel with source z'.  The residual is evaluated from a
    ray fan around the connecting geodesic.  The discretisation floor is
    estimated by repeating the evaluation with every other radial sample.
    """
    params_list = list(params_list)
    if len(params_list) < 4:
        raise ValueError("at least four values of h are required")
    pairs = np.asarray(pairs, dtype=float)
    kw = dict(dr=0.01, n_alpha=9, dalpha=0.05)
    kw.update(fan_kw or {})
    if fans is None:
        fans = build_pair_fans(M, pairs, kw, r_init)
    hs = np.array([p.h for p in params_list])
    res = np.empty((len(params_list), len(fans)))
    floor = np.zeros(len(params_list))
    for i, (fan, k) in enumerate(fans):
        idx = fan.center + (k,)
        coarse = _coarsen(fan)
        for q, p in enumerate(params_list):
            a = fan_amplitudes(fan, p, J)
            res[q, i] = fan_residual(fan, a, p)[idx]
            if k % 2 == 0:
                ac = fan_amplitudes(coarse, p, J)
                rc = fan_residual(coarse, ac, p)[fan.center + (k // 2,)]
                # the coarse grid error is 2^6 times the fine one for a sixth-order stencil
                floor[q] = max(floor[q], abs(rc - res[q, i]) / 63.0)
    worst = np.max(res, axis=1)
    slope = float(np.polyfit(np.log(hs), np.log(worst), 1)[0])
    return WKBOrderFit(hs, res, slope, floor, bool(np.any(worst < 10 * floor)))


def build_pair_fans(M: AHMetric, pairs, kw: dict, r_init: float = 0.1) -> list:
    """Ray fans from z' aimed at z for each pair, with z on the central ray."""
    pairs = np.asarray(pairs, dtype=float)
    sh = shoot(M, pairs[:, 1], pairs[:, 0])
    out = []
    for i in range(len(pairs)):
        zp = pairs[i, 1]
        vec = sh.covector[i] @ M.ball_eval(zp[None], derivs=False)[1][0]
        k_kw = _snap(sh.r[i], r_init, kw)
        m = int(round((sh.r[i] - r_init) / k_kw["dr"]))
        if m % 2:
            k_kw["dr"] = (sh.r[i] - r_init) / (m + 1)
            m += 1
        fan = build_fan(M, zp, vec, sh.r[i] + 4 * k_kw["dr"], r_init=r_init, **k_kw)
        out.append((fan, m))
    return out


def _coarsen(fan: RayFan) -> RayFan:
    s = (slice(None),) * fan.n + (slice(None, None, 2),)
    return RayFan(fan.n, fan.source, fan.r[::2], fan.alpha, fan.z[s], fan.theta[s], fan.sqrt_G[s],
                  fan.G_inv[s])


# ---------------------------------------------------------------------------
# normal operators in projective coordinates


@dataclass
class NormalOperatorReport:
    x_levels: np.ndarray
    front_face_deviation: np.ndarray
    front_face_slope: float
    h_levels: np.ndarray
    semiclassical_deviation: np.ndarray
    semiclassical_slope: float


def _angular_data(M: AHMetric, x, y):
    """Inverse angular metric and the first-order coefficient of Delta_H."""
    H, Hx, Hy = M.angular_metric(x, y, 0, derivs=True)
    Hi = np.linalg.inv(H)
    # v^b = (1/sqrt H) d_a (sqrt H H^{ab}) = d_a H^{ab} + H^{ab} d_a log sqrt(det H)
    dHi = -np.einsum("nij,ncjk,nkl->ncil", Hi, Hy, Hi)
    dlog = 0.5 * np.einsum("nij,ncji->nc", Hi, Hy)
    v = np.einsum("naab->nb", dHi) + np.einsum("nab,na->nb", Hi, dlog)
    gamma = 0.5 * np.einsum("nab,nba->n", Hi, Hx)
    return Hi, v, gamma


def _projective_grid(n, lo, hi, m):
    X = np.linspace(lo[0], hi[0], m)
    Ys = [np.linspace(lo[1], hi[1], m)] * n
    G = np.stack(np.meshgrid(X, *Ys, indexing="ij"), -1).reshape(-1, n + 1)
    return G[:, 0], G[:, 1:]


def front_face_deviation(M: AHMetric, params: SpectralParams, x_prime: float, y_prime, m: int = 9) -> float:
    """Max coefficient difference between Q lifted to (X, Y) and the front-face model.

    Coordinates x = x' X, y = y' + x' Y.  All coefficients are divided by h^2.
    """
    n = M.n
    X, Y = _projective_grid(n, (0.5, -1.0), (2.0, 1.0), m)
    yp = np.asarray(y_prime, dtype=float)
    x = x_prime * X
    y = yp + x_prime * Y
    Hi, v, gamma = _angular_data(M, x, y)
    Hi0, _, _ = _angular_data(M, np.zeros(1), yp[None])
    dev_dX = np.abs(x_prime * X**2 * gamma)
    dev_0 = np.abs(n / 2 * x_prime * X * gamma)
    dev_YY = np.max(np.abs(X[:, None, None] ** 2 * (Hi - Hi0)), axis=(1, 2))
    dev_Y = np.max(np.abs(x_prime * X[:, None] ** 2 * v), axis=1)
    return float(np.max(np.stack([dev_dX, dev_0, dev_YY, dev_Y])))


def semiclassical_deviation(M: AHMetric, h: float, x_prime: float, y_prime, m: int = 9) -> float:
    """Max coefficient difference between Q in (X_h, Y_h) and the semiclassical model.

    Coordinates X = 1 + h X_h, Y = h Y_h around the base point (x', y').
    """
    n = M.n
    Xh, Yh = _projective_grid(n, (-1.0, -1.0), (1.0, 1.0), m)
    yp = np.asarray(y_prime, dtype=float)
    X = 1 + h * Xh
    x = x_prime * X
    y = yp + x_prime * h * Yh
    Hi, v, gamma = _angular_data(M, x, y)
    Hi0, _, _ = _angular_data(M, np.array([x_prime]), yp[None])
    dev_XX = np.abs(X**2 - 1)
    dev_X = np.abs(h * X + h * x_prime * X**2 * gamma)
    dev_0 = np.abs(h * h * n / 2 * x_prime * X * gamma)
    dev_YY = np.max(np.abs(X[:, None, None] ** 2 * Hi - Hi0), axis=(1, 2))
    dev_Y = np.max(np.abs(h * x_prime * X[:, None] ** 2 * v), axis=1)
    return float(np.max(np.stack([dev_XX, dev_X, dev_0, dev_YY, dev_Y])))


def normal_operator_check(M: AHMetric, params: SpectralParams, y_prime=None,
                          x_levels=(1e-1, 1e-2, 1e-3), h_levels=(1e-1, 1e-2, 1e-3),
                          x_base: float = 0.5) -> NormalOperatorReport:
    """Convergence of the lifted operator to its front-face and semiclassical models."""
    if y_prime is None:
        y_prime = [0.3] if M.n == 1 else [1.0, 0.3]
    xl = np.asarray(x_levels, dtype=float)
    hl = np.asarray(h_levels, dtype=float)
    ff = np.array([front_face_deviation(M, params, xp, y_prime) for xp in xl])
    sc = np.array([semiclassical_deviation(M, h, x_base, y_prime) for h in hl])
    s1 = float(np.polyfit(np.log(xl), np.log(ff), 1)[0])
    s2 = float(np.polyfit(np.log(hl), np.log(sc), 1)[0])
    return NormalOperatorReport(xl, ff, s1, hl, sc, s2)

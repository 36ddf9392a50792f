"""
Asymptotically hyperbolic metric models on the unit ball.

Two charts are used throughout the package:

* the ball chart, z in the open unit ball of R^{n+1}, with the Poincare
  metric g = 4|dz|^2 / (1 - |z|^2)^2 plus an optional collar perturbation;
* collar charts (x, y), with x = 2(1 - |z|)/(1 + |z|) = 2 exp(-r) and y a
  parametrization of the unit sphere, where g = (dx^2 + H(x, y, dy)) / x^2.

For the exact ball H = (1 - x^2/4)^2 h_round.  A perturbation adds
sum_k a_k(x) T_k(omega) restricted to the sphere, with every amplitude a_k
vanishing identically for x >= x_supp, so the deep interior is always exact.

All evaluators are vectorised over a leading batch axis.  Derivative arrays
use the layout ``dgs[..., k, i, j] = d g^{ij} / d q^k``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DomainError(ValueError):
    """A point lies outside the domain of the chart it is expressed in."""


class CoverageError(ValueError):
    """The target chart does not cover the requested point."""


class ConfigError(ValueError):
    """Invalid metric configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# charts


@dataclass(frozen=True)
class ChartId:
    """Chart label.  ``variant`` selects a rotated sphere parametrization."""

    kind: str = "ball"
    variant: int = 0

    def __post_init__(self):
        if self.kind not in ("ball", "collar"):
            raise ValueError(f"unknown chart kind {self.kind!r}")
        if self.kind == "ball" and self.variant != 0:
            raise ValueError("the ball chart has no variants")
        if self.variant not in (0, 1):
            raise ValueError("collar variant must be 0 or 1")

    def __str__(self) -> str:
        return "ball" if self.kind == "ball" else f"collar{self.variant}"

    @staticmethod
    def parse(label: str) -> "ChartId":
        if label == "ball":
            return BALL
        m = re.fullmatch(r"collar([01])?", label)
        if not m:
            raise ValueError(f"unknown chart label {label!r}")
        return ChartId("collar", int(m.group(1) or 0))


BALL = ChartId("ball")
COLLAR = ChartId("collar", 0)
COLLAR_ROT = ChartId("collar", 1)


def _rotation(n: int, variant: int) -> np.ndarray:
    """Ambient rotation used by a collar variant (moves the polar axis)."""
    d = n + 1
    if variant == 0 or n == 1:
        return np.eye(d)
    # cyclic permutation e3 -> e1, e1 -> e2, e2 -> e3: the poles of the
    # rotated chart sit on the x1-axis, well away from the standard poles
    return np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def sphere_embedding(n: int, y: np.ndarray, variant: int = 0):
    """Unit vector omega(y), its Jacobian E = d omega / dy and dE/dy.

    Returns ``omega (N, d)``, ``E (N, d, n)`` and ``dE (N, n, d, n)`` with
    ``dE[:, c, :, a] = d^2 omega / dy_c dy_a``.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    N = y.shape[0]
    R = _rotation(n, variant)
    if n == 1:
        th = y[:, 0]
        c, s = np.cos(th), np.sin(th)
        om = np.stack([c, s], axis=-1)
        E = np.stack([-s, c], axis=-1)[:, :, None]
        dE = (-om)[:, None, :, None]
    elif n == 2:
        th, ph = y[:, 0], y[:, 1]
        st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        om = np.stack([st * cp, st * sp, ct], axis=-1)
        e_th = np.stack([ct * cp, ct * sp, -st], axis=-1)
        e_ph = np.stack([-st * sp, st * cp, np.zeros(N)], axis=-1)
        E = np.stack([e_th, e_ph], axis=-1)
        d_thth = -om
        d_thph = np.stack([-ct * sp, ct * cp, np.zeros(N)], axis=-1)
        d_phph = np.stack([-st * cp, -st * sp, np.zeros(N)], axis=-1)
        dE = np.empty((N, 2, 3, 2))
        dE[:, 0, :, 0] = d_thth
        dE[:, 0, :, 1] = d_thph
        dE[:, 1, :, 0] = d_thph
        dE[:, 1, :, 1] = d_phph
    else:
        raise ValueError("only n = 1 and n = 2 are supported")
    if variant:
        om = om @ R.T
        E = np.einsum("ij,njk->nik", R, E)
        dE = np.einsum("ij,ncjk->ncik", R, dE)
    return om, E, dE


def sphere_angles(n: int, omega: np.ndarray, variant: int = 0) -> np.ndarray:
    """Inverse of :func:`sphere_embedding` (angles of unit vectors)."""
    om = np.atleast_2d(omega) @ _rotation(n, variant)
    if n == 1:
        return np.arctan2(om[:, 1], om[:, 0])[:, None]
    th = np.arctan2(np.hypot(om[:, 0], om[:, 1]), om[:, 2])
    ph = np.arctan2(om[:, 1], om[:, 0])
    return np.stack([th, ph], axis=-1)


def x_of_radius(rho):
    """Collar variable x = 2(1 - rho)/(1 + rho) of the ball radius rho."""
    return 2.0 * (1.0 - rho) / (1.0 + rho)


def radius_of_x(x):
    return (2.0 - x) / (2.0 + x)


def geodesic_radius(rho):
    """Hyperbolic distance from the origin, 2 artanh rho."""
    return 2.0 * np.arctanh(rho)


def ball_distance(z1, z2) -> np.ndarray:
    """Closed-form hyperbolic distance between ball-chart points."""
    z1 = np.atleast_2d(z1)
    z2 = np.atleast_2d(z2)
    num = 2.0 * np.sum((z1 - z2) ** 2, axis=-1)
    den = (1.0 - np.sum(z1**2, axis=-1)) * (1.0 - np.sum(z2**2, axis=-1))
    return np.arccosh(1.0 + num / den)


# ---------------------------------------------------------------------------
# perturbation registry


def _bump(x, lo, hi):
    """C-infinity bump with peak 1 at the centre of (lo, hi), zero outside."""
    x = np.asarray(x, dtype=float)
    s = (2.0 * x - lo - hi) / (hi - lo)
    inside = np.abs(s) < 1.0
    val = np.zeros_like(x)
    der = np.zeros_like(x)
    si = s[inside]
    q = 1.0 - si**2
    v = np.exp(1.0 - 1.0 / q)
    val[inside] = v
    der[inside] = v * (-2.0 * si / q**2) * (2.0 / (hi - lo))
    return val, der


def _psi(t):
    out = np.zeros_like(t)
    d = np.zeros_like(t)
    pos = t > 0
    e = np.exp(-1.0 / t[pos])
    out[pos] = e
    d[pos] = e / t[pos] ** 2
    return out, d


def _cutoff(x, lo, hi):
    """Smooth step: 1 for x <= lo, 0 for x >= hi."""
    x = np.asarray(x, dtype=float)
    u = (x - lo) / (hi - lo)
    a, da = _psi(u)
    b, db = _psi(1.0 - u)
    den = a + b
    step = a / den
    dstep = (da * b + a * db) / den**2 / (hi - lo)
    return 1.0 - step, -dstep


def _cutoff_b(x, hi):
    return _cutoff(x, 0.5 * hi, hi)


AMPLITUDES: dict[str, tuple[Callable, int, str]] = {
    "bump": (_bump, 2, "bump(x,a,b): smooth bump supported in (a, b), peak 1"),
    "cutoff": (_cutoff_b, 1, "cutoff(x,b): 1 for x <= b/2, 0 for x >= b"),
    "step": (_cutoff, 2, "step(x,a,b): 1 for x <= a, 0 for x >= b"),
}


def _t_round(om):
    N, d = om.shape
    T = np.broadcast_to(np.eye(d), (N, d, d)).copy()
    return T, np.zeros((N, d, d, d))


def _t_p2(om):
    N, d = om.shape
    w = om[:, -1]
    phi = 0.5 * (3.0 * w**2 - 1.0)
    T = phi[:, None, None] * np.eye(d)
    dT = np.zeros((N, d, d, d))
    dT[:, -1] = (3.0 * w)[:, None, None] * np.eye(d)
    return T, dT


def _t_cos2(om):
    N, d = om.shape
    phi = om[:, 0] ** 2 - om[:, 1] ** 2
    T = phi[:, None, None] * np.eye(d)
    dT = np.zeros((N, d, d, d))
    dT[:, 0] = (2.0 * om[:, 0])[:, None, None] * np.eye(d)
    dT[:, 1] = (-2.0 * om[:, 1])[:, None, None] * np.eye(d)
    return T, dT


def _t_axial(om):
    N, d = om.shape
    T = np.zeros((N, d, d))
    T[:, -1, -1] = 1.0
    return T, np.zeros((N, d, d, d))


# Tensors are ambient symmetric fields T(omega); their restriction to the
# sphere, E^T T E, is the angular tensor.  ``dT[:, m]`` is dT/d omega_m.
TENSORS: dict[str, tuple[Callable, str]] = {
    "round": (_t_round, "round(y): the round metric h_round"),
    "p2": (_t_p2, "p2(y): P2(omega_last) * h_round (zonal, Legendre degree 2)"),
    "cos2": (_t_cos2, "cos2(y): (omega_1^2 - omega_2^2) * h_round"),
    "axial": (_t_axial, "axial(y): restriction of e_last (x) e_last (anisotropic)"),
}

_TERM_RE = re.compile(
    r"^\s*(?:(?P<c>[-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*\*\s*)?"
    r"(?P<name>[a-z0-9_]+)\s*\(\s*(?P<var>[xy])\s*(?:,(?P<args>[^)]*))?\)\s*$"
)


def _parse_call(text: str, var: str, path: str):
    m = _TERM_RE.match(text)
    if not m or m.group("var") != var:
        raise ConfigError(path, f"cannot parse {text!r}; expected name({var}, ...)")
    coef = float(m.group("c")) if m.group("c") else 1.0
    args = ()
    if m.group("args"):
        try:
            args = tuple(float(a) for a in m.group("args").split(","))
        except ValueError:
            raise ConfigError(path, f"non-numeric argument in {text!r}") from None
    return coef, m.group("name"), args


@dataclass(frozen=True)
class PerturbationTerm:
    coef: float
    amplitude: str
    args: tuple
    tensor: str

    def amplitude_eval(self, x):
        fn = AMPLITUDES[self.amplitude][0]
        a, da = fn(x, *self.args)
        return self.coef * a, self.coef * da

    def tensor_eval(self, om):
        return TENSORS[self.tensor][0](om)

    def describe(self) -> dict:
        args = ",".join(repr(a) for a in self.args)
        amp = f"{self.amplitude}(x{',' + args if args else ''})"
        if self.coef != 1.0:
            amp = f"{self.coef!r}*{amp}"
        return {"amplitude": amp, "tensor": f"{self.tensor}(y)"}


@dataclass(frozen=True)
class CollarPerturbation:
    """delta H = sum_k a_k(x) T_k(omega)|_sphere with a_k = 0 for x >= x_supp."""

    terms: tuple
    x_supp: float = 0.2

    def __post_init__(self):
        xs = np.linspace(self.x_supp, 2.0, 200)
        for t in self.terms:
            a, da = t.amplitude_eval(xs)
            if np.any(a != 0.0) or np.any(da != 0.0):
                raise ConfigError(
                    "perturbation", f"amplitude {t.describe()['amplitude']} does not vanish for x >= x_supp"
                )

    @staticmethod
    def from_spec(items: Sequence[dict], x_supp: float = 0.2) -> "CollarPerturbation":
        terms = []
        for i, item in enumerate(items):
            path = f"perturbation[{i}]"
            if not isinstance(item, dict) or "amplitude" not in item or "tensor" not in item:
                raise ConfigError(path, "expected an object with 'amplitude' and 'tensor'")
            c, aname, args = _parse_call(item["amplitude"], "x", path + ".amplitude")
            if aname not in AMPLITUDES:
                raise ConfigError(path + ".amplitude", f"unknown amplitude {aname!r}")
            if len(args) != AMPLITUDES[aname][1]:
                raise ConfigError(path + ".amplitude", f"{aname} takes {AMPLITUDES[aname][1]} parameters")
            c2, tname, targs = _parse_call(item["tensor"], "y", path + ".tensor")
            if tname not in TENSORS:
                raise ConfigError(path + ".tensor", f"unknown tensor {tname!r}")
            if targs:
                raise ConfigError(path + ".tensor", "tensors take no parameters")
            terms.append(PerturbationTerm(c * c2, aname, args, tname))
        return CollarPerturbation(tuple(terms), x_supp)


# ---------------------------------------------------------------------------
# metric model


@dataclass(frozen=True)
class AHMetric:
    """Ball model with an optional collar perturbation.

    ``model`` is ``"ball"`` or ``"perturbed_collar"``.  Instances are
    immutable and all evaluators are pure.
    """

    n: int = 2
    model: str = "ball"
    perturbation: CollarPerturbation | None = None
    x_supp: float = 0.2
    pole_band: float = 1e-3
    _rot: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ConfigError("n", "only n = 1 and n = 2 are supported")
        if self.model not in ("ball", "perturbed_collar"):
            raise ConfigError("model", f"unknown model {self.model!r}")
        if self.model == "ball" and self.perturbation is not None and self.perturbation.terms:
            raise ConfigError("perturbation", "the ball model takes no perturbation")

    @property
    def dim(self) -> int:
        return self.n + 1

    @property
    def terms(self) -> tuple:
        return self.perturbation.terms if self.perturbation is not None else ()

    # -- ball chart --------------------------------------------------------

    def ball_eval(self, z, derivs: bool = True):
        """Metric data in the ball chart.

        Returns ``(g, gs, dgs)`` with shapes (N,d,d), (N,d,d), (N,d,d,d);
        ``dgs`` is None when ``derivs`` is False.
        """
        z = np.atleast_2d(np.asarray(z, dtype=float))
        N, d = z.shape
        r2 = np.sum(z**2, axis=-1)
        if np.any(r2 >= 1.0):
            raise DomainError("ball chart requires |z| < 1")
        q = 1.0 - r2
        c = 4.0 / q**2
        eye = np.eye(d)
        g = c[:, None, None] * eye
        gs = (q**2 / 4.0)[:, None, None] * eye
        # d c^{-1} / dz_k = -(c'/c^2) z_k / rho with c'/rho = 16/(1-r^2)^3
        dgs = None
        if derivs:
            dcinv = -(16.0 / q**3) / c**2
            dgs = (dcinv[:, None] * z)[:, :, None, None] * eye
        if not self.terms:
            return g, gs, dgs
        rho = np.sqrt(r2)
        x = x_of_radius(rho)
        act = np.flatnonzero(x < self.x_supp)
        if act.size == 0:
            return g, gs, dgs
        za, ra, xa = z[act], rho[act], x[act]
        om = za / ra[:, None]
        P = eye - om[:, :, None] * om[:, None, :]
        dx_drho = -4.0 / (1.0 + ra) ** 2
        # d omega_m / dz_k = (delta_km - omega_k omega_m) / rho
        domega = P / ra[:, None, None]  # [n, k, m]
        dP = -(np.einsum("nkm,nl->nkml", domega, om) + np.einsum("nm,nkl->nkml", om, domega))
        gp = np.zeros((act.size, d, d))
        dgp = np.zeros((act.size, d, d, d))
        for t in self.terms:
            a, da = t.amplitude_eval(xa)
            if not np.any(a) and not np.any(da):
                continue
            T, dT = t.tensor_eval(om)
            s = a / (xa**2 * ra**2)
            ds = da * dx_drho / (xa**2 * ra**2) - a * (2.0 * dx_drho / xa + 2.0 / ra) / (xa**2 * ra**2)
            M = P @ T @ P
            gp += s[:, None, None] * M
            if derivs:
                dTk = np.einsum("nmij,nkm->nkij", dT, domega)
                dM = (
                    np.einsum("nkij,njl,nlm->nkim", dP, T, P)
                    + np.einsum("nij,nkjl,nlm->nkim", P, dTk, P)
                    + np.einsum("nij,njl,nklm->nkim", P, T, dP)
                )
                dgp += (ds[:, None] * om)[:, :, None, None] * M[:, None] + s[:, None, None, None] * dM
        g = g.copy()
        g[act] = g[act] + gp
        gs = gs.copy()
        gsa = np.linalg.inv(g[act])
        gs[act] = 0.5 * (gsa + np.swapaxes(gsa, -1, -2))
        if derivs:
            dga = (16.0 / (1.0 - ra**2) ** 3)[:, None, None, None] * za[:, :, None, None] * eye + dgp
            dgs = dgs.copy()
            dgs[act] = -np.einsum("nij,nkjl,nlm->nkim", gs[act], dga, gs[act])
        return g, gs, dgs

    # -- collar chart ------------------------------------------------------

    def angular_metric(self, x, y, variant: int = 0, derivs: bool = True):
        """H(x, y) with dH/dx and dH/dy.

        Returns ``H (N,n,n)``, ``Hx (N,n,n)``, ``Hy (N,n,n,n)`` where
        ``Hy[:, c] = dH/dy_c``.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        om, E, dE = sphere_embedding(self.n, y, variant)
        hr = np.einsum("nia,nib->nab", E, E)
        dhr = np.einsum("ncia,nib->ncab", dE, E)
        dhr = dhr + np.swapaxes(dhr, -1, -2)
        w = (1.0 - 0.25 * x**2)
        H = (w**2)[:, None, None] * hr
        Hx = (-x * w)[:, None, None] * hr
        Hy = (w**2)[:, None, None, None] * dhr
        if self.terms:
            act = np.flatnonzero(x < self.x_supp)
            for t in self.terms if act.size else ():
                a, da = t.amplitude_eval(x[act])
                T, dT = t.tensor_eval(om[act])
                Ea, dEa = E[act], dE[act]
                M = np.einsum("nia,nij,njb->nab", Ea, T, Ea)
                H[act] += a[:, None, None] * M
                Hx[act] += da[:, None, None] * M
                if derivs:
                    dM = np.einsum("ncia,nij,njb->ncab", dEa, T, Ea)
                    dM = dM + np.swapaxes(dM, -1, -2)
                    dTc = np.einsum("nmij,nmc->ncij", dT, Ea)
                    dM += np.einsum("nia,ncij,njb->ncab", Ea, dTc, Ea)
                    Hy[act] += a[:, None, None, None] * dM
        return H, Hx, Hy

    def collar_eval(self, q, variant: int = 0, derivs: bool = True):
        """Metric data in a collar chart, q = (x, y)."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        x, y = q[:, 0], q[:, 1:]
        self._check_collar(x, y)
        N, d, n = q.shape[0], self.dim, self.n
        H, Hx, Hy = self.angular_metric(x, y, variant, derivs)
        Hi = np.linalg.inv(H) if n > 1 else 1.0 / H
        x2 = x**2
        g = np.zeros((N, d, d))
        g[:, 0, 0] = 1.0 / x2
        g[:, 1:, 1:] = H / x2[:, None, None]
        gs = np.zeros((N, d, d))
        gs[:, 0, 0] = x2
        gs[:, 1:, 1:] = x2[:, None, None] * Hi
        if not derivs:
            return g, gs, None
        dgs = np.zeros((N, d, d, d))
        dgs[:, 0, 0, 0] = 2.0 * x
        dgs[:, 0, 1:, 1:] = (2.0 * x)[:, None, None] * Hi - x2[:, None, None] * (Hi @ Hx @ Hi)
        dgs[:, 1:, 1:, 1:] = -x2[:, None, None, None] * np.einsum("nab,ncbe,nef->ncaf", Hi, Hy, Hi)
        return g, gs, dgs

    def _check_collar(self, x, y):
        if np.any(x <= 0.0) or np.any(x >= 2.0):
            raise DomainError("collar chart requires 0 < x < 2")
        if self.n == 2:
            th = y[:, 0]
            if np.any(th <= self.pole_band) or np.any(th >= np.pi - self.pole_band):
                raise DomainError("collar point inside the pole-exclusion band")

    # -- generic -----------------------------------------------------------

    def eval(self, chart: ChartId, coords, derivs: bool = True):
        if chart.kind == "ball":
            return self.ball_eval(coords, derivs)
        return self.collar_eval(coords, chart.variant, derivs)

    def volume_density(self, chart: ChartId, coords) -> np.ndarray:
        g, _, _ = self.eval(chart, coords, derivs=False)
        return np.sqrt(np.linalg.det(g))

    def collar_coefficients(self, x, y, variant: int = 0):
        """(gamma, H, dH/dx) with gamma = d/dx log sqrt(det H)."""
        H, Hx, _ = self.angular_metric(x, y, variant, derivs=False)
        gamma = 0.5 * np.einsum("nab,nba->n", np.linalg.inv(H), Hx)
        return gamma, H, Hx

    def positivity_margin(self, nx: int = 60, ny: int = 24) -> float:
        """Smallest eigenvalue of H/(1 - x^2/4)^2 h_round-normalised on a grid."""
        xs = np.linspace(1e-4, max(self.x_supp, 1e-3), nx)
        if self.n == 1:
            ys = np.linspace(-np.pi, np.pi, ny, endpoint=False)[:, None]
        else:
            th = np.linspace(0.05, np.pi - 0.05, ny)
            ph = np.linspace(-np.pi, np.pi, ny, endpoint=False)
            ys = np.stack(np.meshgrid(th, ph, indexing="ij"), -1).reshape(-1, 2)
        X = np.repeat(xs, len(ys))
        Y = np.tile(ys, (nx, 1))
        H, _, _ = self.angular_metric(X, Y, 0, derivs=False)
        _, E, _ = sphere_embedding(self.n, Y)
        hr = np.einsum("nia,nib->nab", E, E)
        L = np.linalg.cholesky(hr)
        Li = np.linalg.inv(L)
        Hn = Li @ H @ np.swapaxes(Li, -1, -2)
        return float(np.min(np.linalg.eigvalsh(Hn)))

    def to_config(self) -> dict:
        cfg = {"n": self.n, "model": self.model, "x_supp": self.x_supp}
        if self.terms:
            cfg["perturbation"] = [t.describe() for t in self.terms]
        if self.pole_band != 1e-3:
            cfg["pole_band"] = self.pole_band
        return cfg


def ball_model(n: int = 2) -> AHMetric:
    return AHMetric(n=n, model="ball")


def perturbed_model(n: int = 2, items: Sequence[dict] | None = None, x_supp: float = 0.2) -> AHMetric:
    """Perturbed collar model; the default perturbation is 0.3 bump * p2."""
    if items is None:
        items = [{"amplitude": "0.3*bump(x,0,0.2)", "tensor": "p2(y)" if n == 2 else "cos2(y)"}]
    pert = CollarPerturbation.from_spec(items, x_supp)
    M = AHMetric(n=n, model="perturbed_collar", perturbation=pert, x_supp=x_supp)
    if M.positivity_margin() <= 0.0:
        raise ConfigError("perturbation", "H + delta H is not positive definite")
    return M


def metric_from_config(cfg: dict | str) -> AHMetric:
    """Build a metric from a JSON document or the parsed dict."""
    if isinstance(cfg, str):
        try:
            cfg = json.loads(cfg)
        except json.JSONDecodeError as exc:
            raise ConfigError("metric", f"invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("metric", "expected a JSON object")
    n = cfg.get("n", 2)
    if n not in (1, 2):
        raise ConfigError("metric.n", "must be 1 or 2")
    model = cfg.get("model", "ball")
    x_supp = float(cfg.get("x_supp", 0.2))
    if not 0.0 < x_supp < 1.0:
        raise ConfigError("metric.x_supp", "must lie in (0, 1)")
    if model == "ball":
        if cfg.get("perturbation"):
            raise ConfigError("metric.perturbation", "the ball model takes no perturbation")
        M = AHMetric(n=n, model="ball", x_supp=x_supp)
    elif model == "perturbed_collar":
        items = cfg.get("perturbation")
        if items is None:
            return perturbed_model(n, None, x_supp)
        if not isinstance(items, list):
            raise ConfigError("metric.perturbation", "expected a list of terms")
        try:
            return perturbed_model(n, items, x_supp)
        except ConfigError as exc:
            raise ConfigError("metric." + exc.path, str(exc).split(": ", 1)[1]) from None
    else:
        raise ConfigError("metric.model", f"unknown model {model!r}")
    if "pole_band" in cfg:
        M = AHMetric(n=M.n, model=M.model, perturbation=M.perturbation, x_supp=M.x_supp,
                     pole_band=float(cfg["pole_band"]))
    return M


# ---------------------------------------------------------------------------
# chart transitions


def collar_to_ball_jacobian(n: int, q: np.ndarray, variant: int = 0):
    """z(q), Dz/Dq and second derivatives D2[:, a, :, b] = d^2 z / dq_a dq_b."""
    q = np.atleast_2d(q)
    x, y = q[:, 0], q[:, 1:]
    om, E, dE = sphere_embedding(n, y, variant)
    rho = radius_of_x(x)
    drho = -4.0 / (2.0 + x) ** 2
    d2rho = 8.0 / (2.0 + x) ** 3
    N, d = om.shape
    z = rho[:, None] * om
    D = np.empty((N, d, d))
    D[:, :, 0] = drho[:, None] * om
    D[:, :, 1:] = rho[:, None, None] * E
    D2 = np.empty((N, d, d, d))
    D2[:, 0, :, 0] = d2rho[:, None] * om
    D2[:, 0, :, 1:] = drho[:, None, None] * E
    D2[:, 1:, :, 0] = np.swapaxes(drho[:, None, None] * E, 1, 2)
    D2[:, 1:, :, 1:] = rho[:, None, None, None] * dE
    return z, D, D2


def ball_to_collar_coords(n: int, z: np.ndarray, variant: int = 0) -> np.ndarray:
    z = np.atleast_2d(z)
    rho = np.linalg.norm(z, axis=-1)
    if np.any(rho <= 0.0) or np.any(rho >= 1.0):
        raise CoverageError("collar charts need 0 < |z| < 1")
    y = sphere_angles(n, z / rho[:, None], variant)
    return np.concatenate([x_of_radius(rho)[:, None], y], axis=-1)


def transition(M: AHMetric, chart: ChartId, z, zeta, target: ChartId, check: bool = True):
    """Move phase-space points (z, zeta) between charts.

    Covectors transform by the transpose Jacobian.  Raises CoverageError if
    the target chart does not contain the points.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    zeta = np.atleast_2d(np.asarray(zeta, dtype=float))
    if chart == target:
        return z.copy(), zeta.copy()
    n = M.n
    if chart.kind == "collar":
        zb, D, _ = collar_to_ball_jacobian(n, z, chart.variant)
        zetab = np.linalg.solve(np.swapaxes(D, 1, 2), zeta[..., None])[..., 0]
        if target.kind == "ball":
            return zb, zetab
        return transition(M, BALL, zb, zetab, target, check)
    q = ball_to_collar_coords(n, z, target.variant)
    if check:
        try:
            M._check_collar(q[:, 0], q[:, 1:])
        except DomainError as exc:
            raise CoverageError(str(exc)) from None
    _, D, _ = collar_to_ball_jacobian(n, q, target.variant)
    zq = np.einsum("nia,ni->na", D, zeta)
    return q, zq


def transition_derivative(M: AHMetric, chart: ChartId, z, zeta, target: ChartId):
    """Jacobian of the phase-space transition map, shape (N, 2d, 2d)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    zeta = np.atleast_2d(np.asarray(zeta, dtype=float))
    N, d = z.shape
    if chart == target:
        return np.broadcast_to(np.eye(2 * d), (N, 2 * d, 2 * d)).copy()
    if chart.kind == "collar" and target.kind == "collar":
        zb, zetab = transition(M, chart, z, zeta, BALL)
        A = transition_derivative(M, chart, z, zeta, BALL)
        B = transition_derivative(M, BALL, zb, zetab, target)
        return B @ A
    if chart.kind == "ball":
        q, _ = transition(M, chart, z, zeta, target, check=False)
        T = _ball_from_collar_derivative(M.n, q, zeta, target.variant, zeta_is_ball=True)
        return np.linalg.inv(T)
    return _ball_from_collar_derivative(M.n, z, zeta, chart.variant, zeta_is_ball=False)


def _ball_from_collar_derivative(n, q, zeta, variant, zeta_is_ball):
    """Derivative of (q, zeta_q) -> (z, zeta_z) with zeta_z = D^{-T} zeta_q."""
    _, D, D2 = collar_to_ball_jacobian(n, q, variant)
    N, d, _ = D.shape
    Dinv = np.linalg.inv(D)
    DinvT = np.swapaxes(Dinv, 1, 2)
    if zeta_is_ball:
        zb = zeta
    else:
        zb = np.einsum("nij,nj->ni", DinvT, zeta)
    # zeta_z = D^{-T} zeta_q; d/dq_a: -D^{-T} (dD/dq_a)^T zeta_z
    # D2[:, a, :, b] = d^2 z / dq_a dq_b, so (dD/dq_a)[k, b] = D2[:, a, k, b]
    dzeta = -np.einsum("nij,nakj,nk->nia", DinvT, D2, zb)
    T = np.zeros((N, 2 * d, 2 * d))
    T[:, :d, :d] = D
    T[:, d:, :d] = dzeta
    T[:, d:, d:] = DinvT
    return T

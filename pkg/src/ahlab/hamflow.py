"""
Bicharacteristic flow of p(z, zeta) = |zeta|^2_{g*} / 2.

Single trajectories are integrated with scipy's embedded Runge-Kutta pairs
and switch charts on the fly (ball chart inside, collar charts near the
boundary).  Batches (distance shooting, Lagrangian sweeps, ray fans) use the
vectorised integrator in :mod:`ahlab._batch_rk` in the ball chart, which
covers the whole manifold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.integrate import solve_ivp

from . import _batch_rk
from .metric import (
    BALL,
    AHMetric,
    ChartId,
    DomainError,
    ball_distance,
    ball_to_collar_coords,
    collar_to_ball_jacobian,
    sphere_embedding,
    transition,
    transition_derivative,
    x_of_radius,
)

RTOL = 1e-10
ATOL = 1e-12
ENERGY_TOL = 1e-9
SWITCH_X = 1.0
SWITCH_BAND = 0.1
POLE_SWITCH = 0.35


class Termination(str, Enum):
    REACHED_X_MIN = "ReachedXMin"
    REACHED_T_END = "ReachedTEnd"
    STEP_FAILURE = "StepFailure"


class ConvergenceError(RuntimeError):
    """Shooting did not converge; ``diagnostics`` holds per-pair details."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CausticError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhasePoint:
    chart: ChartId
    z: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).reshape(-1))
        object.__setattr__(self, "zeta", np.asarray(self.zeta, dtype=float).reshape(-1))
        if self.z.shape != self.zeta.shape:
            raise ValueError("z and zeta must have the same length")
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.zeta))):
            raise ValueError("phase point components must be finite")

    @staticmethod
    def unit(M: AHMetric, chart: ChartId, z, direction) -> "PhasePoint":
        """Covector proportional to ``direction`` with p = 1/2."""
        z = np.asarray(z, dtype=float)
        v = np.asarray(direction, dtype=float)
        _, gs, _ = M.eval(chart, z[None], derivs=False)
        nrm = np.sqrt(v @ gs[0] @ v)
        return PhasePoint(chart, z, v / nrm)

    def to(self, M: AHMetric, target: ChartId) -> "PhasePoint":
        zz, ze = transition(M, self.chart, self.z, self.zeta, target)
        return PhasePoint(target, zz[0], ze[0])


def hamiltonian(M: AHMetric, p: PhasePoint) -> float:
    _, gs, _ = M.eval(p.chart, p.z[None], derivs=False)
    return 0.5 * float(p.zeta @ gs[0] @ p.zeta)


def hamiltonian_batch(M: AHMetric, chart: ChartId, z, zeta) -> np.ndarray:
    _, gs, _ = M.eval(chart, z, derivs=False)
    return 0.5 * np.einsum("ni,nij,nj->n", zeta, gs, zeta)


# ---------------------------------------------------------------------------
# vector field


def _fd_steps(chart: ChartId, z: np.ndarray) -> np.ndarray:
    """Finite-difference steps, 1e-5 times the local coordinate scale."""
    N, d = z.shape
    if chart.kind == "ball":
        sc = 1.0 - np.linalg.norm(z, axis=-1)
        return 1e-5 * np.repeat(sc[:, None], d, axis=1)
    st = np.full((N, d), 1e-5)
    st[:, 0] = 1e-5 * z[:, 0]
    return st


def hamilton_field(M: AHMetric, chart: ChartId, z, zeta, with_matrix: bool = False):
    """H_p at points (z, zeta); optionally the linearisation matrix (N, 2d, 2d)."""
    z = np.atleast_2d(z)
    zeta = np.atleast_2d(zeta)
    N, d = z.shape
    _, gs, dgs = M.eval(chart, z)
    zdot = np.einsum("nij,nj->ni", gs, zeta)
    zetadot = -0.5 * np.einsum("ni,nkij,nj->nk", zeta, dgs, zeta)
    if not with_matrix:
        return zdot, zetadot
    A = np.empty((N, 2 * d, 2 * d))
    B = np.einsum("nkij,nj->nik", dgs, zeta)  # d zdot_i / d z_k
    A[:, :d, :d] = B
    A[:, :d, d:] = gs
    A[:, d:, d:] = -np.swapaxes(B, 1, 2)
    st = _fd_steps(chart, z)
    zs = np.concatenate([z + np.eye(d)[m] * st[:, m : m + 1] for m in range(d)]
                        + [z - np.eye(d)[m] * st[:, m : m + 1] for m in range(d)])
    _, _, dg2 = M.eval(chart, zs)
    dg2 = dg2.reshape(2, d, N, d, d, d)
    hess = (dg2[0] - dg2[1]) / (2.0 * st.T[:, :, None, None, None])  # [m, n, k, i, j]
    A[:, d:, :d] = -0.5 * np.einsum("ni,mnkij,nj->nkm", zeta, hess, zeta)
    return zdot, zetadot, A


def ball_rhs(M: AHMetric, Y: np.ndarray, durations: np.ndarray | None = None, variational: bool = False):
    """Right-hand side for flattened states (..., L) in the ball chart.

    Layout: [z (d), zeta (d), Phi (2d x 2d, row-major)] when variational.
    ``durations`` rescales time (integration over s in [0, 1]).
    """
    shp = Y.shape
    d = M.dim
    F = Y.reshape(-1, shp[-1])
    z, ze = F[:, :d], F[:, d : 2 * d]
    out = np.empty_like(F)
    if variational:
        zd, ed, A = hamilton_field(M, BALL, z, ze, True)
        Phi = F[:, 2 * d :].reshape(-1, 2 * d, 2 * d)
        out[:, 2 * d :] = (A @ Phi).reshape(F.shape[0], -1)
    else:
        zd, ed = hamilton_field(M, BALL, z, ze)
    out[:, :d] = zd
    out[:, d : 2 * d] = ed
    if durations is not None:
        out *= np.broadcast_to(durations, shp[:-1]).reshape(-1, 1)
    return out.reshape(shp)


# ---------------------------------------------------------------------------
# batch flows (ball chart)


@dataclass
class BatchFlow:
    """States sampled at common parameter fractions for many trajectories."""

    s: np.ndarray  # (K,) fractions of each duration
    durations: np.ndarray  # (G, m)
    z: np.ndarray  # (G, m, K, d)
    zeta: np.ndarray
    phi: np.ndarray | None  # (G, m, K, 2d, 2d)

    @property
    def times(self) -> np.ndarray:
        return self.durations[..., None] * self.s


def flow_batch(M: AHMetric, z0, zeta0, durations, s_out=(1.0,), variational: bool = False,
               rtol: float = RTOL, atol: float = ATOL) -> BatchFlow:
    """Flow many ball-chart phase points; arrays are (G, m, d) or (N, d).

    Each trajectory i runs for ``durations[i]``; samples are taken at the
    fractions ``s_out`` of its own duration.
    """
    z0 = np.asarray(z0, dtype=float)
    zeta0 = np.asarray(zeta0, dtype=float)
    flat = z0.ndim == 2
    if flat:
        z0, zeta0 = z0[:, None], zeta0[:, None]
    G, m, d = z0.shape
    dur = np.broadcast_to(np.asarray(durations, dtype=float).reshape(G, -1), (G, m)).copy()
    parts = [z0, zeta0]
    if variational:
        parts.append(np.broadcast_to(np.eye(2 * d).reshape(1, 1, -1), (G, m, 4 * d * d)))
    Y0 = np.concatenate(parts, axis=-1)
    s_out = np.asarray(s_out, dtype=float)
    pos = s_out > 0
    fun = lambda Y, idx: ball_rhs(M, Y, dur[idx], variational)  # noqa: E731
    Y = np.empty((G, len(s_out)) + Y0.shape[1:])
    if np.any(pos):
        Yp, _ = _batch_rk.integrate(fun, Y0, s_out[pos][None], rtol=rtol, atol=atol,
                                     err_slice=slice(0, 2 * d) if variational else None)
        Y[:, pos] = Yp
    Y[:, ~pos] = Y0[:, None]
    Y = np.moveaxis(Y, 1, 2)  # (G, m, K, L)
    phi = Y[..., 2 * d :].reshape(G, m, len(s_out), 2 * d, 2 * d) if variational else None
    res = BatchFlow(s_out, dur, Y[..., :d], Y[..., d : 2 * d], phi)
    if flat:
        res.durations = res.durations[:, 0]
        res.z, res.zeta = res.z[:, 0], res.zeta[:, 0]
        res.phi = None if phi is None else res.phi[:, 0]
    return res


# ---------------------------------------------------------------------------
# single trajectories with chart switching


@dataclass
class Trajectory:
    times: np.ndarray
    charts: list
    z: np.ndarray  # coordinates in the chart of each sample
    zeta: np.ndarray
    z_ball: np.ndarray
    energies: np.ndarray
    jacobi: np.ndarray | None  # d z_ball / d zeta_0, (K, d, d)
    det_perp: np.ndarray | None  # normalised transverse Jacobi determinant
    phi_ball: np.ndarray | None  # full variational matrix in ball coordinates
    termination: Termination
    start: PhasePoint
    switches: list = field(default_factory=list)

    @property
    def states(self) -> list:
        return [PhasePoint(c, a, b) for c, a, b in zip(self.charts, self.z, self.zeta)]

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energies - self.energies[0])))

    @property
    def x(self) -> np.ndarray:
        return x_of_radius(np.linalg.norm(self.z_ball, axis=-1))

    @property
    def volume_ratio(self) -> np.ndarray:
        """det J_perp / t^n, equal to (sinh t / t)^n on the exact ball."""
        t = np.where(self.times > 0, self.times, np.nan)
        return self.det_perp / t ** (self.z.shape[1] - 1)


def _chart_rhs(M, chart, variational, scale=None):
    d = M.dim

    def rhs(t, Y):
        z, ze = Y[:d][None], Y[d : 2 * d][None]
        if variational:
            zd, ed, A = hamilton_field(M, chart, z, ze, True)
            Phi = Y[2 * d :].reshape(2 * d, 2 * d)
            out = np.concatenate([zd[0], ed[0], (A[0] @ Phi).ravel()])
        else:
            zd, ed = hamilton_field(M, chart, z, ze)
            out = np.concatenate([zd[0], ed[0]])
        if scale is not None:
            out = out * scale(Y)
        return out

    return rhs


def _choose_chart(M: AHMetric, chart: ChartId, z, zeta, hysteresis: bool = True):
    """Pick the chart a state should be integrated in."""
    # the small slack makes a state sitting exactly on an event surface switch
    band = SWITCH_BAND - 1e-7 if hysteresis else 0.0
    if chart.kind == "ball":
        xb = x_of_radius(np.linalg.norm(z))
        if xb < SWITCH_X - band:
            return _best_collar(M, z)
        return chart
    x = z[0]
    if x > SWITCH_X + band:
        return BALL
    if M.n == 2:
        th = z[1]
        if min(th, np.pi - th) < POLE_SWITCH + 1e-7:
            return ChartId("collar", 1 - chart.variant)
    return chart


def _best_collar(M: AHMetric, zb) -> ChartId:
    if M.n == 1:
        return ChartId("collar", 0)
    best, bd = None, -1.0
    for v in (0, 1):
        th = ball_to_collar_coords(M.n, zb[None], v)[0, 1]
        dist = min(th, np.pi - th)
        if dist > bd:
            best, bd = ChartId("collar", v), dist
    return best


def flow(M: AHMetric, start: PhasePoint, t_end: float, x_min: float = 1e-4, *, jacobi: bool = True,
         method: str = "RK45", rtol: float = RTOL, atol: float = ATOL, max_step: float = np.inf,
         first_step: float | None = None, t_eval=None) -> Trajectory:
    """Integrate the bicharacteristic through ``start`` up to t_end or x <= x_min.

    The Jacobi matrix d z / d zeta_0 (zeta_0 in the start chart) is carried
    through chart switches by the derivative of the transition maps.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if not 0.0 < x_min < 1.0:
        raise ValueError("x_min must lie in (0, 1)")
    d = M.dim
    chart, z, ze = start.chart, start.z.copy(), start.zeta.copy()
    Phi = np.eye(2 * d)
    t = 0.0
    T_list, C_list, Z_list, E_list, P_list = [], [], [], [], []
    switches = []
    term = Termination.REACHED_T_END
    t_eval = None if t_eval is None else np.asarray(t_eval, dtype=float)

    def record(ts, ys, ch):
        for tt, yy in zip(ts, ys.T):
            T_list.append(tt)
            C_list.append(ch)
            Z_list.append(yy[:d])
            E_list.append(yy[d : 2 * d])
            P_list.append(yy[2 * d :].reshape(2 * d, 2 * d) if jacobi else None)

    first = True
    while True:
        new = _choose_chart(M, chart, z, ze, hysteresis=not first)
        if new != chart:
            if jacobi:
                Phi = transition_derivative(M, chart, z[None], ze[None], new)[0] @ Phi
            zz, ee = transition(M, chart, z[None], ze[None], new, check=False)
            switches.append((t, str(chart), str(new)))
            chart, z, ze = new, zz[0], ee[0]
        first = False
        events = []
        if chart.kind == "ball":
            ev_out = lambda tt, Y: x_of_radius(np.linalg.norm(Y[:d])) - max(SWITCH_X - SWITCH_BAND, x_min)  # noqa
            ev_out.terminal, ev_out.direction = True, -1
            events.append(ev_out)
        else:
            ev_min = lambda tt, Y: Y[0] - x_min  # noqa: E731
            ev_min.terminal, ev_min.direction = True, -1
            ev_in = lambda tt, Y: Y[0] - (SWITCH_X + SWITCH_BAND)  # noqa: E731
            ev_in.terminal, ev_in.direction = True, 1
            events += [ev_min, ev_in]
            if M.n == 2:
                ev_pole = lambda tt, Y: min(Y[1], np.pi - Y[1]) - POLE_SWITCH  # noqa: E731
                ev_pole.terminal, ev_pole.direction = True, -1
                events.append(ev_pole)
        y0 = np.concatenate([z, ze] + ([Phi.ravel()] if jacobi else []))
        te = None
        if t_eval is not None:
            te = t_eval[(t_eval > t) & (t_eval <= t_end)]
            te = np.concatenate([[t], te]) if (te.size == 0 or te[0] > t) else te
        kw = {} if first_step is None else {"first_step": first_step}
        try:
            sol = solve_ivp(_chart_rhs(M, chart, jacobi), (t, t_end), y0, method=method, rtol=rtol,
                            atol=atol, events=events, max_step=max_step, t_eval=te, **kw)
        except DomainError:
            term = Termination.STEP_FAILURE
            break
        ts, ys = sol.t, sol.y
        if T_list and ts.size and ts[0] <= T_list[-1]:
            ts, ys = ts[1:], ys[:, 1:]
        ev_hit = sol.status == 1
        if ev_hit:
            # make sure the event state itself is recorded
            yev = next(e for e in sol.y_events if len(e))[0]
            tev = next(e for e in sol.t_events if len(e))[0]
            if not ts.size or ts[-1] < tev:
                ts = np.append(ts, tev)
                ys = np.concatenate([ys, yev[:, None]], axis=1)
        record(ts, ys, chart)
        if sol.status == -1:
            term = Termination.STEP_FAILURE
            break
        t = ts[-1] if ts.size else t
        yl = ys[:, -1] if ts.size else y0
        z, ze = yl[:d].copy(), yl[d : 2 * d].copy()
        if jacobi:
            Phi = yl[2 * d :].reshape(2 * d, 2 * d).copy()
        if not ev_hit:
            break
        xcur = x_of_radius(np.linalg.norm(z)) if chart.kind == "ball" else z[0]
        if xcur <= x_min * (1 + 1e-9):
            term = Termination.REACHED_X_MIN
            break
        if t >= t_end:
            break

    times = np.asarray(T_list)
    Z = np.asarray(Z_list)
    Ze = np.asarray(E_list)
    energies = np.empty(len(times))
    zb = np.empty_like(Z)
    jac = phib = dper = None
    if jacobi:
        phib = np.empty((len(times), 2 * d, 2 * d))
    for ch in set(C_list):
        idx = np.array([i for i, c in enumerate(C_list) if c == ch])
        energies[idx] = hamiltonian_batch(M, ch, Z[idx], Ze[idx])
        zz, ee = transition(M, ch, Z[idx], Ze[idx], BALL, check=False)
        zb[idx] = zz
        if jacobi:
            Dt = transition_derivative(M, ch, Z[idx], Ze[idx], BALL)
            phib[idx] = Dt @ np.asarray([P_list[i] for i in idx])
    if jacobi:
        jac = phib[:, :d, d:]
        # the determinant is chart invariant; evaluate it in the chart of each
        # sample so that it stays accurate where the ball chart loses digits
        dper = np.empty(len(times))
        g0 = M.eval(start.chart, start.z[None], derivs=False)[0][0]
        for ch in set(C_list):
            idx = np.array([i for i, c in enumerate(C_list) if c == ch])
            Jl = np.asarray([P_list[i][:d, d:] for i in idx])
            gl = M.eval(ch, Z[idx], derivs=False)[0]
            dets = np.linalg.det(Jl) * np.sqrt(np.linalg.det(gl) * np.linalg.det(g0))
            if ch.kind == "collar":
                # orientation of the collar chart relative to the ball chart
                dets = dets * np.sign(np.linalg.det(collar_to_ball_jacobian(M.n, Z[idx], ch.variant)[1]))
            if start.chart.kind == "collar":
                dets = dets * np.sign(np.linalg.det(collar_to_ball_jacobian(M.n, start.z[None], start.chart.variant)[1]))
            with np.errstate(divide="ignore", invalid="ignore"):
                dper[idx] = np.where(times[idx] > 0, dets / times[idx], 0.0)
    return Trajectory(times, C_list, Z, Ze, zb, energies, jac, dper, phib, term, start, switches)


# ---------------------------------------------------------------------------
# rescaled flows


@dataclass
class RescaledFlowResult:
    tau: np.ndarray
    x: np.ndarray
    z_ball: np.ndarray
    face: str
    boundary_transversality: float
    fell_back: bool
    trajectory: np.ndarray  # collar states (K, 2d)
    chart: ChartId


def flow_rescaled(M: AHMetric, start: PhasePoint, face: str = "left", x_min: float = 1e-4,
                  tau_cap: float = 50.0, rtol: float = RTOL, atol: float = ATOL) -> RescaledFlowResult:
    """Integrate (1/rho) H_p with rho = x in a collar chart until x = x_min.

    The left and right faces use the same field on their own factor, so
    ``face`` only labels the result.  If the curve climbs past x = 1 (the
    collar normalisation of rho is capped there) the integration falls back
    to the unrescaled flow and ``fell_back`` is set.
    """
    if face not in ("left", "right"):
        raise ValueError("face must be 'left' or 'right'")
    d = M.dim
    p = start
    if p.chart.kind == "ball":
        p = p.to(M, _best_collar(M, p.z))
    chart = p.chart
    ev_min = lambda t, Y: Y[0] - x_min  # noqa: E731
    ev_min.terminal, ev_min.direction = True, -1
    ev_in = lambda t, Y: Y[0] - 1.0  # noqa: E731
    ev_in.terminal, ev_in.direction = True, 1
    events = [ev_min, ev_in]
    if M.n == 2:
        ev_pole = lambda t, Y: min(Y[1], np.pi - Y[1]) - 2 * M.pole_band  # noqa: E731
        ev_pole.terminal = True
        events.append(ev_pole)
    rhs = _chart_rhs(M, chart, False, scale=lambda Y: 1.0 / Y[0])
    sol = solve_ivp(rhs, (0.0, tau_cap), np.concatenate([p.z, p.zeta]), method="RK45", rtol=rtol,
                    atol=atol, events=events, dense_output=False)
    tau, Y = sol.t, sol.y.T
    fell_back = bool(len(sol.t_events[1]))
    if len(sol.t_events[0]):
        tau = np.append(tau, sol.t_events[0][0])
        Y = np.concatenate([Y, sol.y_events[0]], axis=0)
    if fell_back:
        tr = flow(M, PhasePoint(chart, Y[-1, :d], Y[-1, d:]), 50.0, x_min, jacobi=False)
        tail_tau = tau[-1] + tr.times[1:]  # unrescaled continuation
        zz = [transition(M, c, a[None], b[None], chart, check=False)
              if c.kind == "collar" and c != chart else (a[None], b[None])
              for c, a, b in zip(tr.charts[1:], tr.z[1:], tr.zeta[1:])]
        tau = np.concatenate([tau, tail_tau])
        # keep only collar-chart samples of the continuation for the trace
        Y = np.concatenate([Y] + [np.concatenate(q, axis=1) for q in zz], axis=0)
    x = Y[:, 0]
    zb, _ = transition(M, chart, Y[:, :d], Y[:, d:], BALL, check=False)
    # dx/dtau = x^2 xi / x = x xi at the recorded states, extrapolated to x = 0
    dxdt = np.array([rhs(0.0, yy)[0] for yy in Y[-8:]])
    xs = x[-8:]
    coef = np.polyfit(xs, dxdt, 1) if np.ptp(xs) > 0 else np.array([0.0, dxdt[-1]])
    return RescaledFlowResult(tau, x, zb, face, float(coef[-1]), fell_back, Y, chart)


# ---------------------------------------------------------------------------
# escape times


@dataclass(frozen=True)
class EscapeTimes:
    forward: float
    backward: float


def escape_time(M: AHMetric, start: PhasePoint, x_min: float = 1e-4, t_cap: float = 50.0) -> EscapeTimes:
    """Time for the flow and the reversed flow to reach x <= x_min.

    Raises RuntimeError (potential trapping) when t_cap is exceeded.
    """
    out = []
    for sgn in (1.0, -1.0):
        p = PhasePoint(start.chart, start.z, sgn * start.zeta)
        tr = flow(M, p, t_cap, x_min, jacobi=False)
        if tr.termination != Termination.REACHED_X_MIN:
            raise RuntimeError(f"no escape before t_cap = {t_cap} (potential trapping)")
        out.append(float(tr.times[-1]))
    return EscapeTimes(*out)


def escape_time_batch(M: AHMetric, z0, zeta0, x_min: float = 1e-4, t_cap: float = 50.0) -> np.ndarray:
    """Forward escape times for many ball-chart starts (inf when capped)."""
    z0 = np.atleast_2d(z0)
    zeta0 = np.atleast_2d(zeta0)
    res = []
    for a, b in zip(z0, zeta0):
        tr = flow(M, PhasePoint(BALL, a, b), t_cap, x_min, jacobi=False)
        res.append(tr.times[-1] if tr.termination == Termination.REACHED_X_MIN else np.inf)
    return np.asarray(res)


# ---------------------------------------------------------------------------
# geodesic distance by shooting


@dataclass
class ShootResult:
    r: np.ndarray  # distances
    covector: np.ndarray  # unit covector at the source (ball chart)
    zeta_end: np.ndarray  # unit covector at the target
    jacobi_end: np.ndarray  # d z / d zeta_0 at unit speed after time r
    iterations: np.ndarray
    residual: np.ndarray


def _unit_covector(M, z, v):
    _, gs, _ = M.ball_eval(z, derivs=False)
    nrm = np.sqrt(np.einsum("ni,nij,nj->n", v, gs, v))
    return v / nrm[:, None], nrm


def _chord_guess(M, zs, zt):
    """Initial v = r * unit covector along the ball-chart chord."""
    d = zt - zs
    g, _, _ = M.ball_eval(zs, derivs=False)
    v = np.einsum("nij,nj->ni", g, d)
    u, _ = _unit_covector(M, zs, v)
    return u * ball_distance(zs, zt)[:, None]


def mobius_translate(a, z):
    """Hyperbolic isometry of the ball sending a to the origin."""
    a = np.atleast_2d(a)
    z = np.atleast_2d(z)
    az = np.sum(a * z, axis=-1)[:, None]
    a2 = np.sum(a * a, axis=-1)[:, None]
    z2 = np.sum(z * z, axis=-1)[:, None]
    return ((1.0 - a2) * z - (1.0 - 2.0 * az + z2) * a) / (1.0 - 2.0 * az + a2 * z2)


def _log_guess(M, zs, zt):
    """Initial v from the exact inverse exponential map of the ball model."""
    b = mobius_translate(zs, zt)
    u, _ = _unit_covector(M, zs, b)
    return u * ball_distance(zs, zt)[:, None]


def shoot(M: AHMetric, zs, zt, tol: float = 1e-12, max_iter: int = 30, restarts: int = 20,
          seed: int = 0, v0=None) -> ShootResult:
    """Solve z(1; zs, v) = zt for the initial covector v by damped Newton.

    The first guess is the exact inverse exponential map of the unperturbed
    ball; the first restart uses the ball-chart chord direction and later
    restarts perturb the guess randomly.

    The flow of p for unit time from (zs, v) has length |v|_{g*}, so the
    distance is the norm of the converged v.  Pairs are processed as one
    batch; failures are retried from randomly perturbed starts.
    """
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    zt = np.atleast_2d(np.asarray(zt, dtype=float))
    N, d = zs.shape
    v = _log_guess(M, zs, zt) if v0 is None else np.array(v0, dtype=float)
    scale = 1.0 - np.linalg.norm(zt, axis=-1)
    rng = np.random.default_rng(seed)
    iters = np.zeros(N, dtype=int)
    done = np.zeros(N, dtype=bool)
    res = np.full(N, np.inf)
    Jz = np.zeros((N, d, d))
    zeta_end = np.zeros((N, d))
    attempts = np.zeros(N, dtype=int)

    def evaluate(idx, vv):
        bf = flow_batch(M, zs[idx], vv, np.ones(len(idx)), (1.0,), variational=True)
        ze = bf.z[:, 0]
        return ze, bf.zeta[:, 0], bf.phi[:, 0, :d, d:]

    act = np.arange(N)
    for _ in range(max_iter * (restarts + 1)):
        if act.size == 0:
            break
        ze, zeta_e, J = evaluate(act, v[act])
        F = ze - zt[act]
        rn = np.linalg.norm(F, axis=-1) / scale[act]
        conv = rn <= tol
        for k, i in enumerate(act):
            res[i] = rn[k]
            Jz[i] = J[k]
            zeta_end[i] = zeta_e[k]
        done[act[conv]] = True
        iters[act] += 1
        step = np.linalg.solve(J, F[..., None])[..., 0]
        upd = act[~conv]
        # damping: limit the Newton update to a quarter of |v| plus one unit
        st = step[~conv]
        lim = 0.25 * np.linalg.norm(v[upd], axis=-1) + 1.0
        nrm = np.linalg.norm(st, axis=-1)
        fac = np.minimum(1.0, lim / np.maximum(nrm, 1e-300))
        v[upd] = v[upd] - fac[:, None] * st
        stale = upd[(iters[upd] % max_iter == 0) | ~np.all(np.isfinite(v[upd]), axis=-1)]
        for i in stale:
            attempts[i] += 1
            if attempts[i] > restarts:
                continue
            g0 = (_chord_guess if attempts[i] == 1 else _log_guess)(M, zs[i : i + 1], zt[i : i + 1])[0]
            if attempts[i] > 1:
                g0 = g0 * (1.0 + 0.2 * rng.normal()) + 0.2 * rng.normal(size=d) * np.linalg.norm(g0)
            v[i] = g0
        act = np.array([i for i in upd if attempts[i] <= restarts], dtype=int)
    if not np.all(done):
        bad = np.flatnonzero(~done)
        raise ConvergenceError(f"shooting failed for {bad.size} pair(s)",
                               {"pairs": bad.tolist(), "residual": res[bad].tolist()})
    u, r = _unit_covector(M, zs, v)
    # jacobian with respect to the unit covector at unit speed: z(t; u) = z(1; t u)
    J_unit = Jz * r[:, None, None]
    zeta_unit = zeta_end / r[:, None]
    return ShootResult(r, u, zeta_unit, J_unit, iters, res)


def distance(M: AHMetric, z, z2, **kw) -> float:
    """Geodesic distance between two interior ball-chart points."""
    z = np.asarray(z, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if np.allclose(z, z2, rtol=0, atol=0):
        raise ValueError("distance requires distinct points")
    return float(shoot(M, z[None], z2[None], **kw).r[0])


def distance_batch(M: AHMetric, zs, zt, **kw) -> np.ndarray:
    return shoot(M, zs, zt, **kw).r


# ---------------------------------------------------------------------------
# Jacobi determinants and injectivity probe


def sphere_directions(n: int, count: int, seed: int | None = None) -> np.ndarray:
    """Quasi-uniform unit vectors in R^{n+1} (Fibonacci lattice for n = 2)."""
    if n == 1:
        th = 2 * np.pi * (np.arange(count) + 0.5) / count
        if seed is not None:
            th = th + np.random.default_rng(seed).uniform(0, 2 * np.pi / count)
        return np.stack([np.cos(th), np.sin(th)], -1)
    k = np.arange(count) + 0.5
    zc = 1 - 2 * k / count
    ph = np.pi * (1 + 5**0.5) * k
    if seed is not None:
        ph = ph + np.random.default_rng(seed).uniform(0, 2 * np.pi)
    s = np.sqrt(1 - zc**2)
    return np.stack([s * np.cos(ph), s * np.sin(ph), zc], -1)


def geodesic_fan(M: AHMetric, z, directions, radii, variational: bool = True) -> BatchFlow:
    """Unit-speed geodesics from z in the given (ball-chart) directions.

    Samples are taken at the increasing ``radii``; one group per direction.
    """
    z = np.asarray(z, dtype=float)
    dirs = np.atleast_2d(directions)
    g, _, _ = M.ball_eval(z[None], derivs=False)
    cov, _ = _unit_covector(M, np.repeat(z[None], len(dirs), 0), dirs @ g[0])
    radii = np.asarray(radii, dtype=float)
    R = radii[-1]
    return flow_batch(M, np.repeat(z[None], len(dirs), 0), cov, np.full(len(dirs), R), radii / R,
                      variational=variational)


def det_perp_from_phi(M: AHMetric, z0, zb, phi, t) -> np.ndarray:
    """Normalised transverse Jacobi determinant from ball-chart variational data."""
    d = M.dim
    J = phi[..., :d, d:]
    g0 = M.ball_eval(np.atleast_2d(z0), derivs=False)[0]
    gb = M.ball_eval(zb.reshape(-1, d), derivs=False)[0].reshape(zb.shape[:-1] + (d, d))
    det = np.linalg.det(J) * np.sqrt(np.linalg.det(gb)) * np.sqrt(np.linalg.det(g0)).reshape(
        (-1,) + (1,) * (J.ndim - 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t > 0, det / t, 0.0)


@dataclass
class ProbeResult:
    radius: float
    r_cap: float
    radii: np.ndarray
    min_det: np.ndarray
    min_separation: np.ndarray
    monotone: bool


def injectivity_probe(M: AHMetric, z, r_cap: float = 3.0, n_dirs: int = 64, n_radii: int = 30,
                      seed: int | None = None) -> ProbeResult:
    """Largest tested radius on which exp_z looks injective.

    At each radius the Jacobi determinant of every sampled ray must be
    positive and endpoints of distinct directions must stay separated by at
    least half the separation predicted by the linearised exponential map.
    """
    z = np.asarray(z, dtype=float)
    dirs = sphere_directions(M.n, n_dirs, seed)
    radii = np.linspace(r_cap / n_radii, r_cap, n_radii)
    bf = geodesic_fan(M, z, dirs, radii)
    d = M.dim
    dets = det_perp_from_phi(M, z, bf.z.reshape(n_dirs, n_radii, d), bf.phi.reshape(n_dirs, n_radii, 2 * d, 2 * d),
                             radii[None, :])
    best = 0.0
    min_det = np.min(dets, axis=0)
    seps = np.empty(n_radii)
    for k in range(n_radii):
        pts = bf.z[:, k]
        ii, jj = np.triu_indices(n_dirs, 1)
        dist = ball_distance(pts[ii], pts[jj])
        seps[k] = np.min(dist)
    monotone = bool(np.all(np.diff(dets / radii[None, :] ** M.n, axis=1) > 0))
    # endpoint separations of distinct directions must not collapse
    for k in range(n_radii):
        if min_det[k] <= 0 or seps[k] < 0.25 * seps[0]:
            break
        best = radii[k]
    return ProbeResult(float(best), float(r_cap), radii, min_det, seps, monotone)

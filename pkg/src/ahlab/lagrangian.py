"""
Sampling of the flow-out Lagrangian of the conormal to the diagonal.

A sample is built from a point (z0, zeta0) of the cosphere bundle and two
flow times: the left factor is flowed forward by t2 from (z0, zeta0) and
the right factor by t1 from (z0, -zeta0).  Tangent frames come from central
differences of this parametrisation in 2n + 1 directions on the initial set
plus the exact Hamilton vector of the left factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .hamflow import PhasePoint, flow_batch, hamilton_field, hamiltonian_batch, shoot
from .metric import BALL, AHMetric, ball_distance

FD_STEP = 1e-5
RANK_TOL = 1e-7


class FrameError(ValueError):
    pass


@dataclass
class LagrangianSample:
    left: PhasePoint
    right: PhasePoint
    t1: float
    t2: float
    tangent_frame: np.ndarray  # (2n+2, 4d) rows in (z, z', zeta, zeta') coordinates
    base: tuple = field(default=None, repr=False)  # (z0, zeta0)

    @property
    def on_diagonal_set(self) -> bool:
        return self.t1 + self.t2 == 0.0

    def vector(self) -> np.ndarray:
        return np.concatenate([self.left.z, self.right.z, self.left.zeta, self.right.zeta])


def _orthonormal_completion(gs: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Covectors w_1..w_n, g*-orthonormal and g*-orthogonal to zeta."""
    d = zeta.shape[0]
    basis = [zeta / np.sqrt(zeta @ gs @ zeta)]
    out = []
    for e in np.eye(d):
        w = e.copy()
        for b in basis:
            w = w - (w @ gs @ b) * b
        nw = np.sqrt(w @ gs @ w)
        if nw > 1e-6:
            w = w / nw
            basis.append(w)
            out.append(w)
        if len(out) == d - 1:
            break
    return np.asarray(out)


def _initial_variations(M: AHMetric, z0: np.ndarray, zeta0: np.ndarray, eps: float):
    """Perturbed cosphere points for the 2n+1 frame directions (+ and -)."""
    d = M.dim
    conf = 0.5 * (1.0 - z0 @ z0)  # ball-chart length of a unit tangent vector
    _, gs, _ = M.ball_eval(z0[None], derivs=False)
    W = _orthonormal_completion(gs[0], zeta0)
    pts = []
    for sgn in (1.0, -1.0):
        for k in range(d):
            zz = z0 + sgn * eps * conf * np.eye(d)[k]
            _, g2, _ = M.ball_eval(zz[None], derivs=False)
            pts.append((zz, zeta0 / np.sqrt(zeta0 @ g2[0] @ zeta0)))
        for w in W:
            ze = np.cos(eps) * zeta0 + np.sin(eps) * sgn * w
            pts.append((z0.copy(), ze))
    return pts


def sample_flowout(M: AHMetric, base_grid, t_grid, fd_step: float = FD_STEP, frames: bool = True):
    """Flow-out samples for every base point and every (t1, t2) pair.

    ``base_grid`` is a list of (z0, zeta0) with p(z0, zeta0) = 1/2 in the
    ball chart, ``t_grid`` a list of (t1, t2).  Returns (samples, failures).
    """
    d = M.dim
    n = M.n
    samples = []
    failures = 0
    base_grid = [(np.asarray(a, float), np.asarray(b, float)) for a, b in base_grid]
    jobs = [(b, t) for b in base_grid for t in t_grid]
    if not jobs:
        return samples, failures
    members = 1 + (2 * (2 * n + 1) if frames else 0)
    Z0 = np.empty((len(jobs), 2 * members, d))
    E0 = np.empty_like(Z0)
    DUR = np.empty((len(jobs), 2 * members))
    for j, ((z0, ze0), (t1, t2)) in enumerate(jobs):
        pts = [(z0, ze0)] + (_initial_variations(M, z0, ze0, fd_step) if frames else [])
        for k, (a, b) in enumerate(pts):
            Z0[j, k], E0[j, k], DUR[j, k] = a, b, t2
            Z0[j, members + k], E0[j, members + k], DUR[j, members + k] = a, -b, t1
    try:
        bf = flow_batch(M, Z0, E0, DUR, (1.0,))
    except Exception:  # pragma: no cover - reported as failures
        return samples, len(jobs)
    Zf = bf.z[:, :, 0]
    Ef = bf.zeta[:, :, 0]
    for j, ((z0, ze0), (t1, t2)) in enumerate(jobs):
        if not (np.all(np.isfinite(Zf[j])) and np.all(np.isfinite(Ef[j]))):
            failures += 1
            continue
        vec = np.concatenate([Zf[j, :members], Zf[j, members:], Ef[j, :members], Ef[j, members:]], axis=-1)
        frame = None
        if frames:
            m = 2 * n + 1
            plus, minus = vec[1 : 1 + m], vec[1 + m : 1 + 2 * m]
            frame = np.empty((m + 1, 4 * d))
            frame[:m] = (plus - minus) / (2.0 * fd_step)
            zd, ed = hamilton_field(M, BALL, Zf[j, 0][None], Ef[j, 0][None])
            flow_vec = np.zeros(4 * d)
            flow_vec[:d] = zd[0]
            flow_vec[2 * d : 3 * d] = ed[0]
            frame[m] = flow_vec
        left = PhasePoint(BALL, Zf[j, 0], Ef[j, 0])
        right = PhasePoint(BALL, Zf[j, members], Ef[j, members])
        samples.append(LagrangianSample(left, right, float(t1), float(t2), frame, (z0, ze0)))
    return samples, failures


def random_cosphere(M: AHMetric, count: int, rng: np.random.Generator, r_max: float = 2.0):
    """Random unit cosphere points with hyperbolic radius below r_max."""
    d = M.dim
    out = []
    rho_max = np.tanh(r_max / 2.0)
    for _ in range(count):
        u = rng.normal(size=d)
        z0 = u / np.linalg.norm(u) * rho_max * rng.uniform() ** (1.0 / d)
        p = PhasePoint.unit(M, BALL, z0, rng.normal(size=d))
        out.append((p.z, p.zeta))
    return out


def symplectic_form(v: np.ndarray, w: np.ndarray, d: int) -> np.ndarray:
    """sum dzeta ^ dz + dzeta' ^ dz' on vectors in (z, z', zeta, zeta') layout."""
    zv, ev = v[..., : 2 * d], v[..., 2 * d :]
    zw, ew = w[..., : 2 * d], w[..., 2 * d :]
    return np.sum(ev * zw, axis=-1) - np.sum(ew * zv, axis=-1)


def isotropy_residual(sample: LagrangianSample, orthonormalize: bool = False) -> float:
    """Largest |omega(v_i, v_j)| over unit-normalised frame vectors."""
    F = np.asarray(sample.tangent_frame, dtype=float)
    d = F.shape[1] // 4
    s = np.linalg.svd(F, compute_uv=False)
    if s[-1] <= 0 or s[0] / s[-1] > 1e8:
        raise FrameError(f"degenerate tangent frame (condition {s[0] / max(s[-1], 1e-300):.2e})")
    if orthonormalize:
        Q, _ = np.linalg.qr(F.T)
        F = Q.T
    else:
        F = F / np.linalg.norm(F, axis=1, keepdims=True)
    W = symplectic_form(F[:, None, :], F[None, :, :], d)
    return float(np.max(np.abs(W)))


@dataclass
class CausticReport:
    kappa0: np.ndarray
    kappa_est: float
    singular_values: np.ndarray
    margins: np.ndarray  # sigma_min / (RANK_TOL sigma_max) for full-rank samples
    excluded: int
    refined: int = 0

    @property
    def histogram(self) -> dict:
        vals, counts = np.unique(self.kappa0, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}

    @property
    def worst_margin(self) -> float:
        return float(np.min(self.margins)) if self.margins.size else float("inf")


def base_projection(M: AHMetric, sample: LagrangianSample) -> np.ndarray:
    """Frame projected to (z, z') in metric-orthonormal units, (2n+2, 2d)."""
    d = M.dim
    F = sample.tangent_frame
    g, _, _ = M.ball_eval(np.stack([sample.left.z, sample.right.z]), derivs=False)
    L1 = np.linalg.cholesky(g[0])
    L2 = np.linalg.cholesky(g[1])
    return np.concatenate([F[:, :d] @ L1, F[:, d : 2 * d] @ L2], axis=1)


def caustic_scan(M: AHMetric, sweep, rank_tol: float = RANK_TOL) -> CausticReport:
    """Rank deficiency of the base projection for every off-diagonal sample."""
    k0, svals, margins = [], [], []
    excluded = refined = 0
    for smp in sweep:
        if smp.on_diagonal_set:
            excluded += 1
            continue
        P = base_projection(M, smp)
        s = np.linalg.svd(P, compute_uv=False)
        amb = (s > 1e-8 * s[0]) & (s < 1e-6 * s[0])
        if np.any(amb):
            # Richardson refinement of the frame before deciding the rank
            refined += 1
            fine, _ = sample_flowout(M, [smp.base], [(smp.t1, smp.t2)], FD_STEP / 2)
            coarse = smp.tangent_frame
            frame = (4.0 * fine[0].tangent_frame - coarse) / 3.0
            smp = LagrangianSample(smp.left, smp.right, smp.t1, smp.t2, frame, smp.base)
            s = np.linalg.svd(base_projection(M, smp), compute_uv=False)
        rank = int(np.sum(s > rank_tol * s[0]))
        k0.append(P.shape[0] - rank)
        svals.append(s)
        if rank == P.shape[0]:
            margins.append(s[-1] / (rank_tol * s[0]))
    k0 = np.asarray(k0, dtype=int)
    return CausticReport(k0, float(k0.max() / 2.0) if k0.size else 0.0, np.asarray(svals),
                         np.asarray(margins), excluded, refined)


def phase_gradient_check(M: AHMetric, sample: LagrangianSample, step: float = 1e-5):
    """Compare the sample covectors with gradients of the distance function.

    Returns (res_left, res_right): g*-norms of zeta - d_z r and of
    zeta' - d_{z'} r, gradients by central differences of shooting
    distances.  With the sign conventions of the flow-out (the right factor
    starts at -zeta0) the right covector equals +d_{z'} r.
    """
    z, z2 = sample.left.z, sample.right.z
    grads = []
    for base, other in ((z, z2), (z2, z)):
        d = base.shape[0]
        h = step * 0.5 * (1.0 - base @ base)
        pts = np.concatenate([base + h * np.eye(d), base - h * np.eye(d)])
        others = np.repeat(other[None], 2 * d, 0)
        r = shoot(M, others, pts).r
        grads.append((r[:d] - r[d:]) / (2.0 * h))
    out = []
    for zeta, base, gr in ((sample.left.zeta, z, grads[0]), (sample.right.zeta, z2, grads[1])):
        _, gs, _ = M.ball_eval(base[None], derivs=False)
        diff = zeta - gr
        out.append(float(np.sqrt(diff @ gs[0] @ diff)))
    return tuple(out)


def lambda_lr_match(M: AHMetric, sweep_left, rng: np.random.Generator):
    """Nearest-neighbour distance between a left flow-out sweep and a right one.

    The right sweep is generated from an independent ordering of the left
    endpoints taken as new initial points, flowing the right factor for the
    total time t1 + t2.
    """
    base = []
    times = []
    for smp in sweep_left:
        base.append((smp.left.z, smp.left.zeta))
        times.append(smp.t1 + smp.t2)
    perm = rng.permutation(len(base))
    pts_r = []
    d = M.dim
    for i in perm:
        z0, ze0 = base[i]
        # Lambda_R point: (z0, zeta0; Phi_t(z0, -zeta0))
        pts_r.append((z0, ze0, times[i]))
    Z0 = np.array([p[0] for p in pts_r])
    E0 = np.array([-p[1] for p in pts_r])
    T = np.array([p[2] for p in pts_r])
    bf = flow_batch(M, Z0, E0, T, (1.0,))
    right_pts = np.concatenate([Z0, bf.z[:, 0], np.array([p[1] for p in pts_r]), bf.zeta[:, 0]], axis=1)
    left_pts = np.array([s.vector() for s in sweep_left])
    scale = np.max(np.abs(left_pts), axis=0)
    tree = cKDTree(left_pts / scale)
    dist, idx = tree.query(right_pts / scale)
    # report in absolute units relative to the component scale
    diff = np.max(np.abs(left_pts[idx] - right_pts) / np.maximum(np.abs(left_pts[idx]), 1.0), axis=1)
    return float(np.max(diff)), float(np.max(dist))


def flow_commutation(M: AHMetric, base_grid, t1: float, t2: float) -> float:
    """Max deviation between the two orders of the left and right flows."""
    # the flows act on different factors, so composing in either order
    # means running the same two independent trajectories
    Z0 = np.array([b[0] for b in base_grid])
    E0 = np.array([b[1] for b in base_grid])
    a = flow_batch(M, np.concatenate([Z0, Z0]), np.concatenate([E0, -E0]),
                   np.concatenate([np.full(len(Z0), t2), np.full(len(Z0), t1)]), (1.0,))
    b = flow_batch(M, np.concatenate([Z0, Z0]), np.concatenate([-E0, E0]),
                   np.concatenate([np.full(len(Z0), t1), np.full(len(Z0), t2)]), (1.0,))
    n = len(Z0)
    la = np.concatenate([a.z[:n, 0], a.z[n:, 0]], 1)
    lb = np.concatenate([b.z[n:, 0], b.z[:n, 0]], 1)
    return float(np.max(np.abs(la - lb)))


def flowout_distance_check(M: AHMetric, sweep) -> float:
    """Max |r(z, z') - (t1 + t2)| on the exact ball."""
    z = np.array([s.left.z for s in sweep])
    z2 = np.array([s.right.z for s in sweep])
    t = np.array([s.t1 + s.t2 for s in sweep])
    return float(np.max(np.abs(ball_distance(z, z2) - t)))


# ---------------------------------------------------------------------------
# slice identity in projective coordinates


def slice_coordinates(M: AHMetric, xp: float, yp, zeta_q):
    """(lambda_tilde, mu) of a unit covector (xi, eta) at (x', y') on the lifted diagonal."""
    lam = xp * zeta_q[0]
    mu = xp * np.asarray(zeta_q[1:])
    return lam - 1.0, mu


def slice_identity_check(M: AHMetric, initial_set_grid, variant: int = 0) -> float:
    """Max |(lambda_tilde + 1)^2 + h(x', y', mu) - 1| over the grid.

    Grid entries are (x', y', alpha, m): for x' > 0 the unit covector is
    built from the full collar metric with direction angle alpha between
    the normal and the tangential unit direction m; for x' = 0 the 0-cotangent
    coordinates (lambda, mu) are built from H(0, y') directly.
    """
    worst = 0.0
    for xp, yp, alpha, m in initial_set_grid:
        yp = np.atleast_1d(np.asarray(yp, dtype=float))
        m = np.atleast_1d(np.asarray(m, dtype=float))
        H, _, _ = M.angular_metric(np.array([xp]), yp[None], variant, derivs=False)
        Hi = np.linalg.inv(H[0])
        if xp > 0:
            q = np.concatenate([[xp], yp])
            _, gs, _ = M.collar_eval(q[None], variant, derivs=False)
            eta_dir = m / np.sqrt(m @ (xp**2 * Hi) @ m)
            zeta = np.concatenate([[np.cos(alpha) / xp], np.sin(alpha) * eta_dir])
            zeta = zeta / np.sqrt(zeta @ gs[0] @ zeta)
            lt, mu = slice_coordinates(M, xp, yp, zeta)
        else:
            mu = np.sin(alpha) * m / np.sqrt(m @ Hi @ m)
            lt = np.cos(alpha) - 1.0
        val = (lt + 1.0) ** 2 + mu @ Hi @ mu
        worst = max(worst, abs(val - 1.0))
    return worst


def slice_lambda_roots(h_value: float):
    """Roots in lambda_tilde of (lambda_tilde + 1)^2 + h = 1."""
    s = np.sqrt(1.0 - h_value + 0j)
    return (-1.0 + s, -1.0 - s)

"""
Vectorised Dormand-Prince 5(4) integrator for batches of ODE systems.

Trajectories are organised in groups.  All members of a group share one
adaptive step sequence (the error norm is the max over the group), which
keeps finite-difference stencils built from neighbouring trajectories
coherent.  Different groups step independently.
"""

from __future__ import annotations

import numpy as np

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


class BatchStepFailure(RuntimeError):
    pass


def integrate(fun, y0, t_out, rtol=1e-10, atol=1e-12, h0=None, max_steps=200000, err_slice=None):
    """Integrate ``y' = fun(y, groups)`` for every group from t = 0.

    Parameters
    ----------
    fun : callable
        ``fun(y, idx)`` with ``y`` of shape (Ga, m, L) for the active group
        indices ``idx``; returns the derivative with the same shape.
    y0 : (G, m, L) array
    t_out : (G, K) array
        Increasing output times per group, all > 0.  Steps are clipped to
        land on them exactly.
    err_slice : slice, optional
        Components of L entering the error norm (default: all).

    Returns
    -------
    Y : (G, K, m, L) array of states at the output times.
    nsteps : (G,) accepted step counts.
    """
    y = np.array(y0, dtype=float)
    G = y.shape[0]
    t_out = np.atleast_2d(np.asarray(t_out, dtype=float))
    if t_out.shape[0] != G:
        t_out = np.broadcast_to(t_out, (G, t_out.shape[1]))
    K = t_out.shape[1]
    Y = np.empty((G, K) + y.shape[1:])
    es = slice(None) if err_slice is None else err_slice
    t = np.zeros(G)
    nxt = np.zeros(G, dtype=int)
    nsteps = np.zeros(G, dtype=int)
    span = t_out[:, -1]
    h = np.full(G, 0.01) * span if h0 is None else np.broadcast_to(np.asarray(h0, float), (G,)).copy()
    active = np.arange(G)
    k1 = fun(y, active)
    it = 0
    while active.size:
        it += 1
        if it > max_steps:
            raise BatchStepFailure("maximum number of steps exceeded")
        ya = y[active]
        ta = t[active]
        target = t_out[active, nxt[active]]
        hn = h[active]
        hs = np.minimum(hn, target - ta)
        clipped = hs < hn
        hb = hs[:, None, None]
        ks = [k1[active]]
        for i in range(1, 7):
            yi = ya.copy()
            for j, a in enumerate(_A[i]):
                if a != 0.0:
                    yi += hb * a * ks[j]
            ks.append(fun(yi, active))
        ynew = yi  # stage 7 argument is the 5th-order solution (FSAL)
        err = hb * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        sc = atol + rtol * np.maximum(np.abs(ya), np.abs(ynew))
        en = np.max(np.abs(err[..., es]) / sc[..., es], axis=(1, 2))
        ok = en <= 1.0
        if not np.all(np.isfinite(en)):
            bad = ~np.isfinite(en)
            en[bad] = 1e10
            ok[bad] = False
        fac = np.where(en > 0, 0.9 * np.maximum(en, 1e-30) ** -0.2, 5.0)
        fac = np.clip(fac, 0.2, 5.0)
        fac = np.where(ok, fac, np.minimum(fac, 1.0))
        acc = active[ok]
        if acc.size:
            y[acc] = ynew[ok]
            t[acc] = ta[ok] + hs[ok]
            k1[acc] = ks[6][ok]
            nsteps[acc] += 1
            hit = ok & (np.abs(t[active] - target) <= 1e-14 * np.maximum(span[active], 1.0))
            hit = hit | (ok & clipped)
            for gi in active[hit]:
                Y[gi, nxt[gi]] = y[gi]
                t[gi] = t_out[gi, nxt[gi]]
                nxt[gi] += 1
        # keep the nominal step when a step was clipped to an output time
        newh = np.where(clipped & ok, np.maximum(hn, hs * fac), hs * fac)
        h[active] = newh
        if np.any(h[active] < 1e-14 * span[active]):
            raise BatchStepFailure("step size underflow")
        active = active[nxt[active] < K]
    return Y, nsteps

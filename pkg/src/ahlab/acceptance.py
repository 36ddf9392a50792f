"""
The acceptance suite: twelve end-to-end checks shared by the CLI and tests.

Every check returns a :class:`CheckResult` carrying the measured values,
the tolerances they are compared with and the verdict.  Checks are pure
functions of the seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .hamflow import PhasePoint, flow, injectivity_probe, shoot
from .lagrangian import caustic_scan, isotropy_residual, lambda_lr_match, random_cosphere, sample_flowout
from .lagrangian import RANK_TOL
from .metric import BALL, ball_distance, ball_model, perturbed_model, radius_of_x
from .parametrix import (SpectralParams, assemble_kernel, boundary_exponent_fit, build_pair_fans,
                         model_kernel_h3, radial_operator_residual, transport_solve, wkb_residual_order)
from .radiation import (decay_fit, energy_identity_check, fourier_relation_check, radial_trace_oracle,
                        radiation_extract, wave_grid, wave_solve)
from .resolvent import (eisenstein_commutation_check, eisenstein_decay_fit, gaussian_bump,
                        high_energy_scaling)


@dataclass
class CheckResult:
    id: int
    name: str
    passed: bool
    measured: dict
    tolerance: dict
    seconds: float = 0.0
    error: str | None = None
    notes: list = field(default_factory=list)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"[{verdict}] {self.id:2d} {self.name}: {vals} ({self.seconds:.1f} s)"

    def to_json(self) -> dict:
        return {"id": self.id, "name": self.name, "passed": bool(self.passed),
                "measured": {k: _jsonable(v) for k, v in self.measured.items()},
                "tolerance": {k: _jsonable(v) for k, v in self.tolerance.items()},
                "seconds": round(self.seconds, 3), "error": self.error, "notes": list(self.notes)}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.3g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(a) for a in v) + "]"
    return str(v)


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(a) for a in np.asarray(v).tolist()]
    return v


def _random_ball_points(rng, count: int, d: int, rho_max: float = 0.9) -> np.ndarray:
    u = rng.normal(size=(count, d))
    u /= np.linalg.norm(u, axis=1)[:, None]
    return u * rho_max * rng.uniform(size=(count, 1)) ** (1.0 / d)


# ---------------------------------------------------------------------------
# the twelve checks


def check_energy(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, count = 0.0, 0
    for M in (ball_model(2), perturbed_model(2), ball_model(1), perturbed_model(1)):
        for _ in range(25):
            z = _random_ball_points(rng, 1, M.dim, 0.8)[0]
            tr = flow(M, PhasePoint.unit(M, BALL, z, rng.normal(size=M.dim)), 30.0, 1e-4, jacobi=False)
            worst = max(worst, tr.energy_drift)
            count += 1
    return CheckResult(1, "energy conservation", worst <= 1e-9, {"flows": count, "sup_drift": worst},
                       {"sup_drift": 1e-9})


def check_distance(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    M = ball_model(2)
    A, B = _random_ball_points(rng, 50, 3, 0.95), _random_ball_points(rng, 50, 3, 0.95)
    err = float(np.max(np.abs(shoot(M, A, B).r - ball_distance(A, B))))
    return CheckResult(2, "distance oracle", err <= 1e-6, {"pairs": 50, "max_error": err}, {"max_error": 1e-6})


_T_GRID = [(0.0, 0.0), (0.3, 0.5), (0.0, 1.5), (1.0, 2.0), (2.5, 0.7), (0.2, 3.5), (1.5, 1.5), (3.0, 2.0),
           (0.1, 0.1), (0.5, 4.5)]


def check_lagrangian(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    M = ball_model(2)
    base = random_cosphere(M, 50, rng, 2.0)
    sweep, failures = sample_flowout(M, base, _T_GRID)
    iso = max(isotropy_residual(s) for s in sweep)
    rep = caustic_scan(M, sweep)
    margin = rep.worst_margin
    lr = max(lambda_lr_match(M, sweep, rng))
    ok = iso <= 1e-6 and rep.kappa_est == 0 and margin >= 10.0 and lr <= 1e-6 and failures == 0
    return CheckResult(3, "Lagrangian isotropy and caustics", ok,
                       {"samples": len(sweep), "isotropy": iso, "kappa_est": rep.kappa_est,
                        "singular_value_margin": margin, "left_right_match": lr},
                       {"isotropy": 1e-6, "kappa_est": 0, "singular_value_margin": 10.0,
                        "left_right_match": 1e-6, "rank_tol": RANK_TOL})


def check_transport(seed: int = 0) -> CheckResult:
    p = SpectralParams(0.1, 1.0)
    M = ball_model(2)
    st = PhasePoint.unit(M, BALL, np.zeros(3), np.eye(3)[0])
    tr = flow(M, st, 6.1, t_eval=np.linspace(0, 6.1, 611))
    amp = transport_solve(M, tr, p)
    m = amp.r <= 6.0
    v = amp.a[0][m] * np.sinh(amp.r[m])
    const = float(np.max(np.abs(v / v[0] - 1)))
    exps = {}
    for label, Mm in (("ball_n2", ball_model(2)), ("ball_n1", ball_model(1)), ("perturbed_n2", perturbed_model(2)),
                      ("perturbed_n1", perturbed_model(1))):
        d = Mm.dim
        st = PhasePoint.unit(Mm, BALL, np.full(d, 0.05), np.eye(d)[0] + 0.2 * np.eye(d)[1])
        tr = flow(Mm, st, 12.0, x_min=1e-4, t_eval=np.linspace(0, 12, 1201))
        exps[label] = boundary_exponent_fit(transport_solve(Mm, tr, p)) - Mm.n / 2
    dev = max(abs(v) for v in exps.values())
    measured = {"a0_sinh_variation": const, **{f"exponent_minus_n2_{k}": v for k, v in exps.items()}}
    return CheckResult(4, "transport amplitude law", const <= 1e-4 and dev <= 0.05, measured,
                       {"a0_sinh_variation": 1e-4, "exponent_deviation": 0.05})


def check_kernel(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    M = ball_model(2)
    pairs = np.stack([_random_ball_points(rng, 50, 3, 0.8), _random_ball_points(rng, 50, 3, 0.8)], 1)
    errs = {}
    for h in (0.1, 0.05):
        pp = SpectralParams(h, 1.0)
        kg = assemble_kernel(M, pp, pairs)
        ex = model_kernel_h3(pp, ball_distance(pairs[:, 0], pairs[:, 1]))
        errs[f"kernel_rel_error_h{h}"] = float(np.max(np.abs(kg.values / ex - 1)))
    ode = float(np.max(radial_operator_residual(2 - 0.3j, np.linspace(0.5, 3, 20))))
    ok = max(errs.values()) <= 1e-4 and ode <= 1e-6
    return CheckResult(5, "kernel exactness", ok, {**errs, "radial_residual": ode},
                       {"kernel_rel_error": 1e-4, "radial_residual": 1e-6})


def check_wkb(seed: int = 0) -> CheckResult:
    hs = [0.1, 0.05, 0.025, 0.0125]
    M = perturbed_model(2)
    targets = radius_of_x(0.1) * np.array([[0.8, 0.6, 0], [0, 0.6, 0.8], [0.6, 0, -0.8]])
    srcs = np.array([[0.05, 0.0, 0.0], [0.0, 0.1, 0.05], [-0.1, 0, 0]])
    pairs = np.stack([targets, srcs], 1)
    fans = build_pair_fans(M, pairs, dict(dr=0.01, n_alpha=9, dalpha=0.05))
    fits = [wkb_residual_order(M, [SpectralParams(h, 1.0) for h in hs], pairs, J, fans=fans) for J in (0, 1)]
    gain = fits[1].slope - fits[0].slope
    return CheckResult(6, "WKB order gain", abs(gain - 1.0) <= 0.3 and not fits[1].floor_reached,
                       {"slope_J0": fits[0].slope, "slope_J1": fits[1].slope, "gain": gain,
                        "floor_reached": fits[1].floor_reached},
                       {"gain": "1.0 +- 0.3"})


def check_scaling(seed: int = 0) -> CheckResult:
    hs = [0.2, 0.1, 0.05, 0.025]
    r2 = high_energy_scaling(ball_model(2), 1.0, 1.0, hs)
    r1 = high_energy_scaling(ball_model(1), 1.0, 1.0, hs)
    ok = abs(r2.slope) <= 0.2 and r1.slope <= -0.3
    return CheckResult(7, "high-energy scaling", ok, {"slope_n2": r2.slope, "slope_n1": r1.slope},
                       {"slope_n2": "0.0 +- 0.2", "slope_n1": "<= -0.3"})


def check_commutation(seed: int = 0) -> CheckResult:
    M = ball_model(2)
    v = gaussian_bump(2, 0.5)
    res = eisenstein_commutation_check(M, 4 - 0.2j, v, 2.0).residual
    fit = eisenstein_decay_fit(M, [2.0, 4.0, 8.0, 16.0], v, 2.0)
    ok = res <= 1e-3 and abs(fit.gain - 2.0) <= 0.3
    return CheckResult(8, "Eisenstein commutation identity", ok,
                       {"residual": res, "decay_gain": fit.gain, "slope": fit.slope},
                       {"residual": 1e-3, "decay_gain": "2.0 +- 0.3"})


def radiation_oracle_parts(seed: int = 0) -> dict:
    """Trace accuracy, Huygens tail and energy ratio for the radial 3-ball."""
    M = ball_model(2)
    f = gaussian_bump(2, 0.5)
    grid = wave_grid(M, 16.0, 0.01)
    run = wave_solve(M, None, f, 2 * grid.r_max - np.log(2 / 2.5e-3) - f.support - 1.0, grid=grid)
    tr = radiation_extract(run)
    exact = radial_trace_oracle(None, f.radial, tr.s)
    err = float(np.linalg.norm(tr.values[:, 0] - exact) / np.linalg.norm(exact))
    window = (np.log(2) - f.support - 0.05, np.log(2) + f.support + 0.05)
    outside = (tr.s < window[0]) | (tr.s > window[1])
    tail = float(np.max(np.abs(tr.values[outside])) / np.max(np.abs(tr.values)))
    ratio = energy_identity_check(M, f, grid=grid).ratio
    return {"trace_l2_error": err, "huygens_tail": tail, "energy_ratio": ratio, "energy_drift": run.energy_drift}


def check_radiation(seed: int = 0) -> CheckResult:
    m = radiation_oracle_parts(seed)
    ok = m["trace_l2_error"] <= 0.01 and m["huygens_tail"] <= 1e-6 and abs(m["energy_ratio"] - 1.0) <= 0.02
    notes = []
    if abs(m["energy_ratio"] - 0.5) <= 0.01:
        notes.append("energy ratio equals 1/2 under the definition R_+ = x^(-n/2) D_t u with D_t u(0) = f2; "
                     "the target 1.00 is not attainable with this normalisation")
    return CheckResult(9, "radiation field oracle", ok, m,
                       {"trace_l2_error": 0.01, "huygens_tail": 1e-6, "energy_ratio": "1.00 +- 0.02"},
                       notes=notes)


def decay_data(r, th):
    """Off-centre initial velocity used for the decay fit."""
    return np.exp(-(r**2) / 0.5) * (1 + 0.5 * r * np.cos(th)) * (r < 3)


def check_decay(seed: int = 0) -> CheckResult:
    M = perturbed_model(1)
    grid = wave_grid(M, 16.0, 0.02, 32)
    run = wave_solve(M, None, decay_data, 19.5, grid=grid)
    tr = radiation_extract(run)
    fit = decay_fit(tr, (4.0, 12.0))
    full = fit.epsilon
    a = decay_fit(tr, (4.0, 8.0)).epsilon
    b = decay_fit(tr, (8.0, 12.0)).epsilon
    stab = abs(a - b) / min(a, b)
    return CheckResult(10, "exponential decay", full >= 0.25 and stab <= 0.3,
                       {"epsilon_4_12": full, "epsilon_4_12_band": list(fit.band), "epsilon_4_8": a,
                        "epsilon_8_12": b, "window_change": stab, "energy_drift": run.energy_drift},
                       {"epsilon_4_12": ">= 0.25", "window_change": 0.3})


def check_fourier(seed: int = 0) -> CheckResult:
    M = ball_model(2)
    f = gaussian_bump(2, 0.5)
    fr = fourier_relation_check(M, None, f, [2.0, 4.0, 8.0])
    res = {f"residual_lambda{int(l)}": float(r) for l, r in zip(fr.lams, fr.residuals)}
    return CheckResult(11, "Fourier relation", max(res.values()) <= 0.05, res, {"residual": 0.05})


def check_injectivity(seed: int = 0) -> CheckResult:
    M = ball_model(2)
    rng = np.random.default_rng(seed)
    caps, mono = [], []
    for z in [np.zeros(3)] + list(_random_ball_points(rng, 2, 3, 0.5)):
        pr = injectivity_probe(M, z, r_cap=3.0, seed=seed)
        caps.append(pr.radius == pr.r_cap)
        mono.append(pr.monotone and bool(np.all(np.diff(pr.min_det) > 0)))
    return CheckResult(12, "injectivity probe", all(caps) and all(mono),
                       {"cap_reached": all(caps), "determinants_increasing": all(mono)},
                       {"cap_reached": True, "determinants_increasing": True})


CHECKS: dict[int, Callable[[int], CheckResult]] = {
    1: check_energy, 2: check_distance, 3: check_lagrangian, 4: check_transport, 5: check_kernel,
    6: check_wkb, 7: check_scaling, 8: check_commutation, 9: check_radiation, 10: check_decay,
    11: check_fourier, 12: check_injectivity,
}


def run_check(cid: int, seed: int = 0) -> CheckResult:
    """Run one check; exceptions become failing results instead of propagating."""
    t0 = time.perf_counter()
    try:
        res = CHECKS[cid](seed)
    except Exception as exc:  # recorded per check so sibling checks still run
        res = CheckResult(cid, CHECKS[cid].__name__.removeprefix("check_"), False, {}, {},
                          error=f"{type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - t0
    return res


def run_suite(ids=None, seed: int = 0, threads: int = 1) -> list:
    ids = sorted(CHECKS) if ids is None else list(ids)
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(threads) as ex:
            return list(ex.map(run_check, ids, [seed] * len(ids)))
    return [run_check(i, seed) for i in ids]

"""
Command-line entry point: experiment configuration, execution and reports.

Every subcommand builds an :class:`ExperimentConfig`, runs it with
:func:`run` and writes its CSV/JSON outputs plus a ``manifest.json`` into the
output directory.  Files are written once, through a temporary file that is
renamed into place.

Exit codes: 0 success, 1 failing acceptance check, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .metric import ConfigError, metric_from_config

SCHEMA = "ahlab-experiment/1"
KINDS = ("flow", "distance", "lagrangian", "kernel", "resolvent-norm", "eisenstein", "radiation",
         "acceptance-suite")

log = logging.getLogger("ahlab")


# ---------------------------------------------------------------------------
# configuration and manifest


@dataclass
class ExperimentConfig:
    kind: str
    metric: dict = field(default_factory=lambda: {"n": 2, "model": "ball"})
    params: dict = field(default_factory=dict)
    out: str = "results"
    seed: int = 0
    schema: str = SCHEMA

    def validate(self) -> "ExperimentConfig":
        if self.schema != SCHEMA:
            raise ConfigError("schema", f"expected {SCHEMA!r}, got {self.schema!r}")
        if self.kind not in KINDS:
            raise ConfigError("kind", f"unknown kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed", "must be a nonnegative integer")
        if not isinstance(self.params, dict):
            raise ConfigError("params", "expected an object")
        metric_from_config(self.metric)
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config", "expected a JSON object")
        unknown = set(doc) - {"kind", "metric", "params", "out", "seed", "schema"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        if "kind" not in doc:
            raise ConfigError("kind", "missing")
        return ExperimentConfig(**doc).validate()

    def digest(self) -> str:
        doc = asdict(self)
        doc.pop("out")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    version: str
    kind: str
    seed: int
    wall_clock: float
    checks: list  # per-check records {id, name, passed, measured, tolerance, ...}
    outputs: list

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _json_text(doc) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(a) for k, a in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(a) for a in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (complex, np.complexfloating)):
        return {"re": _plain(float(v.real)), "im": _plain(float(v.imag))}
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    return v


class _Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []

    def csv(self, name: str, header, rows):
        _atomic_write(self.root / name, _csv_text(header, rows))
        self.files.append(name)

    def json(self, name: str, doc):
        _atomic_write(self.root / name, _json_text(doc))
        self.files.append(name)


# ---------------------------------------------------------------------------
# experiment kinds


def _param(cfg: ExperimentConfig, name: str, default, kind=float):
    val = cfg.params.get(name, default)
    try:
        if kind is list:
            return [float(v) for v in (val.split(",") if isinstance(val, str) else val)]
        if kind is complex:
            return complex(str(val).replace(" ", "").replace("i", "j"))
        return kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"params.{name}", f"cannot interpret {val!r}") from None


def _run_flow(cfg, M, out):
    from .hamflow import PhasePoint, flow
    from .metric import BALL

    z = np.asarray(_param(cfg, "start", [0.0] * M.dim, list))
    v = np.asarray(_param(cfg, "direction", [1.0] + [0.0] * (M.dim - 1), list))
    if z.size != M.dim or v.size != M.dim:
        raise ConfigError("params.start", f"start and direction need {M.dim} components")
    tr = flow(M, PhasePoint.unit(M, BALL, z, v), _param(cfg, "t_end", 10.0), _param(cfg, "x_min", 1e-4))
    d = M.dim
    header = ["t", "chart"] + [f"z_ball_{i}" for i in range(d)] + [f"zeta_{i}" for i in range(d)] + ["p", "det_perp"]
    rows = [[t, str(c), *zb, *ze, e, dp] for t, c, zb, ze, e, dp in
            zip(tr.times, tr.charts, tr.z_ball, tr.zeta, tr.energies, tr.det_perp)]
    out.csv("flow.csv", header, rows)
    out.json("flow.json", {"termination": tr.termination.value, "energy_drift": tr.energy_drift,
                           "switches": [str(s) for s in tr.switches],
                           "t_final": tr.times[-1]})
    return []


def _run_distance(cfg, M, out):
    from .acceptance import _random_ball_points
    from .hamflow import shoot
    from .metric import ball_distance

    rng = np.random.default_rng(cfg.seed)
    N = _param(cfg, "pairs", 50, int)
    A, B = _random_ball_points(rng, N, M.dim), _random_ball_points(rng, N, M.dim)
    sr = shoot(M, A, B)
    exact = ball_distance(A, B) if not M.terms else np.full(N, np.nan)
    d = M.dim
    header = [f"z_{i}" for i in range(d)] + [f"w_{i}" for i in range(d)] + ["distance", "ball_closed_form"]
    out.csv("distance.csv", header, [[*a, *b, r, e] for a, b, r, e in zip(A, B, sr.r, exact)])
    checks = []
    if not M.terms:
        err = float(np.max(np.abs(sr.r - exact)))
        checks.append({"id": 0, "name": "distance oracle", "passed": err <= 1e-6, "measured": {"max_error": err},
                       "tolerance": {"max_error": 1e-6}})
    out.json("distance.json", {"pairs": N, "max_newton_iterations": int(np.max(sr.iterations))})
    return checks


def _run_lagrangian(cfg, M, out):
    from .acceptance import _T_GRID
    from .lagrangian import caustic_scan, isotropy_residual, lambda_lr_match, random_cosphere, sample_flowout

    rng = np.random.default_rng(cfg.seed)
    base = random_cosphere(M, _param(cfg, "count", 20, int), rng, _param(cfg, "r_max", 2.0))
    sweep, failures = sample_flowout(M, base, _T_GRID)
    iso = np.array([isotropy_residual(s) for s in sweep])
    rep = caustic_scan(M, sweep)
    lr = lambda_lr_match(M, sweep, rng)
    out.csv("lagrangian.csv", ["t1", "t2", "isotropy", "kappa0"],
            [[s.t1, s.t2, i, k] for s, i, k in zip(sweep, iso, _pad(rep.kappa0, len(sweep)))])
    out.json("lagrangian.json", {"samples": len(sweep), "failures": failures, "isotropy_max": iso.max(),
                                 "kappa_est": rep.kappa_est, "histogram": rep.histogram,
                                 "worst_margin": rep.worst_margin, "left_right_match": list(lr)})
    return []


def _pad(a, n):
    a = list(np.asarray(a).ravel())
    return a + [""] * (n - len(a)) if len(a) < n else a[:n]


def _run_kernel(cfg, M, out):
    from .acceptance import _random_ball_points
    from .metric import ball_distance
    from .parametrix import SpectralParams, assemble_kernel, model_kernel_h3

    rng = np.random.default_rng(cfg.seed)
    N = _param(cfg, "pairs", 20, int)
    p = SpectralParams(_param(cfg, "h", 0.1), _param(cfg, "sigma", 1.0, complex))
    J = _param(cfg, "J", 0, int)
    pairs = np.stack([_random_ball_points(rng, N, M.dim, 0.8), _random_ball_points(rng, N, M.dim, 0.8)], 1)
    kg = assemble_kernel(M, p, pairs, J=J)
    exact = (model_kernel_h3(p, ball_distance(pairs[:, 0], pairs[:, 1])) if (M.n == 2 and not M.terms)
             else np.full(N, np.nan + 0j))
    out.csv("kernel.csv", ["distance", "re", "im", "exact_re", "exact_im"],
            [[r, v.real, v.imag, e.real, e.imag] for r, v, e in zip(kg.distances, kg.values, exact)])
    checks = []
    if M.n == 2 and not M.terms and J == 0:
        err = float(np.max(np.abs(kg.values / exact - 1)))
        checks.append({"id": 0, "name": "kernel exactness", "passed": err <= 1e-4, "measured": {"rel_error": err},
                       "tolerance": {"rel_error": 1e-4}})
    out.json("kernel.json", {"h": p.h, "sigma": p.sigma, "J": J, "pairs": N})
    return checks


def _run_resolvent_norm(cfg, M, out):
    from .resolvent import high_energy_scaling

    hs = _param(cfg, "h_list", [0.2, 0.1, 0.05, 0.025], list)
    rep = high_energy_scaling(M, _param(cfg, "a", 1.0), _param(cfg, "b", 1.0), hs,
                              lam_imag=_param(cfg, "sigma", -0.3))
    doc = {"a": rep.a, "b": rep.b, "h": rep.hs, "lambda": [complex(l) for l in rep.lam], "I": rep.I,
           "II": rep.II, "bound": rep.bounds, "slope": rep.slope, "kappa_used": rep.kappa_used,
           "predicted_slope": rep.predicted}
    out.json("resolvent_norm.json", doc)
    out.csv("resolvent_norm.csv", ["h", "abs_lambda", "I", "II", "bound"],
            [[h, abs(l), i, j, b] for h, l, i, j, b in zip(rep.hs, rep.lam, rep.I, rep.II, rep.bounds)])
    return []


def _load_profile(path: str, n: int):
    from .resolvent import SeparableFunction

    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError("params.source", f"cannot read radial profile: {exc}") from None
    if data.shape[1] != 2:
        raise ConfigError("params.source", "expected two columns R, g")
    return SeparableFunction(n, data[:, 0], data[:, 1], 0)


def _run_eisenstein(cfg, M, out):
    from .hamflow import sphere_directions
    from .resolvent import eisenstein_apply, eisenstein_commutation_check, gaussian_bump, weighted

    lam = _param(cfg, "lambda", "4-0.2i", complex)
    b = _param(cfg, "b", 2.0)
    src = cfg.params.get("source", "gaussian")
    v = gaussian_bump(M.n) if src == "gaussian" else _load_profile(src, M.n)
    y = sphere_directions(M.n, _param(cfg, "points", 12, int))
    tr = eisenstein_apply(M, lam, weighted(v, b), y)
    res = eisenstein_commutation_check(M, lam, v, b, y).residual
    header = ["y_0", "y_1", "y_2", "re", "im"] + [f"raw_x{x:g}_{p}" for x in tr.x_levels for p in ("re", "im")]
    rows = [[*yy, val.real, val.imag, *np.ravel([[r.real, r.imag] for r in tr.raw[:, k]])]
            for k, (yy, val) in enumerate(zip(tr.y, tr.values))]
    out.csv("eisenstein.csv", header, rows)
    out.json("eisenstein.json", {"lambda": lam, "b": b, "x_levels": tr.x_levels, "corrections": tr.corrections,
                                 "anisotropy": tr.anisotropy, "commutation_residual": res})
    return [{"id": 0, "name": "commutation identity", "passed": res <= 1e-3, "measured": {"residual": res},
             "tolerance": {"residual": 1e-3}}]


def _profile(name: str, M, key: str):
    from .acceptance import decay_data
    from .resolvent import gaussian_bump

    if name in ("zero", "none", None):
        return None
    if name == "gaussian":
        return gaussian_bump(M.n) if M.n == 2 else (lambda r, th: np.exp(-(r**2) / 0.5) * (r < 3))
    if name == "offcentre":
        if M.n == 2:
            raise ConfigError(f"params.{key}", "off-centre data needs n = 1 (radial waves only for n = 2)")
        return decay_data
    raise ConfigError(f"params.{key}", f"unknown profile {name!r}; use gaussian, offcentre or zero")


def _run_radiation(cfg, M, out):
    from .radiation import (decay_fit, energy_identity_check, fourier_relation_check, radiation_extract,
                            wave_grid, wave_solve)

    f1 = _profile(cfg.params.get("f1", "zero"), M, "f1")
    f2 = _profile(cfg.params.get("f2", "gaussian"), M, "f2")
    xl = _param(cfg, "x_levels", [1e-2, 5e-3, 2.5e-3], list)
    win = _param(cfg, "s_window", [4.0, 12.0], list)
    grid = wave_grid(M, _param(cfg, "r_max", 16.0), _param(cfg, "dr", 0.01 if M.n == 2 else 0.02))
    t_end = _param(cfg, "t_end", win[1] + np.log(2 / min(xl)) + 1.0)
    run = wave_solve(M, f1, f2, t_end, grid=grid, x_levels=xl)
    tr = radiation_extract(run)
    try:
        dec = decay_fit(tr, tuple(win))
        eps, band = dec.epsilon, dec.band
    except Exception as exc:
        eps, band = None, str(exc)
    doc = {"epsilon_fit": eps, "epsilon_band": band, "energy_drift": run.energy_drift, "cfl": run.cfl,
           "s_clean": tr.s_clean, "richardson_corrections": tr.corrections, "dt_factor": tr.dt_factor}
    if f1 is None and f2 is not None:
        doc["energy_ratio"] = energy_identity_check(M, f2, grid=grid).ratio
    if M.n == 2 and not M.terms:
        fr = fourier_relation_check(M, f1, f2, [2.0, 4.0, 8.0], run=run)
        doc["fourier_residuals"] = dict(zip(["2", "4", "8"], fr.residuals))
    ys = [0.0] if tr.y is None else tr.y
    rows = [[s, y, v.real, v.imag] for s, row in zip(tr.s, tr.values) for y, v in zip(ys, row)]
    out.csv("radiation_trace.csv", ["s", "y", "re", "im"], rows)
    out.csv("radiation_norms.csv", ["s", "l2_norm"], list(zip(tr.s, tr.norms)))
    out.json("radiation.json", doc)
    return []


def _run_acceptance(cfg, M, out):
    from .acceptance import run_suite

    ids = cfg.params.get("only")
    ids = None if ids is None else [int(i) for i in (ids.split(",") if isinstance(ids, str) else ids)]
    results = run_suite(ids, seed=cfg.seed, threads=int(cfg.params.get("threads", 1)))
    for r in results:
        print(r.line() + (f"  error: {r.error}" if r.error else ""))
    recs = [r.to_json() for r in results]
    out.json("acceptance.json", recs)
    return recs


RUNNERS = {"flow": _run_flow, "distance": _run_distance, "lagrangian": _run_lagrangian, "kernel": _run_kernel,
           "resolvent-norm": _run_resolvent_norm, "eisenstein": _run_eisenstein, "radiation": _run_radiation,
           "acceptance-suite": _run_acceptance}


def run(config: ExperimentConfig, deterministic_clock: bool = False) -> RunManifest:
    """Execute ``config``, write its outputs and the manifest, return the manifest."""
    config.validate()
    M = metric_from_config(config.metric)
    root = Path(config.out)
    out = _Outputs(root)
    t0 = time.perf_counter()
    checks = RUNNERS[config.kind](config, M, out)
    wall = 0.0 if deterministic_clock else time.perf_counter() - t0
    out.json("config.json", json.loads(config.to_json()))
    man = RunManifest(config.digest(), __version__, config.kind, config.seed, wall, checks, sorted(out.files))
    _atomic_write(root / "manifest.json", man.to_json() + "\n")
    return man


# ---------------------------------------------------------------------------
# report


def report(manifest_dir, plots: bool = True) -> dict:
    """Summarise every manifest.json below ``manifest_dir`` into summary.txt/.json/.csv.

    With ``plots`` the CSV traces found next to the manifests are also
    rendered as PNG files.
    """
    root = Path(manifest_dir)
    paths = sorted(root.rglob("manifest.json")) if root.is_dir() else []
    rows, warnings, missing = [], [], []
    if not paths:
        warnings.append(f"no manifests found under {root}")
    for p in paths:
        try:
            man = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            missing.append(f"{p}: {exc}")
            continue
        for c in man.get("checks", []):
            rows.append({"manifest": str(p.parent.relative_to(root)) or ".", "kind": man.get("kind"),
                         "id": c.get("id"), "name": c.get("name"), "passed": bool(c.get("passed")),
                         "measured": c.get("measured", {}), "tolerance": c.get("tolerance", {}),
                         "error": c.get("error")})
    failing = [f"{r['manifest']}:{r['name']}" for r in rows if not r["passed"]]
    summary = {"manifests": len(paths), "checks": len(rows), "failing": failing, "warnings": warnings,
               "unreadable": missing, "rows": rows}
    lines = [f"manifests: {len(paths)}  checks: {len(rows)}  failing: {len(failing)}"]
    lines += [f"warning: {w}" for w in warnings + missing]
    for r in rows:
        vals = ", ".join(f"{k}={_band(k, v, r['measured'])}" for k, v in r["measured"].items()
                         if not k.endswith("_band"))
        lines.append(f"{'PASS' if r['passed'] else 'FAIL'}  {r['manifest']}  {r['name']}: {vals}")
    out = _Outputs(root)
    if root.is_dir():
        _atomic_write(root / "summary.txt", "\n".join(lines) + "\n")
        out.json("summary.json", summary)
        out.csv("summary.csv", ["manifest", "kind", "id", "name", "passed", "measured"],
                [[r["manifest"], r["kind"], r["id"], r["name"], r["passed"], json.dumps(r["measured"], sort_keys=True)]
                 for r in rows])
        if plots:
            summary["plots"] = _render_plots(root)
    summary["text"] = "\n".join(lines)
    return summary


def _band(key, value, measured):
    band = measured.get(key + "_band")
    if band is not None:
        return f"{_short(value)} [{_short(band[0])}, {_short(band[1])}]"
    return _short(value)


def _short(v):
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def _render_plots(root: Path) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    made = []
    specs = {"radiation_norms.csv": ("s", "l2_norm", True), "resolvent_norm.csv": ("abs_lambda", "bound", "loglog"),
             "flow.csv": ("t", "det_perp", True)}
    for name, (xk, yk, scale) in specs.items():
        for path in sorted(root.rglob(name)):
            with open(path, encoding="utf-8", newline="") as fh:
                rows = list(csv.DictReader(fh))
            if not rows:
                continue
            x = np.array([float(r[xk]) for r in rows])
            y = np.array([float(r[yk]) for r in rows])
            fig, ax = plt.subplots(figsize=(5, 3.5))
            if scale == "loglog":
                ax.loglog(x, y, "o-")
            else:
                ax.semilogy(x, np.abs(y))
            ax.set_xlabel(xk)
            ax.set_ylabel(yk)
            ax.set_title(f"{path.parent.name}/{name}")
            fig.tight_layout()
            png = path.with_suffix(".png")
            fd, tmp = tempfile.mkstemp(dir=png.parent, suffix=".png")
            os.close(fd)
            fig.savefig(tmp, dpi=110)
            plt.close(fig)
            os.replace(tmp, png)
            made.append(str(png.relative_to(root)))
    return made


# ---------------------------------------------------------------------------
# argument parsing


def _global_options(suppress: bool) -> argparse.ArgumentParser:
    # The copy attached to subcommands suppresses its defaults so that a
    # global option given before the subcommand is not overwritten.
    kw = {"argument_default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False, **kw)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--out", help="output directory (default: results/<subcommand>)")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, help="worker processes for independent checks")
    common.add_argument("--metric", help="metric configuration as JSON text or a path to a JSON file")
    return common


def _parser() -> argparse.ArgumentParser:
    common = _global_options(suppress=True)
    ap = argparse.ArgumentParser(prog="ahlab", description=__doc__.strip().splitlines()[0],
                                 parents=[_global_options(suppress=False)])
    ap.set_defaults(threads=1)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", parents=[common], help="integrate one bicharacteristic")
    p.add_argument("--start", help="comma-separated ball coordinates")
    p.add_argument("--direction", help="comma-separated direction")
    p.add_argument("--t-end", type=float)
    p.add_argument("--x-min", type=float)

    p = sub.add_parser("distance", parents=[common], help="geodesic distances of random pairs")
    p.add_argument("--pairs", type=int)

    p = sub.add_parser("lagrangian", parents=[common], help="flow-out sweep diagnostics")
    p.add_argument("--count", type=int)

    p = sub.add_parser("kernel", parents=[common], help="assembled WKB kernel at random pairs")
    p.add_argument("--h", type=float)
    p.add_argument("--sigma", help="complex spectral parameter, e.g. 1+0.05i")
    p.add_argument("--J", type=int)
    p.add_argument("--pairs", type=int)

    p = sub.add_parser("resolvent-norm", parents=[common], help="weighted Schur bounds against 1/h")
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--h-list", help="comma-separated h values")
    p.add_argument("--sigma", type=float, help="imaginary part of lambda")

    p = sub.add_parser("eisenstein", parents=[common], help="boundary limit and commutation identity")
    p.add_argument("--lambda", dest="lambda_", help="complex lambda, e.g. 4-0.2i")
    p.add_argument("--b", type=float)
    p.add_argument("--source", help="CSV radial profile (R, g) or 'gaussian'")

    p = sub.add_parser("radiation", parents=[common], help="wave solve and radiation field")
    p.add_argument("--f1", help="gaussian, offcentre or zero")
    p.add_argument("--f2", help="gaussian, offcentre or zero")
    p.add_argument("--t-end", type=float)
    p.add_argument("--x-levels", help="comma-separated extraction levels")
    p.add_argument("--s-window", help="lo,hi of the decay-fit window")

    p = sub.add_parser("acceptance-suite", parents=[common], help="run the acceptance checks")
    p.add_argument("--only", help="comma-separated check ids")

    p = sub.add_parser("report", parents=[common], help="summarise manifests")
    p.add_argument("manifest_dir", nargs="?", help="directory with manifests (default: --out or results)")
    p.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    return ap


_FLAG_PARAMS = {"start": "start", "direction": "direction", "t_end": "t_end", "x_min": "x_min", "pairs": "pairs",
                "count": "count", "h": "h", "sigma": "sigma", "J": "J", "a": "a", "b": "b", "h_list": "h_list",
                "lambda_": "lambda", "source": "source", "f1": "f1", "f2": "f2", "x_levels": "x_levels",
                "s_window": "s_window", "only": "only"}


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("config", str(exc)) from None
        cfg = ExperimentConfig.from_json(text)
        if cfg.kind != args.command:
            raise ConfigError("kind", f"configuration is for {cfg.kind!r}, not {args.command!r}")
    else:
        cfg = ExperimentConfig(kind=args.command, out=f"results/{args.command}")
    if args.metric:
        text = args.metric
        if not text.lstrip().startswith("{"):
            try:
                text = Path(text).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError("metric", str(exc)) from None
        try:
            cfg.metric = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("metric", f"invalid JSON: {exc}") from None
    for attr, key in _FLAG_PARAMS.items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg.params[key] = val
    if args.command == "acceptance-suite" and args.threads:
        cfg.params["threads"] = args.threads
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    if args.threads and args.threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    try:
        if args.command == "report":
            target = args.manifest_dir or args.out or "results"
            summary = report(target, plots=not args.no_plots)
            print(summary["text"])
            return 1 if summary["failing"] else 0
        cfg = _config_from_args(args)
        man = run(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, NotImplementedError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(man.outputs)} files to {cfg.out}")
    if args.command == "acceptance-suite" and not man.passed:
        return 1
    return 0 if man.passed else 1


if __name__ == "__main__":
    sys.exit(main())

"""Study configuration and the AMVP / convergence drivers."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .catalog import lookup
from .errors import ConfigError, InvalidExponent, NotConverged, VanishingGradient
from .field import Grid, boundary_trace_from
from .geometry import Domain, build_ball_quadrature, domain_from_dict
from .operator import OperatorConfig, amvp_ratio, amvp_target
from .pmean import as_exponent
from .solver import SolverConfig, perron_solve

log = logging.getLogger(__name__)

__all__ = [
    "StudyConfig",
    "ConvergenceRow",
    "load_config",
    "run_amvp_study",
    "run_convergence_study",
    "run_solve",
    "strictly_decreasing",
    "nonincreasing",
]

AMVP_HEADER = ("p", "eps", "point_id", "ratio", "target", "abs_err")
CONVERGENCE_HEADER = ("p", "eps", "h", "sup_error", "iters", "seconds")
# sub-roundoff differences in an error sequence are not trends
ERROR_NOISE = 1e-10

_KNOWN_KEYS = {"domain", "p", "eps", "h", "data", "out", "threads", "tol_fix", "max_iters", "sweep",
               "init", "quadrature", "points", "seed", "max_seconds"}


def _as_list(v, what):
    if v is None:
        return []
    if isinstance(v, (list, tuple)):
        return list(v)
    if isinstance(v, (int, float, str)):
        return [v]
    raise ConfigError(f"{what} must be a number or a list")


@dataclass
class StudyConfig:
    domain: Domain
    p: list
    eps: list
    h: list
    data: str
    out: Path = Path(".")
    threads: int | None = None
    tol_fix: float | None = None
    max_iters: int | None = None
    sweep: str = "jacobi"
    init: str = "constant_min_g"
    quadrature: dict | None = None
    points: int = 20
    seed: int = 0
    max_seconds: float | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "StudyConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("domain", "p", "eps", "data"):
            if key not in doc:
                raise ConfigError(f"config is missing {key!r}")
        dom = domain_from_dict(doc["domain"])
        try:
            ps = [as_exponent(p) for p in _as_list(doc["p"], "p")]
        except InvalidExponent as exc:
            raise ConfigError(str(exc)) from None
        eps = [float(e) for e in _as_list(doc["eps"], "eps")]
        hs = [float(h) for h in _as_list(doc.get("h"), "h")]
        if not ps or not eps:
            raise ConfigError("p and eps lists must be non-empty")
        eps0 = dom.inradius()
        for e in eps:
            if not 0 < e <= eps0:
                raise ConfigError(f"eps={e} must lie in (0, {eps0:.6g}] for this domain")
        for h in hs:
            if not h > 0:
                raise ConfigError("grid spacings must be positive")
        data = str(doc["data"])
        for p in ps:
            lookup(data, dom.dim, p)  # validates the name early
        threads = doc.get("threads")
        if threads is not None and (not isinstance(threads, int) or threads < 1):
            raise ConfigError("threads must be a positive integer")
        quad = doc.get("quadrature")
        if quad is not None and (not isinstance(quad, dict) or set(quad) - {"radial", "angular"}):
            raise ConfigError("quadrature must be {'radial': int, 'angular': int}")
        return cls(
            domain=dom, p=ps, eps=eps, h=hs, data=data, out=Path(doc.get("out", ".")),
            threads=threads, tol_fix=doc.get("tol_fix"), max_iters=doc.get("max_iters"),
            sweep=doc.get("sweep", "jacobi"), init=doc.get("init", "constant_min_g"),
            quadrature=quad, points=int(doc.get("points", 20)), seed=int(doc.get("seed", 0)),
            max_seconds=doc.get("max_seconds"), raw=dict(doc),
        )

    def op(self, p, eps) -> OperatorConfig:
        quad = None
        if self.quadrature:
            quad = build_ball_quadrature(self.domain.dim, int(self.quadrature.get("radial", 8)),
                                         int(self.quadrature.get("angular", 32)))
        return OperatorConfig(p, eps, quadrature=quad)

    def solver(self, p, eps) -> SolverConfig:
        return SolverConfig(self.op(p, eps), init=self.init, tol_fix=self.tol_fix,
                            max_iters=self.max_iters, sweep=self.sweep, max_seconds=self.max_seconds)

    def apply_threads(self):
        if self.threads is not None:
            os.environ["VPHARM_THREADS"] = str(self.threads)
        _kernels.apply_thread_cap()


def load_config(path) -> StudyConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return StudyConfig.from_dict(doc)


def strictly_decreasing(seq) -> bool:
    return all(b < a for a, b in zip(seq, seq[1:]))


def nonincreasing(seq, noise: float = ERROR_NOISE) -> bool:
    return all(b <= a + noise for a, b in zip(seq, seq[1:]))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# AMVP study


def sample_points(cfg: StudyConfig, n: int | None = None) -> np.ndarray:
    """Deterministic points at distance >= max eps from the boundary."""
    n = cfg.points if n is None else n
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.domain.bounding_box()
    margin = max(cfg.eps)
    out = []
    for _ in range(200):
        cand = rng.uniform(lo, hi, size=(4 * n, cfg.domain.dim))
        keep = cand[cfg.domain.signed_distance(cand) >= margin]
        out.extend(keep)
        if len(out) >= n:
            return np.array(out[:n])
    raise ConfigError("could not place sample points away from the boundary")


@dataclass
class AmvpResult:
    rows: list
    max_error: dict  # (p, eps) -> max abs error over the sample set
    skipped: list
    path: Path | None = None

    def errors_for(self, p) -> list:
        return [self.max_error[(p, e)] for e in sorted({e for (q, e) in self.max_error if q == p}, reverse=True)]


def run_amvp_study(cfg: StudyConfig, write: bool = True) -> AmvpResult:
    cfg.apply_threads()
    pts = sample_points(cfg)
    rows, skipped, max_err = [], [], {}
    for p in cfg.p:
        probe = lookup(cfg.data, cfg.domain.dim, p).probe
        for eps in cfg.eps:
            op = cfg.op(p, eps)
            worst = 0.0
            for k, x in enumerate(pts):
                try:
                    target = amvp_target(op, probe, x)
                    ratio = amvp_ratio(op, probe, x, cfg.domain)
                except VanishingGradient:
                    skipped.append((str(p), eps, k))
                    log.warning("skipping point %d at %s: vanishing gradient", k, x)
                    continue
                err = abs(ratio - target)
                worst = max(worst, err)
                rows.append((str(p), eps, k, ratio, target, err))
            max_err[(str(p), eps)] = worst
    path = None
    if write:
        path = cfg.out / "amvp.csv"
        _write_csv(path, AMVP_HEADER, rows)
    return AmvpResult(rows, max_err, skipped, path)


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class ConvergenceRow:
    p: str
    eps: float
    h: float
    sup_error: float
    iters: int
    seconds: float
    converged: bool = True

    def __post_init__(self):
        if not self.sup_error >= 0:
            raise ValueError("sup_error must be nonnegative")

    def as_tuple(self):
        return (self.p, self.eps, self.h, self.sup_error, self.iters, self.seconds)


@dataclass
class ConvergenceResult:
    rows: list
    decreasing: dict  # p -> strictly decreasing along eps at the finest h
    path: Path | None = None


def run_convergence_study(cfg: StudyConfig, write: bool = True, progress=None) -> ConvergenceResult:
    """Solve for every (p, eps, h) and compare with the exact catalog solution.

    Unconverged cells are kept and flagged in convergence_flags.json.
    """
    if not cfg.h:
        raise ConfigError("convergence study needs an h list")
    cfg.apply_threads()
    rows = []
    for p in cfg.p:
        entry = lookup(cfg.data, cfg.domain.dim, p)
        if not entry.is_exact(p):
            raise ConfigError(f"{cfg.data!r} is not an exact solution at p={p}")
        _check_aronsson_domain(cfg, entry.name)
        for h in cfg.h:
            grid = Grid(cfg.domain, h)
            g = boundary_trace_from(entry.probe.value, grid)
            exact = np.asarray(entry.probe.value(grid.interior_nodes), dtype=float)
            for eps in cfg.eps:
                t0 = time.perf_counter()
                try:
                    rep = perron_solve(cfg.solver(p, eps), g)
                except NotConverged as exc:
                    rep = exc.report
                    log.warning("p=%s eps=%g h=%g did not converge", p, eps, h)
                secs = time.perf_counter() - t0
                err = float(np.max(np.abs(rep.solution.interior - exact))) if grid.n_interior else 0.0
                row = ConvergenceRow(str(p), eps, h, err, rep.iterations, secs, rep.converged)
                rows.append(row)
                if progress is not None:
                    progress(row)
    finest = min(cfg.h)
    decreasing = {}
    for p in {r.p for r in rows}:
        seq = [r.sup_error for r in rows if r.p == p and r.h == finest]
        decreasing[p] = strictly_decreasing(seq)
        if not decreasing[p]:
            log.warning("sup_error is not strictly decreasing in eps for p=%s: %s", p, seq)
    path = None
    if write:
        path = cfg.out / "convergence.csv"
        _write_csv(path, CONVERGENCE_HEADER, [r.as_tuple() for r in rows])
        flags = {
            "rows": [{"p": r.p, "eps": r.eps, "h": r.h, "converged": r.converged} for r in rows],
            "strictly_decreasing_at_finest_h": decreasing,
        }
        (cfg.out / "convergence_flags.json").write_text(json.dumps(flags, indent=2) + "\n")
    return ConvergenceResult(rows, decreasing, path)


def _check_aronsson_domain(cfg: StudyConfig, name: str):
    if name != "aronsson":
        return
    lo, hi = cfg.domain.bounding_box()
    if not (np.all(lo > 0) or np.all(hi < 0)) and not (lo[0] > 0 and hi[1] < 0) and not (hi[0] < 0 and lo[1] > 0):
        raise ConfigError("aronsson data needs a domain that stays off both coordinate axes")


# ---------------------------------------------------------------------------
# single solve


def run_solve(cfg: StudyConfig):
    """Solve for the first (p, eps, h); writes solution.csv and report.json."""
    if not cfg.h:
        raise ConfigError("solve needs h")
    cfg.apply_threads()
    p, eps, h = cfg.p[0], cfg.eps[0], cfg.h[0]
    entry = lookup(cfg.data, cfg.domain.dim, p)
    grid = Grid(cfg.domain, h)
    g = boundary_trace_from(entry.probe.value, grid)
    exc = None
    try:
        rep = perron_solve(cfg.solver(p, eps), g)
    except NotConverged as e:
        rep, exc = e.report, e
    cfg.out.mkdir(parents=True, exist_ok=True)
    rep.solution.write_csv(cfg.out / "solution.csv")
    doc = rep.to_json()
    doc.update({"p": str(p), "eps": eps, "h": h, "data": cfg.data, "n_interior": grid.n_interior,
                "n_boundary": grid.n_boundary})
    (cfg.out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
    if exc is not None:
        raise exc
    return rep


def report_schema() -> dict:
    path = Path(__file__).with_name("schemas") / "report.schema.json"
    return json.loads(path.read_text())


def schema_help() -> str:
    return (
        "config JSON: {\"domain\": {\"type\": \"rectangle|disk|annulus|polygon\", ...},\n"
        "              \"p\": [..], \"eps\": [..], \"h\": [..], \"data\": \"<catalog name>\",\n"
        "              \"out\": \"<dir>\", \"threads\": int?}\n"
        "optional: tol_fix, max_iters, sweep (jacobi|gauss_seidel), init, quadrature {radial, angular},\n"
        "          points, seed, max_seconds\n"
        "catalog: constant(c), affine(a1,..,aN,c), quadratic, harmonic, radial_power(alpha), cubic, aronsson"
    )


"""Perron iteration for u = mu_p^eps[u] in the domain, u = g on the boundary,
plus barriers and comparison checks."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (ConfigError, NoExteriorSphere, NotConverged, PreconditionFailed,
                     UnsupportedP)
from .field import Grid, GridField
from .geometry import Annulus, Disk, Domain, Rectangle
from ._kernels import KIND_GENERAL
from .operator import OperatorConfig, apply_mu, get_plan, mu_of_function
from .pmean import as_exponent

__all__ = [
    "SolverConfig",
    "SolverReport",
    "perron_solve",
    "perron_bracket",
    "Barrier",
    "make_barrier",
    "barrier_check",
    "ComparisonReport",
    "verify_comparison",
    "regularity_probe",
]

INITS = ("constant_min_g", "constant_max_g", "boundary_interpolant", "user_field")
SWEEPS = ("jacobi", "gauss_seidel")
MONOTONE_SLACK = 1e-12
TAIL_WINDOW = 20
# the tail bound is an estimate; halving it keeps two runs from opposite sides within tol
TAIL_FACTOR = 0.5
# changes below this multiple of the evaluation error are solver noise, not slow contraction
NOISE_FACTOR = 1e3
_ULP = 2.220446049250313e-16


@dataclass(frozen=True, eq=False)
class SolverConfig:
    op: OperatorConfig
    init: str = "constant_min_g"
    tol_fix: float | None = None  # default 1e-8 * max(1, sup|g|)
    max_iters: int | None = None  # default 50 * (diam / eps)^2
    sweep: str = "jacobi"
    user_field: GridField | None = None
    max_seconds: float | None = None  # wall-clock budget; exceeding it ends the run unconverged

    def __post_init__(self):
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}, got {self.init!r}")
        if self.sweep not in SWEEPS:
            raise ConfigError(f"sweep must be one of {SWEEPS}, got {self.sweep!r}")
        if self.tol_fix is not None and not self.tol_fix > 0:
            raise ConfigError("tol_fix must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.init == "user_field" and self.user_field is None:
            raise ConfigError("init='user_field' needs user_field")


@dataclass
class SolverReport:
    solution: GridField
    iterations: int
    residual_history: list
    monotone_violations: int
    converged: bool
    tol_fix: float
    fixed_point_residual: float
    contraction_estimate: float
    bound_violations: int = 0
    init: str = "constant_min_g"
    sweep: str = "jacobi"
    seconds: float = 0.0
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "tol_fix": float(self.tol_fix),
            "fixed_point_residual": float(self.fixed_point_residual),
            "contraction_estimate": float(self.contraction_estimate),
            "monotone_violations": int(self.monotone_violations),
            "bound_violations": int(self.bound_violations),
            "init": self.init,
            "sweep": self.sweep,
            "seconds": float(self.seconds),
            "residual_history": [float(r) for r in self.residual_history],
            "notes": list(self.notes),
        }


def _default_tol(g: GridField) -> float:
    return 1e-8 * max(1.0, float(np.max(np.abs(g.boundary))))


def _default_max_iters(domain: Domain, eps: float) -> int:
    return int(math.ceil(50.0 * (domain.diameter() / eps) ** 2))


def _check_setup(cfg: SolverConfig, g: GridField):
    d = g.grid.domain
    if d.inradius() < cfg.op.eps * (1 - 1e-12):
        raise ConfigError(f"eps={cfg.op.eps} exceeds the inradius {d.inradius():.6g} of the domain")
    if not np.all(np.isfinite(g.boundary)):
        raise ConfigError("boundary data must be finite")


def boundary_interpolant(g: GridField, k: int = 8) -> np.ndarray:
    """Inverse-distance blend of the k nearest boundary samples at each interior node."""
    grid = g.grid
    k = min(k, grid.n_boundary)
    dist, idx = cKDTree(grid.boundary_points).query(grid.interior_nodes, k=k)
    dist = np.asarray(dist).reshape(grid.n_interior, k)
    idx = np.asarray(idx).reshape(grid.n_interior, k)
    w = 1.0 / np.maximum(dist, 1e-300) ** 2
    w /= w.sum(axis=1, keepdims=True)
    return np.sum(w * g.boundary[idx], axis=1)


def _initial(cfg: SolverConfig, g: GridField) -> np.ndarray:
    n = g.grid.n_interior
    if cfg.init == "constant_min_g":
        return np.full(n, float(g.boundary.min()))
    if cfg.init == "constant_max_g":
        return np.full(n, float(g.boundary.max()))
    if cfg.init == "boundary_interpolant":
        v = boundary_interpolant(g)
        if v.min() < g.boundary.min() - 1e-12 or v.max() > g.boundary.max() + 1e-12:
            raise PreconditionFailed("boundary interpolant leaves [min g, max g]")
        return v
    u = cfg.user_field
    if not u.grid.same_as(g.grid) or u.interior is None:
        raise ConfigError("user_field must be a complete field on the same grid")
    return np.array(u.interior, dtype=float)


def _contraction(history) -> float:
    """Largest recent ratio of successive changes (1.0 if not yet contracting)."""
    h = np.asarray(history[-(TAIL_WINDOW + 1):], dtype=float)
    if h.size < 6:
        return 1.0
    prev, cur = h[:-1], h[1:]
    ok = prev > 0
    if not np.all(ok):
        return 0.0 if cur[-1] == 0 else 1.0
    return float(np.max(cur / prev))


def perron_solve(cfg: SolverConfig, g: GridField, raise_on_failure: bool = True,
                 callback=None) -> SolverReport:
    """Iterate u_{j+1} = mu[u_j] from the configured start until the fixed point is reached.

    Stops at step j when the change c_j = sup|u_j - u_{j-1}| is at most tol,
    and the geometric tail c_j / (1 - lambda) is at most tol/2, with lambda
    the largest recent ratio c_{i+1}/c_i.  The returned iterate is u_{j-1},
    whose fixed-point residual is exactly c_j.
    """
    _check_setup(cfg, g)
    t0 = time.perf_counter()
    op = cfg.op
    grid = g.grid
    tol = cfg.tol_fix if cfg.tol_fix is not None else _default_tol(g)
    max_iters = cfg.max_iters if cfg.max_iters is not None else _default_max_iters(grid.domain, op.eps)
    plan = get_plan(grid, op)
    p, kind, rtol = op.p_float, op.kind, op.pmean_tol

    gmin, gmax = float(g.boundary.min()), float(g.boundary.max())
    direction = {"constant_min_g": 1, "constant_max_g": -1}.get(cfg.init, 0)
    n_int = grid.n_interior
    # mean, median and midrange are closed forms; only the root solves carry pmean_tol
    unit = op.pmean_tol if kind == KIND_GENERAL else _ULP
    noise = NOISE_FACTOR * unit * max(1.0, gmax - gmin)
    data = np.concatenate([_initial(cfg, g), g.boundary])
    history: list = []
    violations = 0
    bound_viol = 0
    converged = False
    lam = 1.0
    prev = data.copy()
    notes = []
    if cfg.sweep == "gauss_seidel":
        notes.append("gauss_seidel sweep (experimental; monotonicity shown only for jacobi)")

    for j in range(1, max_iters + 1):
        if cfg.sweep == "jacobi":
            new_int = plan.jacobi(data, p, kind, rtol)
            prev[:n_int] = data[:n_int]
            data[:n_int] = new_int
        else:
            prev[:n_int] = data[:n_int]
            plan.gauss_seidel(data, p, kind, rtol)
        diff = data[:n_int] - prev[:n_int]
        change = float(np.max(np.abs(diff))) if n_int else 0.0
        history.append(change)
        if direction:
            violations += int(np.count_nonzero(direction * diff < -MONOTONE_SLACK))
        bound_viol += int(np.count_nonzero((data[:n_int] < gmin - tol) | (data[:n_int] > gmax + tol)))
        if callback is not None:
            callback(j, data[:n_int], change)
        if cfg.max_seconds is not None and time.perf_counter() - t0 > cfg.max_seconds:
            notes.append(f"time budget of {cfg.max_seconds:g} s exhausted after {j} sweeps")
            break
        if change <= tol:
            lam = _contraction(history)
            if change <= noise or (lam < 1.0 and change / (1.0 - lam) <= TAIL_FACTOR * tol):
                converged = True
                break

    residual = history[-1] if history else 0.0
    solution_int = prev[:n_int] if converged else data[:n_int]
    if not converged:
        lam = _contraction(history)
    report = SolverReport(
        solution=GridField(grid, solution_int.copy(), g.boundary),
        iterations=len(history),
        residual_history=history,
        monotone_violations=violations,
        converged=converged,
        tol_fix=tol,
        fixed_point_residual=residual,
        contraction_estimate=lam,
        bound_violations=bound_viol,
        init=cfg.init,
        sweep=cfg.sweep,
        seconds=time.perf_counter() - t0,
        notes=notes,
    )
    if not converged and raise_on_failure:
        raise NotConverged(f"no fixed point after {len(history)} iterations (last change {residual:.3e})",
                           report=report)
    return report


def perron_bracket(cfg: SolverConfig, g: GridField, raise_on_failure: bool = True):
    """Run from min g and from max g; returns (lower, upper, sup gap)."""
    from dataclasses import replace

    lower = perron_solve(replace(cfg, init="constant_min_g"), g, raise_on_failure)
    upper = perron_solve(replace(cfg, init="constant_max_g"), g, raise_on_failure)
    gap = float(np.max(np.abs(upper.solution.interior - lower.solution.interior)))
    return lower, upper, gap


# ---------------------------------------------------------------------------
# barriers


@dataclass(frozen=True)
class Barrier:
    """w(x) = R^-alpha - |x - y0|^-alpha, vanishing at x0 and positive elsewhere."""

    x0: np.ndarray
    y0: np.ndarray
    R: float
    alpha: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        dist = np.linalg.norm(x - self.y0, axis=-1)
        return self.R ** (-self.alpha) - dist ** (-self.alpha)


def make_barrier(d: Domain, x0, p, R: float) -> Barrier:
    """Power barrier at a boundary point with an exterior ball of radius R.

    alpha = (N+1)/(p-1); at p = inf the exponent degenerates to 0 and alpha = 1
    is used, since |y|^-alpha is then strictly infinity-subharmonic for any alpha > 0.
    """
    p = as_exponent(p)
    if not p.is_infinite and p.value == 1.0:
        raise UnsupportedP("barriers need p > 1")
    if not R > 0:
        raise NoExteriorSphere("R must be positive")
    x0 = np.asarray(x0, dtype=float).ravel()
    y0 = d.exterior_center(x0, R)
    N = d.dim
    alpha = 1.0 if p.is_infinite else (N + 1) / (p.value - 1.0)
    return Barrier(x0, y0, float(R), float(alpha))


@dataclass
class BarrierCheck:
    zero_at_anchor: float
    min_positive: float
    worst_excess: float  # max over nodes of mu[w] - w
    nodes_checked: int
    ok: bool


def barrier_check(b: Barrier, grid: Grid, cfg: OperatorConfig, tol: float = 1e-8,
                  nodes: np.ndarray | None = None) -> BarrierCheck:
    """Check w(x0) = 0, w > 0 on grid points other than x0, and mu[w] <= w + tol.

    mu[w] is evaluated from the analytic barrier at the quadrature nodes of
    each ball, so the check measures the scheme rather than grid interpolation.
    """
    pts = grid.data_points
    far = np.linalg.norm(pts - b.x0, axis=1) > 1e-12
    wv = b(pts[far])
    idx = np.arange(grid.n_interior) if nodes is None else np.asarray(nodes)
    rad = grid.r_eps(cfg.eps)
    worst = -math.inf
    for i in idx:
        x = grid.interior_nodes[i]
        excess = mu_of_function(cfg, b, x, rad[i]) - float(b(x))
        worst = max(worst, excess)
    zero = float(abs(b(b.x0)))
    minpos = float(wv.min()) if wv.size else math.inf
    return BarrierCheck(zero, minpos, worst, len(idx), bool(zero <= 1e-12 and minpos > 0 and worst <= tol))


def regularity_probe(d: Domain, p, eps: float, grid: Grid | None = None, h: float | None = None,
                     R: float | None = None, tol: float = 1e-8, max_nodes: int = 400,
                     samples: np.ndarray | None = None):
    """Per boundary sample: True if a barrier could be built and passed the numeric check.

    Rectangle corners use R = h.  Only the ``max_nodes`` interior nodes
    nearest to each anchor are checked, which is where a barrier can fail.
    """
    if grid is None:
        grid = Grid(d, h if h is not None else eps / 4)
    cfg = OperatorConfig(p, eps)
    pts = grid.boundary_points if samples is None else np.atleast_2d(samples)
    if R is None:
        R = _default_barrier_radius(d)
    flags = np.zeros(len(pts), dtype=bool)
    tree = cKDTree(grid.interior_nodes)
    k = min(max_nodes, grid.n_interior)
    for s, x0 in enumerate(pts):
        r = R
        if isinstance(d, Rectangle) and d.dim > 1 and d.is_corner(x0):
            r = grid.h
        try:
            b = make_barrier(d, x0, p, r)
        except (NoExteriorSphere, UnsupportedP):
            continue
        _, near = tree.query(x0, k=k)
        flags[s] = barrier_check(b, grid, cfg, tol, np.atleast_1d(near)).ok
    return flags


def _default_barrier_radius(d: Domain) -> float:
    if isinstance(d, Annulus):
        return 0.5 * d.r_inner
    if isinstance(d, Disk):
        return 0.5 * d.radius
    return 0.5 * d.inradius()


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonReport:
    violations: int
    worst_violation: float  # max of v - w over all nodes (<= 0 means ordered)
    min_gap: float
    nodes: int


def verify_comparison(v: GridField, w: GridField, cfg: OperatorConfig, tol: float = 1e-8) -> ComparisonReport:
    """Check v <= w everywhere, given v sub-, w super-harmonious and v <= w on the boundary."""
    if not v.grid.same_as(w.grid):
        raise PreconditionFailed("fields live on different grids")
    mv = apply_mu(cfg, v)
    mw = apply_mu(cfg, w)
    sub_gap = float(np.max(v.interior - mv.interior))
    super_gap = float(np.max(mw.interior - w.interior))
    if sub_gap > tol:
        raise PreconditionFailed(f"v is not subharmonious (v - mu[v] up to {sub_gap:.3e})")
    if super_gap > tol:
        raise PreconditionFailed(f"w is not superharmonious (mu[w] - w up to {super_gap:.3e})")
    bgap = float(np.max(v.boundary - w.boundary)) if v.boundary.size else -math.inf
    if bgap > tol:
        raise PreconditionFailed(f"v exceeds w on the boundary by {bgap:.3e}")
    diff = v.data - w.data
    return ComparisonReport(int(np.count_nonzero(diff > tol)), float(diff.max()), float(-diff.max()), diff.size)

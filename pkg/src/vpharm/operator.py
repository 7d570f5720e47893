"""Ball-averaging operator mu_p^eps, the baseline mean eta_p^eps, the
game-theoretic p-Laplacian of smooth probes and the residual map A_eps."""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.optimize import minimize, minimize_scalar

from . import _kernels as K
from .errors import (ConfigError, NonConvergence, UnsupportedP, VanishingGradient,
                     ZeroRadius)
from .field import Grid, GridField
from .geometry import BallQuadrature, Domain, build_ball_quadrature
from .pmean import Exponent, as_exponent

__all__ = [
    "OperatorConfig",
    "SmoothProbe",
    "OperatorPlan",
    "apply_mu",
    "apply_eta",
    "gtp_laplacian",
    "amvp_target",
    "amvp_ratio",
    "mu_of_function",
    "eta_of_function",
    "residual_A",
    "residual_field",
    "ball_pmean",
    "get_plan",
]

DEFAULT_PMEAN_TOL = 1e-13
GRADIENT_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class OperatorConfig:
    """Parameters of mu_p^eps.  ``quadrature=None`` picks the default rule
    for the dimension of whatever grid or point it is applied to."""

    p: Exponent
    eps: float
    quadrature: BallQuadrature | None = None
    pmean_tol: float = DEFAULT_PMEAN_TOL

    def __post_init__(self):
        object.__setattr__(self, "p", as_exponent(self.p))
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ConfigError(f"eps must be positive and finite, got {self.eps!r}")
        if not self.pmean_tol > 0:
            raise ConfigError("pmean_tol must be positive")

    def rule(self, N: int) -> BallQuadrature:
        if self.quadrature is not None:
            if self.quadrature.dim != N:
                raise ConfigError(f"quadrature is {self.quadrature.dim}-D, domain is {N}-D")
            return self.quadrature
        return _default_rule(N)

    @property
    def kind(self) -> int:
        return K.exponent_kind(self.p.value)

    @property
    def p_float(self) -> float:
        return self.p.value

    def amvp_coefficient(self, N: int) -> float:
        """p / (2(N+p)), with its limit 1/2 at p = inf."""
        if self.p.is_infinite:
            return 0.5
        return self.p.value / (2.0 * (N + self.p.value))


_RULES: dict = {}


def _default_rule(N):
    if N not in _RULES:
        _RULES[N] = build_ball_quadrature(N)
    return _RULES[N]


@dataclass(frozen=True)
class SmoothProbe:
    """Analytic C^2 test function with its gradient and Hessian.

    All three callables take an array of points of shape (..., N).
    """

    value: Callable
    gradient: Callable
    hessian: Callable
    name: str = "probe"

    def __call__(self, x):
        return self.value(x)

    def consistency_error(self, points, step: float = 1e-5) -> float:
        """Worst relative mismatch between analytic and central-difference derivatives."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        worst = 0.0
        N = pts.shape[1]
        for x in pts:
            g = np.asarray(self.gradient(x), dtype=float)
            H = np.asarray(self.hessian(x), dtype=float)
            gfd = np.empty(N)
            Hfd = np.empty((N, N))
            for k in range(N):
                e = np.zeros(N)
                e[k] = step
                gfd[k] = (float(self.value(x + e)) - float(self.value(x - e))) / (2 * step)
                Hfd[k] = (np.asarray(self.gradient(x + e)) - np.asarray(self.gradient(x - e))) / (2 * step)
            scale_g = max(1.0, np.abs(g).max())
            scale_h = max(1.0, np.abs(H).max())
            worst = max(worst, np.abs(g - gfd).max() / scale_g, np.abs(H - Hfd).max() / scale_h)
        return float(worst)


# ---------------------------------------------------------------------------
# plans: everything about a sweep that does not depend on the field values


class OperatorPlan:
    """Per (grid, eps, quadrature) data for compiled sweeps."""

    def __init__(self, grid: Grid, cfg: OperatorConfig):
        quad = cfg.rule(grid.dim)
        self.grid = grid
        self.quad = quad
        self.eps = float(cfg.eps)
        self.rad = np.ascontiguousarray(grid.r_eps(cfg.eps))
        self.nodes = np.ascontiguousarray(grid.interior_nodes)
        self.off = np.ascontiguousarray(quad.offsets)
        self.loop_w = np.ascontiguousarray(quad.loop_weights)
        self.M = int(quad.loop_size)
        self.lo = np.ascontiguousarray(grid.lo)
        self.shape = np.array(grid.shape, dtype=np.int64)
        self.strides = np.ascontiguousarray(grid.strides)
        self.lat = np.ascontiguousarray(grid.lat_index)
        args = (self.nodes, self.rad, self.off, self.lo, grid.h, self.shape, self.strides, self.lat)
        counts = K.count_cut_queries(*args)
        ptr = np.zeros(len(counts) + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        self.cut_ptr = ptr
        if ptr[-1]:
            pts = K.collect_cut_queries(*args, ptr)
            idx, w = grid.cut_weights(pts)
        else:
            idx = np.zeros((0, grid.dim + 1), dtype=np.int64)
            w = np.zeros((0, grid.dim + 1))
        self.cut_idx = np.ascontiguousarray(idx, dtype=np.int64)
        self.cut_w = np.ascontiguousarray(w)
        self._build_stencils(grid, quad)

    def _build_stencils(self, grid, quad):
        # nodes whose whole eps-ball sits in full cells share one translated stencil
        N = grid.dim
        ij = np.rint((self.nodes - grid.lo) / grid.h).astype(np.int64)
        self.node_lat = np.ascontiguousarray(ij @ grid.strides)
        rel = self.eps * quad.offsets / grid.h
        cell = np.floor(rel).astype(np.int64)
        frac = rel - cell
        C = 1 << N
        pat_off = np.zeros((len(quad), C), dtype=np.int64)
        pat_w = np.ones((len(quad), C))
        for corner in range(C):
            for k in range(N):
                bit = (corner >> k) & 1
                pat_off[:, corner] += (cell[:, k] + bit) * grid.strides[k]
                pat_w[:, corner] *= frac[:, k] if bit else 1.0 - frac[:, k]
        shape = np.array(grid.shape)
        deep = self.rad == self.eps
        deep &= np.all(ij + cell.min(axis=0) >= 0, axis=1)
        deep &= np.all(ij + cell.max(axis=0) + 1 <= shape - 1, axis=1)
        uniq, inv = np.unique(pat_off.ravel(), return_inverse=True)
        cand = np.nonzero(deep)[0]
        for chunk in np.array_split(cand, max(1, cand.size * uniq.size // 4_000_000)):
            if chunk.size:
                deep[chunk] = np.all(grid.lat_index[self.node_lat[chunk, None] + uniq[None, :]] >= 0, axis=1)
        self.deep = deep
        self.pat_off = np.ascontiguousarray(pat_off)
        self.pat_w = np.ascontiguousarray(pat_w)
        self.st_off = np.ascontiguousarray(uniq)
        self.st_w = np.bincount(inv.ravel(), weights=(pat_w * quad.weights[:, None]).ravel(), minlength=uniq.size)

    @property
    def n_cut(self) -> int:
        return int(self.cut_ptr[-1])

    def _common(self):
        return (self.nodes, self.rad, self.off, self.loop_w, self.M, self.lo, self.grid.h,
                self.shape, self.strides, self.lat, self.cut_ptr, self.cut_idx, self.cut_w,
                self.node_lat, self.deep, self.pat_off, self.pat_w, self.st_off, self.st_w)

    @cached_property
    def mean_matrix(self):
        """The p = 2 operator as a sparse (interior x data) matrix."""
        grid, quad = self.grid, self.quad
        n = grid.n_interior
        deep = np.nonzero(self.deep)[0]
        rows = [np.repeat(deep, self.st_off.size)]
        cols = [grid.lat_index[(self.node_lat[deep, None] + self.st_off[None, :]).ravel()]]
        vals = [np.tile(self.st_w, deep.size)]
        rest = np.nonzero(~self.deep)[0]
        Q = len(quad)
        for chunk in np.array_split(rest, max(1, rest.size * Q // 500_000)):
            if not chunk.size:
                continue
            pts = (self.nodes[chunk, None, :] + self.rad[chunk, None, None] * quad.offsets[None]).reshape(-1, grid.dim)
            idx, w = grid.interpolation_weights(pts)
            w = w * np.tile(quad.weights, chunk.size)[:, None]
            rows.append(np.repeat(chunk, Q * idx.shape[1]))
            cols.append(idx.ravel())
            vals.append(w.ravel())
        A = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, grid.n_interior + grid.n_boundary)).tocsr()
        A.eliminate_zeros()
        return A

    def jacobi(self, data, p: float, kind: int, rtol: float) -> np.ndarray:
        if kind == K.KIND_MEAN:
            return self.mean_matrix @ data
        out = np.empty(self.grid.n_interior)
        status = np.zeros(self.grid.n_interior, dtype=np.int8)
        K.sweep_jacobi(data, out, status, *self._common(), p, kind, rtol)
        self._check(status)
        return out

    def gauss_seidel(self, data, p: float, kind: int, rtol: float) -> None:
        status = np.zeros(self.grid.n_interior, dtype=np.int8)
        K.sweep_gauss_seidel(data, status, *self._common(), p, kind, rtol)
        self._check(status)

    def samples(self, data) -> np.ndarray:
        return K.gather_all(data, self.nodes, self.rad, self.off, self.lo, self.grid.h, self.shape,
                            self.strides, self.lat, self.cut_ptr, self.cut_idx, self.cut_w,
                            self.node_lat, self.deep, self.pat_off, self.pat_w)

    def _check(self, status):
        bad = np.nonzero(status != K.STATUS_OK)[0]
        if bad.size:
            raise NonConvergence("p-mean root finder did not converge", location=tuple(self.nodes[bad[0]]))


_PLANS: "weakref.WeakKeyDictionary[Grid, dict]" = weakref.WeakKeyDictionary()


def get_plan(grid: Grid, cfg: OperatorConfig) -> OperatorPlan:
    quad = cfg.rule(grid.dim)
    cache = _PLANS.setdefault(grid, {})
    key = (float(cfg.eps), id(quad))
    plan = cache.get(key)
    if plan is None or plan.quad is not quad:
        K.apply_thread_cap()
        plan = OperatorPlan(grid, cfg)
        cache[key] = plan
    return plan


def apply_mu(cfg: OperatorConfig, f: GridField) -> GridField:
    """mu_p^eps applied to a complete field; identity on boundary samples."""
    plan = get_plan(f.grid, cfg)
    out = plan.jacobi(f.data, cfg.p_float, cfg.kind, cfg.pmean_tol)
    return f.with_interior(out)


def apply_eta(cfg: OperatorConfig, f: GridField) -> GridField:
    """Baseline (N+2)/(N+p) * mean + (p-2)/(2(N+p)) * (max + min) of the ball samples."""
    if cfg.p.is_infinite:
        raise UnsupportedP("the baseline mean needs a finite p")
    plan = get_plan(f.grid, cfg)
    S = plan.samples(f.data)
    out = _eta_rows(S, plan.quad.weights, f.grid.dim, cfg.p.value)
    return f.with_interior(out)


def _eta_rows(S, weights, N, p):
    mean = S @ weights
    spread = S.max(axis=1) + S.min(axis=1)
    return (N + 2) / (N + p) * mean + (p - 2) / (2 * (N + p)) * spread


# ---------------------------------------------------------------------------
# analytic probes


def ball_pmean(values, quad: BallQuadrature, p, tol: float = DEFAULT_PMEAN_TOL, warm=math.nan) -> float:
    """Loop-integrated p-mean of values sampled at the nodes of ``quad``."""
    p = as_exponent(p)
    vals = np.ascontiguousarray(values, dtype=float)
    nu, status = K.loop_pmean(vals, np.ascontiguousarray(quad.loop_weights), int(quad.loop_size),
                              p.value, K.exponent_kind(p.value), tol, float(warm))
    if status != K.STATUS_OK:
        raise NonConvergence("p-mean root finder did not converge")
    return float(nu)


def _ball_extremes(phi, x, r, quad: BallQuadrature, vals):
    """Sup and inf of phi over the closed ball B_r(x), refined inside and on the sphere."""
    x = np.asarray(x, dtype=float)
    N = x.size
    best_hi, best_lo = _interior_extremes(phi, x, r, quad, vals)

    def on_sphere(u):
        return float(phi(x + r * u))

    if N == 1:
        ends = [on_sphere(np.array([1.0])), on_sphere(np.array([-1.0]))]
        return max(best_hi, *ends), min(best_lo, *ends)
    if N == 2:
        M = max(quad.loop_size, 64) * 4
        th = 2 * np.pi * np.arange(M) / M
        ring = np.array(phi(x + r * np.stack([np.cos(th), np.sin(th)], axis=-1)), dtype=float)
        dth = 2 * np.pi / M
        for sign in (1.0, -1.0):
            k = int(np.argmax(sign * ring))
            res = minimize_scalar(lambda t: -sign * on_sphere(np.array([math.cos(t), math.sin(t)])),
                                  bounds=(th[k] - dth, th[k] + dth), method="bounded",
                                  options={"xatol": 1e-12})
            cand = -res.fun * sign
            if sign > 0:
                best_hi = max(best_hi, cand, ring[k])
            else:
                best_lo = min(best_lo, cand, ring[k])
        return best_hi, best_lo
    # N == 3: optimise over spherical angles starting from the best direction
    M = 48
    t = np.linspace(0, np.pi, M // 2)
    ph = np.linspace(0, 2 * np.pi, M, endpoint=False)
    T, P = np.meshgrid(t, ph, indexing="ij")
    dirs = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    sv = np.array(phi(x + r * dirs), dtype=float)
    angles = np.stack([T.ravel(), P.ravel()], axis=-1)
    for sign in (1.0, -1.0):
        k = int(np.argmax(sign * sv))

        def obj(a):
            u = np.array([math.sin(a[0]) * math.cos(a[1]), math.sin(a[0]) * math.sin(a[1]), math.cos(a[0])])
            return -sign * on_sphere(u)

        res = minimize(obj, angles[k], method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-15})
        cand = -res.fun * sign
        if sign > 0:
            best_hi = max(best_hi, cand, sv[k])
        else:
            best_lo = min(best_lo, cand, sv[k])
    return best_hi, best_lo


def _interior_extremes(phi, x, r, quad: BallQuadrature, vals):
    hi, lo = float(vals.max()), float(vals.min())

    def at(z):
        z = np.asarray(z, dtype=float)
        return float(phi(x + r * z / max(1.0, float(np.linalg.norm(z)))))

    for sign in (1.0, -1.0):
        k = int(np.argmax(sign * vals))
        res = minimize(lambda z: -sign * at(z), quad.offsets[k], method="Nelder-Mead",
                       options={"xatol": 1e-11, "fatol": 1e-15, "maxiter": 4000})
        cand = -sign * res.fun
        if sign > 0:
            hi = max(hi, cand)
        else:
            lo = min(lo, cand)
    return hi, lo


def mu_of_function(cfg: OperatorConfig, phi, x, r: float | None = None) -> float:
    """mu_p^r of an analytic function at x, sampled directly at quadrature nodes.

    At p = inf the midrange uses the sphere-refined sup and inf instead of
    the node extremes, whose angular bias would not vanish relative to r^2.
    """
    x = np.asarray(x, dtype=float).ravel()
    quad = cfg.rule(x.size)
    r = cfg.eps if r is None else float(r)
    if r == 0:
        return float(phi(x[None])[0]) if _vectorised(phi, x) else float(phi(x))
    vals = np.asarray(phi(x + r * quad.offsets), dtype=float)
    if cfg.p.is_infinite:
        hi, lo = _ball_extremes(phi, x, r, quad, vals)
        return 0.5 * (hi + lo)
    return ball_pmean(vals, quad, cfg.p, cfg.pmean_tol, warm=float(np.dot(quad.weights, vals)))


def eta_of_function(cfg: OperatorConfig, phi, x, r: float | None = None) -> float:
    if cfg.p.is_infinite:
        raise UnsupportedP("the baseline mean needs a finite p")
    x = np.asarray(x, dtype=float).ravel()
    quad = cfg.rule(x.size)
    r = cfg.eps if r is None else float(r)
    vals = np.asarray(phi(x + r * quad.offsets), dtype=float)
    hi, lo = _ball_extremes(phi, x, r, quad, vals)
    N, p = x.size, cfg.p.value
    return (N + 2) / (N + p) * float(np.dot(quad.weights, vals)) + (p - 2) / (2 * (N + p)) * (hi + lo)


def _vectorised(phi, x):
    try:
        return np.ndim(phi(x[None])) == 1
    except Exception:
        return False


def gtp_laplacian(probe: SmoothProbe, x, p) -> float:
    """Delta_p^G probe at x from its analytic gradient and Hessian."""
    p = as_exponent(p)
    x = np.asarray(x, dtype=float)
    g = np.asarray(probe.gradient(x), dtype=float).ravel()
    H = np.asarray(probe.hessian(x), dtype=float).reshape(g.size, g.size)
    gg = float(g @ g)
    if math.sqrt(gg) <= GRADIENT_FLOOR:
        raise VanishingGradient(f"gradient vanishes at {x}")
    inf_lap = float(g @ H @ g) / gg
    if p.is_infinite:
        return inf_lap
    pv = p.value
    return float(np.trace(H)) / pv + (pv - 2.0) / pv * inf_lap


def amvp_target(cfg: OperatorConfig, probe: SmoothProbe, x) -> float:
    """Limit of the AMVP ratio: p/(2(N+p)) * Delta_p^G probe(x)."""
    x = np.asarray(x, dtype=float)
    return cfg.amvp_coefficient(x.size) * gtp_laplacian(probe, x, cfg.p)


def amvp_ratio(cfg: OperatorConfig, probe: SmoothProbe, x, domain: Domain | None = None) -> float:
    """(mu[probe](x) - probe(x)) / r^2 with r = r_eps(x) (or eps without a domain)."""
    x = np.asarray(x, dtype=float).ravel()
    g = np.asarray(probe.gradient(x), dtype=float)
    if np.linalg.norm(g) <= GRADIENT_FLOOR:
        raise VanishingGradient(f"gradient vanishes at {x}")
    r = cfg.eps if domain is None else float(domain.r_eps(x, cfg.eps))
    if r == 0:
        raise ZeroRadius(f"r_eps vanishes at {x}")
    phi0 = float(probe.value(x[None])[0])
    return (mu_of_function(cfg, probe.value, x, r) - phi0) / (r * r)


# ---------------------------------------------------------------------------
# residual map


def _prefactor(cfg: OperatorConfig, N: int) -> float:
    # 2(N+p) eps / p, with the p -> inf limit 2 eps
    return cfg.eps / cfg.amvp_coefficient(N)


def mu_at_point(cfg: OperatorConfig, f: GridField, x) -> float:
    """mu_p^eps[f] at an arbitrary point of the closed domain."""
    grid = f.grid
    x = np.asarray(x, dtype=float).ravel()
    r = float(grid.domain.r_eps(x, cfg.eps))
    if r == 0:
        return float(f.interpolate(x))
    quad = cfg.rule(grid.dim)
    pts = x + r * quad.offsets
    idx, w = grid.interpolation_weights(pts)
    vals = np.sum(w * f.data[idx], axis=1)
    return ball_pmean(vals, quad, cfg.p, cfg.pmean_tol)


def residual_A(cfg: OperatorConfig, s: float, x, f: GridField, g_at: float | None = None,
               on_boundary: bool | None = None) -> float:
    """A_eps(s, x, f): scaled defect of s against mu[f](x), or eps*(s - g) on the boundary."""
    x = np.asarray(x, dtype=float).ravel()
    d = f.grid.domain
    sd = float(d.signed_distance(x))
    if on_boundary is None:
        on_boundary = abs(sd) <= 1e-12 * max(1.0, d.diameter())
    if on_boundary:
        if g_at is None:
            raise ValueError("boundary residual needs g_at")
        return cfg.eps * (s - g_at)
    r = float(d.r_eps(x, cfg.eps))
    if r == 0:
        raise ZeroRadius(f"r_eps vanishes at interior point {x}")
    return _prefactor(cfg, x.size) * (s - mu_at_point(cfg, f, x)) / (r * r)


def residual_field(cfg: OperatorConfig, u: GridField, g: GridField | None = None):
    """A_eps evaluated at every node with s = u: (interior array, boundary array)."""
    plan = get_plan(u.grid, cfg)
    mu = plan.jacobi(u.data, cfg.p_float, cfg.kind, cfg.pmean_tol)
    interior = _prefactor(cfg, u.grid.dim) * (u.interior - mu) / plan.rad ** 2
    gb = u.boundary if g is None else g.boundary
    return interior, cfg.eps * (u.boundary - gb)

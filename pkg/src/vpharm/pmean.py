"""Variational p-means of weighted samples.

The p-mean of a sample ``v`` with weights ``w`` (summing to one) is the
constant ``nu`` closest to ``v`` in the weighted L^p sense.  For finite p it is
the unique root of the strictly decreasing function

    F(nu) = sum_i w_i * |v_i - nu|^(p-2) * (v_i - nu),

for p = 2 it is the weighted mean, for p = 1 the weighted median and for
p = infinity the midrange of the support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidExponent, InvalidSample, NonConvergence

__all__ = [
    "Exponent",
    "WeightedSample",
    "PMeanResult",
    "as_exponent",
    "signed_power",
    "compute_pmean",
    "pmean_oracle",
    "weighted_median",
    "default_tolerance",
]

WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Exponent:
    """Exponent p in [1, inf].  Infinity is a separate tag, never a big float."""

    kind: str
    value: float = math.inf

    def __post_init__(self):
        if self.kind == "infinity":
            object.__setattr__(self, "value", math.inf)
            return
        if self.kind != "finite":
            raise InvalidExponent(f"unknown exponent kind {self.kind!r}")
        p = float(self.value)
        if math.isnan(p) or math.isinf(p) or p < 1.0:
            raise InvalidExponent(f"finite exponent must satisfy 1 <= p < inf, got {self.value!r}")
        object.__setattr__(self, "value", p)

    @classmethod
    def finite(cls, p: float) -> "Exponent":
        return cls("finite", p)

    @classmethod
    def infinity(cls) -> "Exponent":
        return cls("infinity")

    @classmethod
    def parse(cls, text) -> "Exponent":
        if isinstance(text, Exponent):
            return text
        if isinstance(text, str):
            t = text.strip().lower()
            if t in ("inf", "infinity", "+inf", "oo"):
                return cls.infinity()
            try:
                text = float(t)
            except ValueError as exc:
                raise InvalidExponent(f"cannot parse exponent {text!r}") from exc
        p = float(text)
        if math.isinf(p) and p > 0:
            return cls.infinity()
        return cls.finite(p)

    @property
    def is_infinite(self) -> bool:
        return self.kind == "infinity"

    def __str__(self):
        return "inf" if self.is_infinite else f"{self.value:g}"


def as_exponent(p) -> Exponent:
    return Exponent.parse(p)


@dataclass(frozen=True)
class WeightedSample:
    """Finite sample with non-negative weights normalized to unit mass.

    Weights are normalized on construction; the original total is kept in
    ``weight_sum``.  Pass ``normalize=False`` to insist that the caller already
    normalized them.
    """

    values: np.ndarray
    weights: np.ndarray
    weight_sum: float = field(default=1.0)

    def __init__(self, values, weights=None, normalize: bool = True):
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            raise InvalidSample("sample is empty")
        if not np.all(np.isfinite(v)):
            raise InvalidSample("sample values must be finite")
        if weights is None:
            w = np.full(v.size, 1.0 / v.size)
        else:
            w = np.asarray(weights, dtype=float).ravel()
        if w.shape != v.shape:
            raise InvalidSample(f"{w.size} weights for {v.size} values")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidSample("weights must be finite and non-negative")
        total = float(w.sum())
        if total <= 0:
            raise InvalidSample("weights sum to zero")
        if normalize:
            w = w / total
        elif abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidSample(f"weights sum to {total!r}, expected 1")
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "weight_sum", total)

    def __len__(self):
        return self.values.size

    def support(self) -> np.ndarray:
        return self.values[self.weights > 0]

    @property
    def spread(self) -> float:
        s = self.support()
        return float(s.max() - s.min())


@dataclass(frozen=True)
class PMeanResult:
    nu: float
    iterations: int
    residual: float  # half-width of the final bracket around the root
    f_value: float = 0.0  # F(nu); not in value units, kept for diagnostics


def signed_power(t, p):
    """Return ``sgn(t) * |t|**(p-1)``; for p = 1 this is the sign function."""
    if p < 1:
        raise InvalidExponent(f"signed_power needs p >= 1, got {p}")
    t_arr = np.asarray(t, dtype=float)
    if p == 1:
        out = np.sign(t_arr)
    else:
        out = np.sign(t_arr) * np.abs(t_arr) ** (p - 1.0)
    return float(out) if out.ndim == 0 else out


def default_tolerance(sample: WeightedSample) -> float:
    return 1e-12 * max(1.0, sample.spread)


def _root_function(values, weights, p):
    def F(nu):
        return float(np.dot(weights, signed_power(values - nu, p)))

    return F


def weighted_median(sample: WeightedSample) -> float:
    """Weighted median; when the minimizers form an interval, its midpoint."""
    _check(sample)
    keep = sample.weights > 0
    v = sample.values[keep]
    w = sample.weights[keep]
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    # merge repeated values so the cumulative weight is a step function of v
    uniq, inv = np.unique(v, return_inverse=True)
    wu = np.bincount(inv, weights=w)
    cum = np.cumsum(wu) / wu.sum()
    k = int(np.searchsorted(cum, 0.5 - WEIGHT_SUM_TOL))
    k = min(k, uniq.size - 1)
    if abs(cum[k] - 0.5) <= WEIGHT_SUM_TOL and k + 1 < uniq.size:
        return 0.5 * (uniq[k] + uniq[k + 1])
    return float(uniq[k])


def compute_pmean(sample: WeightedSample, p, tol: float | None = None,
                  max_iter: int = 400) -> PMeanResult:
    """Variational p-mean of ``sample``.

    Finite p other than 1 and 2 is handled by bisection on [min v, max v]; for
    p >= 2 the bracketed root is polished with Newton steps, which are safe
    there because F' stays bounded.
    """
    _check(sample)
    p = as_exponent(p)
    if tol is None:
        tol = default_tolerance(sample)
    if not tol > 0:
        raise ValueError("tol must be positive")
    support = sample.support()
    lo, hi = float(support.min()), float(support.max())

    if p.is_infinite:
        return PMeanResult(0.5 * (lo + hi), 0, 0.0)
    pv = p.value
    F = _root_function(sample.values, sample.weights, pv)
    if pv == 2.0:
        nu = float(np.dot(sample.weights, sample.values))
        return PMeanResult(min(max(nu, lo), hi), 0, 0.0, F(nu))
    if pv == 1.0:
        nu = weighted_median(sample)
        return PMeanResult(nu, 0, 0.0, F(nu))
    if hi - lo == 0.0:
        return PMeanResult(lo, 0, 0.0, 0.0)

    it = 0
    while hi - lo > 2.0 * tol:
        if it >= max_iter:
            raise NonConvergence(f"bisection did not reach tol={tol:g} in {max_iter} steps")
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:  # bracket down to adjacent floats
            break
        fm = F(mid)
        if fm > 0:
            lo = mid
        elif fm < 0:
            hi = mid
        else:
            lo = hi = mid
            break
        it += 1
    nu = 0.5 * (lo + hi)

    if pv >= 2.0 and hi > lo:
        w, v = sample.weights, sample.values
        for _ in range(3):
            t = v - nu
            fn = float(np.dot(w, signed_power(t, pv)))
            dfn = -(pv - 1.0) * float(np.dot(w, np.abs(t) ** (pv - 2.0)))
            if fn == 0.0 or dfn == 0.0:
                break
            cand = nu - fn / dfn
            if not lo <= cand <= hi:
                break
            nu = cand
    return PMeanResult(nu, it, 0.5 * (hi - lo), F(nu))


def pmean_oracle(sample: WeightedSample, p, n_scan: int = 100_001,
                 n_refine: int = 200) -> float:
    """Brute-force minimizer of nu -> ||v - nu||_p, for testing only.

    Scans [min v, max v] densely, then refines by ternary search.  For p = 1
    the set of minimizers may be an interval; both of its ends are located and
    the midpoint returned, matching the tie rule of :func:`weighted_median`.
    """
    _check(sample)
    p = as_exponent(p)
    s = sample.support()
    lo, hi = float(s.min()), float(s.max())
    if hi == lo:
        return lo
    keep = sample.weights > 0
    w = sample.weights[keep]
    x = (sample.values[keep] - lo) / (hi - lo)  # work on [0, 1]

    if p.is_infinite:
        def J(nu):
            return np.max(np.abs(x[:, None] - nu), axis=0)
    else:
        pv = p.value

        def J(nu):
            return w @ np.abs(x[:, None] - nu) ** pv

    grid = np.linspace(0.0, 1.0, n_scan)
    vals = np.concatenate([J(chunk) for chunk in np.array_split(grid, max(1, x.size * n_scan // 2_000_000))])
    k = int(np.argmin(vals))
    step = grid[1] - grid[0]

    def scalar(nu):
        return float(J(np.array([nu]))[0])

    if p.is_infinite:
        def worse(m1, m2):  # J(m1) - J(m2); the max is computed exactly
            return scalar(m1) - scalar(m2)
    else:
        def worse(m1, m2):
            return _objective_change(x, w, pv, m1, m2)

    def ternary(a, b):
        for _ in range(n_refine):
            m1 = a + (b - a) / 3.0
            m2 = b - (b - a) / 3.0
            if worse(m1, m2) <= 0:
                b = m2
            else:
                a = m1
        return 0.5 * (a + b)

    nu = ternary(max(grid[k] - step, 0.0), min(grid[k] + step, 1.0))
    if not p.is_infinite and p.value == 1.0:
        # the minimizers may form an interval; find both ends around nu.
        # On a flat stretch the objective changes only by summation roundoff.
        def flat_at(m):
            return worse(m, nu) <= 1e-13 * abs(m - nu)

        def edge(inside, outside):
            for _ in range(n_refine):
                m = 0.5 * (inside + outside)
                if flat_at(m):
                    inside = m
                else:
                    outside = m
            return inside

        flat = np.nonzero(vals <= vals[k] + 1e-12 * max(1.0, vals[k]))[0]
        left_out = grid[flat[0]] - step if flat.size else nu - step
        right_out = grid[flat[-1]] + step if flat.size else nu + step
        left = edge(nu, max(min(left_out, nu), -step))
        right = edge(nu, min(max(right_out, nu), 1.0 + step))
        nu = 0.5 * (left + right)
    return lo + nu * (hi - lo)


def _objective_change(x, w, p, m1, m2) -> float:
    """J(m1) - J(m2) for J(nu) = sum w |x - nu|^p, without cancellation between J values.

    Terms outside [m1, m2] are differenced through expm1/log1p of the exact step.
    """
    if m1 > m2:
        return -_objective_change(x, w, p, m2, m1)
    d = m2 - m1
    if d == 0:
        return 0.0
    left = x <= m1
    right = x >= m2
    mid = ~(left | right)
    a = m1 - x[left]  # distance to m1; m2 is a + d away
    b = x[right] - m2  # distance to m2; m1 is b + d away
    if p == 1.0:
        lt = np.full(a.shape, -d)
        rt = np.full(b.shape, d)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = -np.where(a > 0, a ** p * np.expm1(p * np.log1p(d / a)), d ** p)
            rt = np.where(b > 0, b ** p * np.expm1(p * np.log1p(d / b)), d ** p)
    xm = x[mid]
    mt = np.abs(xm - m1) ** p - np.abs(xm - m2) ** p
    return float(w[left] @ lt + w[right] @ rt + w[mid] @ mt)


def _check(sample):
    if not isinstance(sample, WeightedSample):
        raise InvalidSample(f"expected WeightedSample, got {type(sample).__name__}")

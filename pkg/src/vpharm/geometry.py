"""Bounded domains with exact boundary distance, and unit-ball quadratures."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

from .errors import ConfigError, NoExteriorSphere, OutsideDomain, UnsupportedDimension

__all__ = [
    "Domain",
    "Rectangle",
    "Disk",
    "Annulus",
    "Polygon",
    "BallQuadrature",
    "build_ball_quadrature",
    "dist_to_boundary",
    "r_eps",
    "domain_from_dict",
]

OUTSIDE_SLACK = 1e-12


def _points(x, dim):
    a = np.asarray(x, dtype=float)
    if a.shape[-1:] != (dim,):
        if dim == 1 and (a.ndim == 0 or a.shape[-1] != 1):
            a = a[..., None]
        else:
            raise OutsideDomain(f"expected points with trailing dimension {dim}, got shape {a.shape}")
    return a


class Domain:
    """Closed bounded domain in R^N (N = 1, 2, 3).

    Subclasses implement ``signed_distance`` (positive inside, zero on the
    boundary, negative outside) exactly; everything else derives from it.
    """

    dim: int

    def signed_distance(self, x):
        raise NotImplementedError

    def bounding_box(self):
        raise NotImplementedError

    def outward_normal(self, x0):
        raise NotImplementedError

    def project(self, x):
        """Nearest point of the boundary to each row of ``x``."""
        raise NotImplementedError

    def inradius(self) -> float:
        """Radius of the largest ball contained in the domain."""
        raise NotImplementedError

    def vertices(self) -> np.ndarray:
        """Corner points that should always be sampled on the boundary."""
        return np.empty((0, self.dim))

    def to_dict(self) -> dict:
        raise NotImplementedError

    def diameter(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(np.asarray(hi) - np.asarray(lo)))

    def contains(self, x, slack: float = OUTSIDE_SLACK):
        return self.signed_distance(x) >= -slack

    def dist_to_boundary(self, x):
        x = _points(x, self.dim)
        sd = self.signed_distance(x)
        if np.any(sd < -OUTSIDE_SLACK):
            bad = np.asarray(x)[np.asarray(sd) < -OUTSIDE_SLACK]
            raise OutsideDomain(f"point(s) outside the domain, e.g. {bad.reshape(-1, self.dim)[0]}")
        return np.maximum(sd, 0.0)

    def r_eps(self, x, eps: float):
        if not eps > 0:
            raise ValueError("eps must be positive")
        return np.minimum(eps, self.dist_to_boundary(x))

    def exterior_ball_ok(self, x0, y0, R) -> bool:
        """True if the closed ball B_R(y0) meets the closed domain only near x0."""
        y0 = np.asarray(y0, dtype=float)
        sd = float(self.signed_distance(y0))
        return sd < 0 and -sd >= R * (1 - 1e-9)

    def exterior_center(self, x0, R: float) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float)
        if abs(float(self.signed_distance(x0))) > 1e-9 * max(1.0, self.diameter()):
            raise NoExteriorSphere(f"{x0} is not a boundary point")
        y0 = x0 + R * self.outward_normal(x0)
        if not self.exterior_ball_ok(x0, y0, R):
            raise NoExteriorSphere(f"no exterior ball of radius {R} at {x0}")
        return y0


def dist_to_boundary(d: Domain, x):
    return d.dist_to_boundary(x)


def r_eps(d: Domain, x, eps: float):
    return d.r_eps(x, eps)


@dataclass(frozen=True, eq=False)
class Rectangle(Domain):
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or not 1 <= len(lo) <= 3:
            raise UnsupportedDimension(f"rectangle corners {lo}, {hi}")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ConfigError("rectangle must have positive extent on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return len(self.lo)

    def signed_distance(self, x):
        x = _points(x, self.dim)
        lo, hi = np.array(self.lo), np.array(self.hi)
        d_in = np.minimum(x - lo, hi - x)  # per axis, positive inside the slab
        inside = np.min(d_in, axis=-1)
        outside = np.linalg.norm(np.maximum(-d_in, 0.0), axis=-1)
        return np.where(inside >= 0, inside, -outside)

    def bounding_box(self):
        return np.array(self.lo), np.array(self.hi)

    def outward_normal(self, x0):
        x0 = np.asarray(x0, dtype=float)
        lo, hi = np.array(self.lo), np.array(self.hi)
        tol = 1e-9 * max(1.0, self.diameter())
        n = np.where(np.abs(x0 - lo) <= tol, -1.0, 0.0) + np.where(np.abs(hi - x0) <= tol, 1.0, 0.0)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise NoExteriorSphere(f"{x0} is not on the rectangle boundary")
        return n / norm

    def project(self, x):
        x = np.array(_points(x, self.dim), dtype=float)
        lo, hi = np.array(self.lo), np.array(self.hi)
        x = np.clip(x, lo, hi)
        d = np.concatenate([x - lo, hi - x], axis=-1)
        k = np.argmin(d, axis=-1)
        axis = k % self.dim
        target = np.where(k < self.dim, lo[axis], hi[axis])
        np.put_along_axis(x, axis[..., None], target[..., None], axis=-1)
        return x

    def is_corner(self, x0) -> bool:
        x0 = np.asarray(x0, dtype=float)
        tol = 1e-9 * max(1.0, self.diameter())
        on = (np.abs(x0 - np.array(self.lo)) <= tol) | (np.abs(np.array(self.hi) - x0) <= tol)
        return int(on.sum()) >= 2

    def inradius(self):
        return 0.5 * min(h - l for l, h in zip(self.lo, self.hi))

    def vertices(self):
        if self.dim == 1:
            return np.array([[self.lo[0]], [self.hi[0]]])
        grids = np.meshgrid(*[[l, h] for l, h in zip(self.lo, self.hi)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def to_dict(self):
        return {"type": "rectangle", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True, eq=False)
class Disk(Domain):
    center: tuple
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        if not 1 <= len(c) <= 3:
            raise UnsupportedDimension(f"disk center {c}")
        if not self.radius > 0:
            raise ConfigError("disk radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return len(self.center)

    def signed_distance(self, x):
        x = _points(x, self.dim)
        return self.radius - np.linalg.norm(x - np.array(self.center), axis=-1)

    def bounding_box(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def outward_normal(self, x0):
        v = np.asarray(x0, dtype=float) - np.array(self.center)
        return v / np.linalg.norm(v)

    def project(self, x):
        x = _points(x, self.dim)
        c = np.array(self.center)
        v = x - c
        return c + self.radius * v / np.linalg.norm(v, axis=-1, keepdims=True)

    def inradius(self):
        return self.radius

    def to_dict(self):
        return {"type": "disk", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Annulus(Domain):
    center: tuple
    r_inner: float
    r_outer: float

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        if not 1 <= len(c) <= 3:
            raise UnsupportedDimension(f"annulus center {c}")
        if not 0 < self.r_inner < self.r_outer:
            raise ConfigError("annulus needs 0 < r_inner < r_outer")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "r_inner", float(self.r_inner))
        object.__setattr__(self, "r_outer", float(self.r_outer))

    @property
    def dim(self):
        return len(self.center)

    def signed_distance(self, x):
        x = _points(x, self.dim)
        rho = np.linalg.norm(x - np.array(self.center), axis=-1)
        return np.minimum(rho - self.r_inner, self.r_outer - rho)

    def bounding_box(self):
        c = np.array(self.center)
        return c - self.r_outer, c + self.r_outer

    def _on_inner(self, x0):
        rho = np.linalg.norm(np.asarray(x0, dtype=float) - np.array(self.center))
        return abs(rho - self.r_inner) < abs(rho - self.r_outer)

    def outward_normal(self, x0):
        v = np.asarray(x0, dtype=float) - np.array(self.center)
        v = v / np.linalg.norm(v)
        return -v if self._on_inner(x0) else v

    def exterior_ball_ok(self, x0, y0, R):
        # inside the hole the ball must be strictly smaller than the hole
        if self._on_inner(x0) and R >= self.r_inner:
            return False
        return super().exterior_ball_ok(x0, y0, R)

    def project(self, x):
        x = _points(x, self.dim)
        c = np.array(self.center)
        v = x - c
        rho = np.linalg.norm(v, axis=-1, keepdims=True)
        target = np.where(rho - self.r_inner < self.r_outer - rho, self.r_inner, self.r_outer)
        return c + target * v / rho

    def inradius(self):
        return 0.5 * (self.r_outer - self.r_inner)

    def to_dict(self):
        return {"type": "annulus", "center": list(self.center),
                "r_inner": self.r_inner, "r_outer": self.r_outer}


@dataclass(frozen=True, eq=False)
class Polygon(Domain):
    """Simple closed polygon in the plane (vertex order either orientation)."""

    vertices_xy: tuple

    def __post_init__(self):
        v = np.asarray(self.vertices_xy, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise UnsupportedDimension("polygons are 2-D only")
        if np.allclose(v[0], v[-1]):
            v = v[:-1]
        if len(v) < 3:
            raise ConfigError("polygon needs at least three vertices")
        area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if abs(area) <= 1e-14:
            raise ConfigError("polygon has zero area")
        if area < 0:
            v = v[::-1]
        if _self_intersects(v):
            raise ConfigError("polygon is not simple")
        object.__setattr__(self, "vertices_xy", tuple(map(tuple, v)))

    @property
    def dim(self):
        return 2

    @property
    def _v(self):
        return np.array(self.vertices_xy)

    def _edges(self):
        a = self._v
        return a, np.roll(a, -1, axis=0)

    def _unsigned(self, x):
        a, b = self._edges()
        ab = b - a
        ap = x[..., None, :] - a
        t = np.clip(np.sum(ap * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
        closest = a + t[..., None] * ab
        return np.min(np.linalg.norm(x[..., None, :] - closest, axis=-1), axis=-1)

    def _inside(self, x):
        a, b = self._edges()
        px, py = x[..., 0, None], x[..., 1, None]
        crosses = (a[:, 1] > py) != (b[:, 1] > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = a[:, 0] + (py - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
        return (np.sum(crosses & (px < xint), axis=-1) % 2) == 1

    def signed_distance(self, x):
        x = _points(x, 2)
        d = self._unsigned(x)
        return np.where(self._inside(x), d, -d)

    def bounding_box(self):
        v = self._v
        return v.min(axis=0), v.max(axis=0)

    def outward_normal(self, x0):
        x0 = np.asarray(x0, dtype=float)
        a, b = self._edges()
        ab = b - a
        t = np.clip(np.sum((x0 - a) * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
        dist = np.linalg.norm(x0 - (a + t[:, None] * ab), axis=-1)
        tol = 1e-9 * max(1.0, self.diameter())
        active = dist <= tol
        if not np.any(active):
            raise NoExteriorSphere(f"{x0} is not on the polygon boundary")
        # counter-clockwise orientation: outward normal of edge (dx, dy) is (dy, -dx)
        normals = np.stack([ab[:, 1], -ab[:, 0]], axis=-1)
        normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
        n = normals[active].sum(axis=0)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            raise NoExteriorSphere(f"degenerate normal at {x0}")
        return n / norm

    def project(self, x):
        x = _points(x, 2)
        a, b = self._edges()
        ab = b - a
        t = np.clip(np.sum((x[..., None, :] - a) * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
        closest = a + t[..., None] * ab
        k = np.argmin(np.linalg.norm(x[..., None, :] - closest, axis=-1), axis=-1)
        return np.take_along_axis(closest, k[..., None, None], axis=-2)[..., 0, :]

    def inradius(self):
        # largest distance on a fine lattice; adequate for the eps0 check
        lo, hi = self.bounding_box()
        n = 200
        gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n))
        return float(np.max(self.signed_distance(np.stack([gx, gy], axis=-1))))

    def vertices(self):
        return self._v

    def to_dict(self):
        return {"type": "polygon", "vertices": [list(v) for v in self.vertices_xy]}


def _self_intersects(v):
    n = len(v)

    def orient(p, q, r):
        return np.sign((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))

    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            c, d = v[j], v[(j + 1) % n]
            if orient(a, b, c) * orient(a, b, d) < 0 and orient(c, d, a) * orient(c, d, b) < 0:
                return True
    return False


def domain_from_dict(spec: dict) -> Domain:
    """Build a domain from its JSON description."""
    try:
        kind = spec["type"].lower()
        if kind in ("rectangle", "box", "interval"):
            return Rectangle(spec["lo"], spec["hi"])
        if kind in ("disk", "ball"):
            return Disk(spec.get("center", [0.0, 0.0]), spec["radius"])
        if kind == "annulus":
            return Annulus(spec.get("center", [0.0, 0.0]), spec["r_inner"], spec["r_outer"])
        if kind == "polygon":
            return Polygon(spec["vertices"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad domain description {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown domain type {spec.get('type')!r}")


# ---------------------------------------------------------------------------
# quadrature on the unit ball


@dataclass(frozen=True, eq=False)
class BallQuadrature:
    """Product rule on the closed unit ball, normalized to unit mass.

    Nodes are stored loop by loop: ``n_loops`` closed loops (circles of
    constant radius, and latitude in 3-D) of ``loop_size`` equally spaced
    points each.  ``loop_weights`` is the mass of each loop; a point weight is
    its loop weight divided by ``loop_size``.  In 1-D every loop is a single
    point.
    """

    offsets: np.ndarray
    weights: np.ndarray
    loop_weights: np.ndarray
    loop_size: int
    radial_order: int
    angular_order: int

    @property
    def dim(self):
        return self.offsets.shape[1]

    @property
    def n_loops(self):
        return self.loop_weights.size

    def __len__(self):
        return self.weights.size

    def integrate(self, f):
        """Normalized ball average of a callable evaluated at the nodes."""
        return float(np.dot(self.weights, f(self.offsets)))


def build_ball_quadrature(N: int, radial_order: int = 8, angular_order: int = 32) -> BallQuadrature:
    """Deterministic centrally symmetric rule on the unit ball of R^N.

    Exact (up to rounding) for polynomials of total degree up to
    ``min(2*radial_order - 1, angular_order - 1)``.  Odd angular orders are
    rounded up so that antipodal nodes exist.
    """
    if radial_order < 1 or angular_order < 1:
        raise ValueError("quadrature orders must be >= 1")
    M = angular_order + (angular_order % 2)

    if N == 1:
        x, w = np.polynomial.legendre.leggauss(2 * radial_order)
        offsets = x[:, None]
        weights = w / w.sum()
        return _finish(offsets, weights, weights.copy(), 1, radial_order, angular_order)

    if N == 2:
        x, w = np.polynomial.legendre.leggauss(radial_order)
        r = 0.5 * (x + 1.0)
        wr = 0.5 * w * r  # area element r dr
        wr = wr / wr.sum()
        th = 2.0 * np.pi * np.arange(M) / M
        offsets = np.stack([r[:, None] * np.cos(th), r[:, None] * np.sin(th)], axis=-1).reshape(-1, 2)
        loop_w = wr
    elif N == 3:
        # radial Gauss-Jacobi for the r^2 dr element keeps degree 2n-1 exactness
        xj, wj = roots_jacobi(radial_order, 0.0, 2.0)
        r = 0.5 * (xj + 1.0)
        wr = wj / wj.sum()
        npol = max(1, M // 2)
        c, wc = np.polynomial.legendre.leggauss(npol)
        s = np.sqrt(1.0 - c * c)
        ph = 2.0 * np.pi * np.arange(M) / M
        pts = []
        loop_w = []
        for ri, wri in zip(r, wr):
            for ci, si, wci in zip(c, s, wc):
                pts.append(np.stack([ri * si * np.cos(ph), ri * si * np.sin(ph), np.full(M, ri * ci)], axis=-1))
                loop_w.append(wri * wci)
        offsets = np.concatenate(pts)
        loop_w = np.array(loop_w)
        loop_w = loop_w / loop_w.sum()
    else:
        raise UnsupportedDimension(f"ball quadrature supports N in {{1, 2, 3}}, got {N}")
    weights = np.repeat(loop_w / M, M)
    return _finish(offsets, weights, loop_w, M, radial_order, M)


def _finish(offsets, weights, loop_w, M, ro, ao):
    weights = weights / weights.sum()
    loop_w = loop_w / loop_w.sum()
    for a in (offsets, weights, loop_w):
        a.setflags(write=False)
    return BallQuadrature(offsets, weights, loop_w, int(M), int(ro), int(ao))


def ball_monomial_average(N: int, alpha) -> float:
    """Exact normalized integral of z^alpha over the unit ball of R^N."""
    alpha = tuple(int(a) for a in alpha)
    if any(a % 2 for a in alpha):
        return 0.0
    # |B|^{-1} * prod Gamma(b_i) / Gamma(sum b_i + 1) * 2 / (sum(alpha)+N) * |S| / |S| ...
    # with b_i = (alpha_i + 1)/2: integral over the sphere is 2*prod Gamma(b_i)/Gamma(sum b_i)
    b = [(a + 1) / 2.0 for a in alpha]
    k = sum(alpha)
    sphere = 2.0 * math.prod(math.gamma(bi) for bi in b) / math.gamma(sum(b))
    ball = sphere / (k + N)
    vol = math.pi ** (N / 2) / math.gamma(N / 2 + 1)
    return ball / vol

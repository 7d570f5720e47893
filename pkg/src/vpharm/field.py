"""Lattice discretization of a closed domain and fields living on it.

A :class:`Grid` puts a uniform lattice of spacing ``h`` over the bounding box
of a domain.  Lattice nodes strictly inside become unknowns ("interior
nodes"); points on the boundary (lattice nodes lying on it, projections of
nodes that sit too close to it, crossings of lattice edges with it and domain
corners) become boundary samples.  A field stores one value per interior node
and one per boundary sample; ``data`` concatenates the two in that order.

Interpolation is multilinear in cells whose corners are all data points and
barycentric on a Delaunay triangulation of the boundary band elsewhere.  Both
produce convex weights, so interpolation is monotone and affine-exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import ConfigError, GridMismatch, OutsideDomain
from .geometry import OUTSIDE_SLACK, Domain

__all__ = ["Grid", "GridField", "OutsidePoint", "interpolate", "sup_diff", "boundary_trace_from"]

EXTERIOR, INTERIOR, ON_BOUNDARY, SNAPPED = -1, 1, 0, 2


class OutsidePoint(OutsideDomain):
    pass


class Grid:
    """Uniform lattice restricted to a closed domain.

    ``snap`` (as a fraction of ``h``) sets how close to the boundary a lattice
    node may be and still count as an unknown; closer nodes are replaced by
    their projection onto the boundary.
    """

    def __init__(self, domain: Domain, h: float, snap: float = 1e-2):
        if not h > 0:
            raise ConfigError("grid spacing h must be positive")
        self.domain = domain
        self.h = float(h)
        self.dim = domain.dim
        self.snap = float(snap)
        lo, hi = (np.asarray(a, dtype=float) for a in domain.bounding_box())
        self.lo = lo
        shape = np.floor((hi - lo) / h + 1e-9).astype(np.int64) + 1
        shape = np.where(lo + (shape - 1) * h < hi - 1e-12 * max(1.0, domain.diameter()), shape + 1, shape)
        self.shape = tuple(int(s) for s in np.maximum(shape, 2))
        self.strides = np.array([int(np.prod(self.shape[k + 1:])) for k in range(self.dim)], dtype=np.int64)

        axes = [lo[k] + h * np.arange(self.shape[k]) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        lattice = np.stack([m.ravel() for m in mesh], axis=-1)
        sdf = domain.signed_distance(lattice)
        on_tol = 1e-12 * max(1.0, domain.diameter())

        kind = np.full(lattice.shape[0], EXTERIOR, dtype=np.int8)
        kind[np.abs(sdf) <= on_tol] = ON_BOUNDARY
        kind[(sdf > on_tol) & (sdf < self.snap * h)] = SNAPPED
        kind[sdf >= max(self.snap * h, on_tol * 2)] = INTERIOR
        self.kind = kind

        interior_ids = np.nonzero(kind == INTERIOR)[0]
        if interior_ids.size == 0:
            raise ConfigError(f"grid with h={h} has no interior nodes")
        self.interior_nodes = lattice[interior_ids]
        self.interior_sdf = sdf[interior_ids]

        samples = [lattice[kind == ON_BOUNDARY]]
        snapped = lattice[kind == SNAPPED]
        if snapped.size:
            samples.append(domain.project(snapped))
        samples.append(self._edge_crossings(lattice, sdf, on_tol))
        verts = domain.vertices()
        if len(verts):
            samples.append(np.asarray(verts, dtype=float).reshape(-1, self.dim))
        bnd = _dedupe(np.concatenate(samples), 1e-6 * h, keep_first=int(np.sum(kind == ON_BOUNDARY)))
        self.boundary_points = bnd

        lat_index = np.full(lattice.shape[0], -1, dtype=np.int64)
        lat_index[interior_ids] = np.arange(interior_ids.size)
        on_ids = np.nonzero(kind == ON_BOUNDARY)[0]
        lat_index[on_ids] = interior_ids.size + np.arange(on_ids.size)  # on-boundary nodes lead the sample list
        self.lat_index = lat_index
        for a in (self.interior_nodes, self.interior_sdf, self.boundary_points, self.lat_index, self.kind):
            a.setflags(write=False)

    # -- construction helpers -------------------------------------------------

    def _edge_crossings(self, lattice, sdf, on_tol):
        out = []
        grid_sdf = sdf.reshape(self.shape)
        grid_pts = lattice.reshape(*self.shape, self.dim)
        for ax in range(self.dim):
            a = [slice(None)] * self.dim
            b = [slice(None)] * self.dim
            a[ax] = slice(0, -1)
            b[ax] = slice(1, None)
            sa, sb = grid_sdf[tuple(a)].ravel(), grid_sdf[tuple(b)].ravel()
            cross = ((sa > on_tol) & (sb < -on_tol)) | ((sb > on_tol) & (sa < -on_tol))
            if not np.any(cross):
                continue
            pa = grid_pts[tuple(a)].reshape(-1, self.dim)[cross]
            pb = grid_pts[tuple(b)].reshape(-1, self.dim)[cross]
            inside_a = sa[cross] > 0
            pin = np.where(inside_a[:, None], pa, pb)
            pout = np.where(inside_a[:, None], pb, pa)
            for _ in range(64):
                mid = 0.5 * (pin + pout)
                ins = self.domain.signed_distance(mid) >= 0
                pin = np.where(ins[:, None], mid, pin)
                pout = np.where(ins[:, None], pout, mid)
            out.append(pin)
        return np.concatenate(out) if out else np.empty((0, self.dim))

    # -- sizes and coordinates ---------------------------------------------

    @property
    def n_interior(self) -> int:
        return self.interior_nodes.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary_points.shape[0]

    @property
    def n_data(self) -> int:
        return self.n_interior + self.n_boundary

    @cached_property
    def data_points(self) -> np.ndarray:
        pts = np.concatenate([self.interior_nodes, self.boundary_points])
        pts.setflags(write=False)
        return pts

    def r_eps(self, eps: float) -> np.ndarray:
        """Ball radius min(eps, dist to boundary) at every interior node."""
        return np.minimum(eps, self.interior_sdf)

    def boundary_adjacent(self) -> np.ndarray:
        """Interior nodes whose lattice cell neighbourhood touches the boundary."""
        return self.interior_sdf < math.sqrt(self.dim) * self.h

    def same_as(self, other: "Grid") -> bool:
        return self is other or (
            self.domain.to_dict() == other.domain.to_dict()
            and self.h == other.h
            and self.snap == other.snap
        )

    def signature(self) -> dict:
        return {"domain": self.domain.to_dict(), "h": self.h, "n_interior": self.n_interior,
                "n_boundary": self.n_boundary}

    # -- interpolation ------------------------------------------------------

    def locate(self, pts):
        """Cell index, local coordinates and full-cell flag for each point."""
        pts = np.asarray(pts, dtype=float).reshape(-1, self.dim)
        shape = np.array(self.shape)
        rel = (pts - self.lo) / self.h
        cell = np.clip(np.floor(rel).astype(np.int64), 0, shape - 2)
        frac = np.clip(rel - cell, 0.0, 1.0)
        base = cell @ self.strides
        full = np.ones(len(pts), dtype=bool)
        for corner in range(1 << self.dim):
            off = sum(((corner >> k) & 1) * int(self.strides[k]) for k in range(self.dim))
            full &= self.lat_index[base + off] >= 0
        return base, frac, full

    def multilinear_weights(self, base, frac):
        """Data indices and weights of the 2^N cell corners."""
        n = len(base)
        idx = np.empty((n, 1 << self.dim), dtype=np.int64)
        w = np.ones((n, 1 << self.dim))
        for corner in range(1 << self.dim):
            off = 0
            for k in range(self.dim):
                bit = (corner >> k) & 1
                off += bit * int(self.strides[k])
                w[:, corner] *= frac[:, k] if bit else 1.0 - frac[:, k]
            idx[:, corner] = self.lat_index[base + off]
        return idx, w

    @cached_property
    def _band(self):
        width = 3.0 * math.sqrt(self.dim) * self.h
        near = np.nonzero(self.interior_sdf <= width)[0]
        data_ids = np.concatenate([near, self.n_interior + np.arange(self.n_boundary)])
        pts = self.data_points[data_ids]
        if self.dim == 1:
            order = np.argsort(pts[:, 0], kind="stable")
            return data_ids[order], pts[order, 0], None
        tri = Delaunay(pts)
        return data_ids, pts, tri

    @cached_property
    def _incidence(self):
        data_ids, pts, tri = self._band
        flat = tri.simplices.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=len(pts))
        ptr = np.concatenate([[0], np.cumsum(counts)])
        return order // (self.dim + 1), ptr, cKDTree(pts)

    def cut_weights(self, pts):
        """Convex interpolation weights (N+1 per point) from the boundary band."""
        pts = np.asarray(pts, dtype=float).reshape(-1, self.dim)
        data_ids, bpts, tri = self._band
        k = self.dim + 1
        if self.dim == 1:
            x = pts[:, 0]
            j = np.clip(np.searchsorted(bpts, x, side="right") - 1, 0, len(bpts) - 2)
            x0, x1 = bpts[j], bpts[j + 1]
            t = np.clip(np.where(x1 > x0, (x - x0) / np.where(x1 > x0, x1 - x0, 1.0), 0.0), 0.0, 1.0)
            return np.stack([data_ids[j], data_ids[j + 1]], axis=1), np.stack([1.0 - t, t], axis=1)

        simplex = tri.find_simplex(pts)
        lam = np.zeros((len(pts), k))
        ok = simplex >= 0
        if np.any(ok):
            lam[ok] = _barycentric(tri, simplex[ok], pts[ok])
        bad = np.nonzero(~ok)[0]
        if bad.size:
            # outside the hull of the band (thin slivers between boundary samples):
            # use the best incident simplex of the nearest sample, clipped to convex weights
            inc, ptr, tree = self._incidence
            _, nearest = tree.query(pts[bad])
            for row, i in zip(bad, nearest):
                cands = inc[ptr[i]:ptr[i + 1]]
                lams = _barycentric(tri, cands, np.repeat(pts[row][None], len(cands), axis=0))
                score = np.nan_to_num(lams.min(axis=1), nan=-np.inf)  # flat simplices never win
                best = int(np.argmax(score))
                simplex[row] = cands[best]
                if np.isfinite(score[best]):
                    lam[row] = lams[best]
                else:
                    lam[row] = (tri.simplices[cands[best]] == i).astype(float)
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum(axis=1, keepdims=True)
        return data_ids[tri.simplices[simplex]], lam

    def interpolation_weights(self, pts):
        """Data indices and convex weights for evaluating a field at ``pts``."""
        pts = np.asarray(pts, dtype=float).reshape(-1, self.dim)
        base, frac, full = self.locate(pts)
        m = 1 << self.dim
        width = max(m, self.dim + 1)
        idx = np.zeros((len(pts), width), dtype=np.int64)
        w = np.zeros((len(pts), width))
        if np.any(full):
            i, ww = self.multilinear_weights(base[full], frac[full])
            idx[full, :m], w[full, :m] = i, ww
        if np.any(~full):
            i, ww = self.cut_weights(pts[~full])
            idx[~full, : self.dim + 1], w[~full, : self.dim + 1] = i, ww
        return idx, w

    def check_inside(self, pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, self.dim)
        sd = self.domain.signed_distance(pts)
        if np.any(sd < -OUTSIDE_SLACK):
            raise OutsidePoint(f"point {pts[np.argmin(sd)]} lies outside the closed domain")
        return pts


def _barycentric(tri, simplex, pts):
    T = tri.transform[simplex]
    n = pts.shape[1]
    b = np.einsum("ijk,ik->ij", T[:, :n, :], pts - T[:, n, :])
    return np.concatenate([b, 1.0 - b.sum(axis=1, keepdims=True)], axis=1)


def _dedupe(pts, tol, keep_first=0):
    if len(pts) < 2:
        return pts
    tree = cKDTree(pts)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return pts
    drop = np.zeros(len(pts), dtype=bool)
    for i, j in sorted(map(tuple, np.sort(pairs, axis=1))):
        if not drop[i]:
            drop[j] = True
    drop[:keep_first] = False  # on-boundary lattice nodes keep their slot
    return pts[~drop]


@dataclass(frozen=True, eq=False)
class GridField:
    """Values on a grid: one per interior node and one per boundary sample.

    ``interior`` may be ``None`` for a bare boundary trace that the solver has
    not initialised yet.
    """

    grid: Grid
    interior: np.ndarray | None
    boundary: np.ndarray

    def __post_init__(self):
        b = np.array(self.boundary, dtype=float).ravel()
        if b.size != self.grid.n_boundary:
            raise GridMismatch(f"{b.size} boundary values for {self.grid.n_boundary} samples")
        if not np.all(np.isfinite(b)):
            raise ValueError("boundary values must be finite")
        b.setflags(write=False)
        object.__setattr__(self, "boundary", b)
        if self.interior is not None:
            v = np.array(self.interior, dtype=float).ravel()
            if v.size != self.grid.n_interior:
                raise GridMismatch(f"{v.size} interior values for {self.grid.n_interior} nodes")
            if not np.all(np.isfinite(v)):
                raise ValueError("interior values must be finite")
            v.setflags(write=False)
            object.__setattr__(self, "interior", v)

    @classmethod
    def from_function(cls, grid: Grid, f) -> "GridField":
        return cls(grid, _evaluate(f, grid.interior_nodes), _evaluate(f, grid.boundary_points))

    @classmethod
    def from_data(cls, grid: Grid, data) -> "GridField":
        data = np.asarray(data, dtype=float)
        return cls(grid, data[: grid.n_interior], data[grid.n_interior:])

    @property
    def is_complete(self) -> bool:
        return self.interior is not None

    @property
    def data(self) -> np.ndarray:
        self._require_complete()
        return np.concatenate([self.interior, self.boundary])

    def with_interior(self, values) -> "GridField":
        return GridField(self.grid, values, self.boundary)

    def _require_complete(self):
        if self.interior is None:
            raise ValueError("field has no interior values yet")

    def interpolate(self, x):
        return interpolate(self, x)

    def sup(self) -> float:
        return float(np.max(np.abs(self.data)))

    def write_csv(self, path):
        pts = self.grid.data_points
        names = ["x", "y", "z"][: self.grid.dim] + ["u"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row, u in zip(pts, self.data):
                w.writerow([repr(float(c)) for c in row] + [repr(float(u))])


def _evaluate(f, pts):
    if callable(f):
        try:
            out = np.asarray(f(pts), dtype=float)
            if out.shape == (len(pts),):
                return out
        except Exception:
            pass
        return np.array([float(f(p)) for p in pts])
    out = np.asarray(f, dtype=float)
    if out.ndim == 0:
        return np.full(len(pts), float(out))
    return out


def interpolate(f: GridField, x):
    """Value of ``f`` at point(s) ``x`` of the closed domain."""
    pts = f.grid.check_inside(x)
    idx, w = f.grid.interpolation_weights(pts)
    vals = np.sum(w * f.data[idx], axis=1)
    if np.ndim(x) <= 1 and not (f.grid.dim == 1 and np.ndim(x) == 1 and np.size(x) > 1):
        return float(vals[0])
    return vals


def sup_diff(f1: GridField, f2: GridField) -> float:
    if not f1.grid.same_as(f2.grid):
        raise GridMismatch("fields live on different grids")
    d = np.abs(f1.boundary - f2.boundary)
    out = float(d.max()) if d.size else 0.0
    if f1.interior is not None and f2.interior is not None:
        out = max(out, float(np.max(np.abs(f1.interior - f2.interior))))
    return out


def boundary_trace_from(g, grid: Grid) -> GridField:
    """Sample ``g`` on the boundary samples; interior values are left unset."""
    return GridField(grid, None, _evaluate(g, grid.boundary_points))

import csv

import numpy as np
import pytest

from vpharm import Annulus, Disk, Polygon, Rectangle
from vpharm.errors import GridMismatch, OutsideDomain
from vpharm.field import Grid, GridField, boundary_trace_from, interpolate, sup_diff

SQUARE = Rectangle((0, 0), (1, 1))


def test_grid_classification():
    for dom, h in ((SQUARE, 0.1), (Disk((0, 0), 1), 0.07), (Annulus((0, 0), 1, 2), 0.1)):
        g = Grid(dom, h)
        assert g.n_interior > 0
        sd = dom.signed_distance(g.interior_nodes)
        assert np.all(sd > 0)
        assert np.allclose(sd, g.interior_sdf)
        assert np.abs(dom.signed_distance(g.boundary_points)).max() < 1e-12


def test_snapped_nodes_become_boundary_samples():
    g = Grid(Disk((0, 0), 1), 0.1)
    assert g.interior_sdf.min() >= 1e-2 * g.h


def test_constant_interpolation(rng):
    g = Grid(Disk((0, 0), 1), 0.1)
    f = GridField.from_function(g, lambda x: np.full(len(x), 4.25))
    pts = rng.uniform(-0.7, 0.7, size=(100, 2))
    assert np.allclose(f.interpolate(pts), 4.25, atol=1e-14)


@pytest.mark.parametrize("dom,h", [(SQUARE, 0.1), (Polygon([(0, 0), (2, 0), (0.5, 1.5)]), 0.1),
                                   (Rectangle((0,), (1,)), 0.05), (Rectangle((0, 0, 0), (1, 1, 1)), 0.2)])
def test_affine_exact(dom, h, rng):
    g = Grid(dom, h)
    a = rng.normal(size=dom.dim)
    f = GridField.from_function(g, lambda x: x @ a + 1.0)
    lo, hi = dom.bounding_box()
    pts = rng.uniform(lo, hi, size=(400, dom.dim))
    pts = pts[dom.signed_distance(pts) >= 0]
    assert np.abs(f.interpolate(pts) - (pts @ a + 1.0)).max() <= 1e-13


def test_second_order_at_cell_centre():
    g = Grid(SQUARE, 0.01)
    f = GridField.from_function(g, lambda x: x[:, 0] ** 2)
    x = np.array([0.505, 0.505])
    assert abs(interpolate(f, x) - 0.505 ** 2) <= 2.5e-5 + 1e-15


def test_outside_point():
    g = Grid(SQUARE, 0.1)
    f = GridField.from_function(g, lambda x: x[:, 0])
    with pytest.raises(OutsideDomain):
        interpolate(f, np.array([1.5, 0.5]))


def test_sup_diff():
    g = Grid(SQUARE, 0.1)
    f1 = GridField.from_function(g, lambda x: x[:, 0])
    assert sup_diff(f1, f1) == 0
    assert sup_diff(f1, GridField.from_function(g, lambda x: x[:, 0] - 0.3)) == pytest.approx(0.3)
    assert sup_diff(f1, GridField.from_function(g, lambda x: x[:, 0] + 0.1)) == pytest.approx(0.1)
    with pytest.raises(GridMismatch):
        sup_diff(f1, GridField.from_function(Grid(SQUARE, 0.05), lambda x: x[:, 0]))


def test_boundary_traces():
    g = Grid(SQUARE, 0.1)
    one = boundary_trace_from(lambda x: np.ones(len(x)), g)
    assert one.interior is None and not one.is_complete
    assert np.all(one.boundary == 1)
    tr = boundary_trace_from(lambda x: x[:, 0] ** 2 - x[:, 1] ** 2, g)
    k = np.nonzero(np.all(np.isclose(g.boundary_points, [1.0, 0.0]), axis=1))[0]
    assert tr.boundary[k[0]] == 1.0
    ga = Grid(Annulus((0, 0), 1, 2), 0.1)
    tra = boundary_trace_from(lambda x: 1 / np.linalg.norm(x, axis=1), ga)
    inner = np.abs(np.linalg.norm(ga.boundary_points, axis=1) - 1) < 1e-12
    assert inner.any() and np.allclose(tra.boundary[inner], 1.0, atol=1e-12)


def test_fields_are_immutable():
    g = Grid(SQUARE, 0.25)
    f = GridField.from_function(g, lambda x: x[:, 0])
    with pytest.raises(ValueError):
        f.interior[0] = 3.0


def test_csv(tmp_path):
    g = Grid(SQUARE, 0.25)
    f = GridField.from_function(g, lambda x: x[:, 0] + 2 * x[:, 1])
    path = tmp_path / "u.csv"
    f.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x", "y", "u"]
    assert len(rows) == 1 + g.n_interior + g.n_boundary
    x, y, u = map(float, rows[1])
    assert u == pytest.approx(x + 2 * y)

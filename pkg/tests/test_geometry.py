import numpy as np
import pytest

from vpharm import (Annulus, Disk, Polygon, Rectangle, build_ball_quadrature, dist_to_boundary,
                    domain_from_dict, r_eps)
from vpharm.errors import ConfigError, NoExteriorSphere, OutsideDomain, UnsupportedDimension
from vpharm.geometry import ball_monomial_average

SQUARE = Rectangle((0, 0), (1, 1))
ANNULUS = Annulus((0, 0), 1, 2)


@pytest.mark.parametrize("dom,x,want", [
    (SQUARE, (0.3, 0.5), 0.3),
    (Disk((0, 0), 1), (0.25, 0), 0.75),
    (ANNULUS, (1.4, 0), 0.4),
    (Rectangle((0,), (2,)), (0.5,), 0.5),
    (Rectangle((0, 0, 0), (1, 1, 1)), (0.5, 0.5, 0.1), 0.1),
    (Polygon([(0, 0), (2, 0), (0, 2)]), (0.5, 0.5), 0.5),
])
def test_dist(dom, x, want):
    assert dist_to_boundary(dom, np.array(x)) == pytest.approx(want, abs=1e-14)


def test_r_eps():
    assert r_eps(SQUARE, np.array([0.5, 0.5]), 0.1) == pytest.approx(0.1)
    assert r_eps(SQUARE, np.array([0.02, 0.5]), 0.1) == pytest.approx(0.02)
    assert r_eps(SQUARE, np.array([0.0, 0.5]), 0.1) == 0.0


def test_outside_rejected():
    with pytest.raises(OutsideDomain):
        dist_to_boundary(SQUARE, np.array([1.1, 0.5]))
    with pytest.raises(OutsideDomain):
        dist_to_boundary(ANNULUS, np.array([0.5, 0.0]))


def test_polygon_orientation_and_simplicity():
    cw = Polygon([(0, 0), (0, 1), (1, 1), (1, 0)])
    assert dist_to_boundary(cw, np.array([0.5, 0.25])) == pytest.approx(0.25)
    with pytest.raises(ConfigError):
        Polygon([(0, 0), (1, 1), (1, 0), (0, 1)])


@pytest.mark.parametrize("dom", [SQUARE, Disk((0.5, -1), 2.0), ANNULUS, Polygon([(0, 0), (3, 0), (1, 2)])])
def test_dict_roundtrip(dom):
    again = domain_from_dict(dom.to_dict())
    pts = np.array([[0.5, 0.4], [1.2, 0.3], [0.9, -0.5]])
    assert np.allclose(dom.signed_distance(pts), again.signed_distance(pts))


def test_bad_dict():
    with pytest.raises(ConfigError):
        domain_from_dict({"type": "hexagon"})
    with pytest.raises(ConfigError):
        domain_from_dict({"type": "disk"})


def test_projection_lands_on_boundary(rng):
    for dom in (SQUARE, Disk((0, 0), 1), ANNULUS, Polygon([(0, 0), (2, 0), (1, 1.5)])):
        lo, hi = dom.bounding_box()
        pts = rng.uniform(lo, hi, size=(50, 2))
        proj = dom.project(pts)
        assert np.abs(dom.signed_distance(proj)).max() < 1e-12


def test_exterior_centres():
    c = ANNULUS.exterior_center(np.array([1.0, 0.0]), 0.5)
    assert np.allclose(c, [0.5, 0.0])
    with pytest.raises(NoExteriorSphere):
        ANNULUS.exterior_center(np.array([1.0, 0.0]), 1.5)
    assert np.allclose(Disk((0, 0), 1).exterior_center(np.array([1.0, 0.0]), 0.5), [1.5, 0.0])


class TestQuadrature:
    @pytest.mark.parametrize("N", [1, 2, 3])
    def test_basic_moments(self, N, rng):
        q = build_ball_quadrature(N)
        assert q.weights.sum() == pytest.approx(1.0, abs=1e-14)
        assert q.integrate(lambda z: np.full(len(z), 3.0)) == pytest.approx(3.0, abs=1e-14)
        xi = rng.normal(size=N)
        assert abs(q.integrate(lambda z: z @ xi)) < 1e-14
        assert np.all(np.linalg.norm(q.offsets, axis=1) <= 1 + 1e-15)

    def test_central_symmetry(self):
        for N in (1, 2, 3):
            q = build_ball_quadrature(N)
            key = {tuple(np.round(z, 12)): w for z, w in zip(q.offsets, q.weights)}
            for z, w in zip(q.offsets, q.weights):
                assert key[tuple(np.round(-z, 12) + 0.0)] == pytest.approx(w)

    def test_second_moment_disk(self):
        q = build_ball_quadrature(2, radial_order=2)
        assert q.integrate(lambda z: (z ** 2).sum(axis=1)) == pytest.approx(0.5, abs=1e-10)

    @pytest.mark.parametrize("N,alpha", [(2, (2, 2)), (2, (4, 0)), (3, (2, 0, 2)), (3, (0, 0, 4)), (1, (6,))])
    def test_monomials(self, N, alpha):
        q = build_ball_quadrature(N)
        got = q.integrate(lambda z: np.prod(z ** np.array(alpha), axis=1))
        assert got == pytest.approx(ball_monomial_average(N, alpha), abs=1e-12)

    def test_unsupported(self):
        with pytest.raises(UnsupportedDimension):
            build_ball_quadrature(4)

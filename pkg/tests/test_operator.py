import numpy as np
import pytest

from vpharm import Annulus, Disk, Rectangle, build_ball_quadrature
from vpharm.catalog import lookup
from vpharm.errors import UnsupportedP, VanishingGradient, ZeroRadius
from vpharm.field import Grid, GridField
from vpharm.operator import (OperatorConfig, SmoothProbe, amvp_ratio, amvp_target, apply_eta, apply_mu,
                             eta_of_function, get_plan, gtp_laplacian, mu_of_function, residual_A,
                             residual_field)
from vpharm import _kernels as K

P_SET = [1, 1.3, 1.5, 2, 3, 4, 10, "inf"]
SQUARE = Rectangle((0, 0), (1, 1))


def quad_probe():
    return lookup("quadratic", 2).probe


def norm(z):
    return np.linalg.norm(np.asarray(z, dtype=float), axis=-1)


@pytest.mark.parametrize("p", P_SET)
def test_constants_and_affine(p, rng):
    g = Grid(Disk((0, 0), 1), 0.1)
    cfg = OperatorConfig(p, 0.2)
    c = GridField.from_function(g, lambda x: np.full(len(x), -1.5))
    assert np.abs(apply_mu(cfg, c).data + 1.5).max() < 1e-13
    a = rng.normal(size=2)
    f = GridField.from_function(g, lambda x: x @ a + 0.3)
    m = apply_mu(cfg, f)
    # exactness is claimed where every ball sample falls in an uncut cell
    uncut = np.diff(get_plan(g, cfg).cut_ptr) == 0
    assert uncut.sum() > 50
    assert np.abs(m.interior - f.interior)[uncut].max() < 1e-10
    # near the curved boundary the clipped cut-cell weights cost a little accuracy
    assert np.abs(m.interior - f.interior).max() < 1e-3
    assert np.array_equal(m.boundary, f.boundary)


@pytest.mark.parametrize("p", [1.5, "inf"])
def test_affine_exact_with_straight_boundary(p, rng):
    g = Grid(Rectangle((0, 0), (1, 0.8)), 1 / 20)
    a = rng.normal(size=2)
    f = GridField.from_function(g, lambda x: x @ a - 2.0)
    assert np.abs(apply_mu(OperatorConfig(p, 0.2), f).interior - f.interior).max() < 1e-12


@pytest.mark.parametrize("p", P_SET)
def test_cubic_symmetry(p):
    cub = lambda z: np.asarray(z)[..., 0] ** 3 - np.asarray(z)[..., 1] ** 3
    assert abs(mu_of_function(OperatorConfig(p, 1.0), cub, [0.0, 0.0])) <= 1e-8


def test_cubic_on_grid_node():
    g = Grid(Disk((0, 0), 1.0), 0.05)
    f = GridField.from_function(g, lambda x: x[:, 0] ** 3 - x[:, 1] ** 3)
    k = int(np.argmin(np.linalg.norm(g.interior_nodes, axis=1)))
    assert np.allclose(g.interior_nodes[k], 0)
    for p in (1.5, 3, "inf"):
        assert abs(apply_mu(OperatorConfig(p, 1.0), f).interior[k]) <= 1e-8


@pytest.mark.parametrize("p", [1, 1.5, 2, 3, "inf"])
def test_monotone(p, rng):
    g = Grid(Annulus((0, 0), 1, 2), 0.1)
    cfg = OperatorConfig(p, 0.15)
    u = GridField.from_function(g, lambda x: np.sin(3 * x[:, 0]) * x[:, 1])
    v = GridField(g, u.interior + rng.random(g.n_interior), u.boundary + rng.random(g.n_boundary))
    assert np.all(apply_mu(cfg, v).interior >= apply_mu(cfg, u).interior - 1e-12)


def test_mean_matrix_matches_kernel(rng):
    for dom, h in ((SQUARE, 1 / 40), (Annulus((0, 0), 1, 2), 1 / 16)):
        g = Grid(dom, h)
        cfg = OperatorConfig(2, 0.1)
        plan = get_plan(g, cfg)
        data = rng.random(g.n_interior + g.n_boundary)
        out = np.empty(g.n_interior)
        status = np.zeros(g.n_interior, dtype=np.int8)
        K.sweep_jacobi(data, out, status, *plan._common(), 2.0, K.KIND_GENERAL, 1e-14)
        assert np.abs(plan.mean_matrix @ data - out).max() < 1e-12


def test_gauss_seidel_single_node_update_matches_jacobi(rng):
    g = Grid(SQUARE, 0.1)
    cfg = OperatorConfig(1.5, 0.2)
    plan = get_plan(g, cfg)
    data = rng.random(g.n_interior + g.n_boundary)
    jac = plan.jacobi(data, cfg.p_float, cfg.kind, 1e-13)
    gs = data.copy()
    plan.gauss_seidel(gs, cfg.p_float, cfg.kind, 1e-13)
    assert gs[0] == pytest.approx(jac[0], abs=1e-12)


def test_thread_count_does_not_change_output(monkeypatch, rng):
    g = Grid(SQUARE, 1 / 32)
    cfg = OperatorConfig(3, 0.1)
    f = GridField.from_function(g, lambda x: np.exp(x[:, 0]) * np.cos(2 * x[:, 1]))
    a = apply_mu(cfg, f).interior
    monkeypatch.setenv("VPHARM_THREADS", "1")
    K.apply_thread_cap()
    b = apply_mu(cfg, f).interior
    assert np.array_equal(a, b)


class TestEta:
    def test_p2_is_plain_mean(self):
        g = Grid(SQUARE, 0.1)
        f = GridField.from_function(g, lambda x: x[:, 0] ** 2 + np.sin(x[:, 1]))
        cfg = OperatorConfig(2, 0.2)
        assert np.abs(apply_eta(cfg, f).interior - apply_mu(cfg, f).interior).max() < 1e-13

    def test_constant(self):
        g = Grid(SQUARE, 0.1)
        f = GridField.from_function(g, lambda x: np.full(len(x), 2.0))
        assert np.allclose(apply_eta(OperatorConfig(4, 0.2), f).data, 2.0, atol=1e-14)

    def test_norm_at_centre(self):
        assert eta_of_function(OperatorConfig(4, 1.0), norm, [0.0, 0.0]) == pytest.approx(11 / 18, abs=1e-8)

    def test_not_at_infinity(self):
        g = Grid(SQUARE, 0.2)
        with pytest.raises(UnsupportedP):
            apply_eta(OperatorConfig("inf", 0.2), GridField.from_function(g, lambda x: x[:, 0]))


class TestLaplacian:
    @pytest.mark.parametrize("p", [1.5, 3, 4, "inf"])
    def test_radial(self, p):
        alpha, N = 0.7, 2
        probe = lookup(f"radial_power({alpha})", N).probe
        y = np.array([0.4, -0.9])
        r = np.linalg.norm(y)
        if p == "inf":
            want = alpha * (alpha + 1) * r ** (-(alpha + 2))
        else:
            want = alpha * (alpha * (p - 1) + p - N) / p * r ** (-(alpha + 2))
        assert gtp_laplacian(probe, y, p) == pytest.approx(want, rel=1e-12)

    def test_affine_and_half_square(self):
        assert gtp_laplacian(lookup("affine", 2).probe, np.array([0.1, 0.2]), 3) == 0
        half = SmoothProbe(lambda x: 0.5 * (np.asarray(x) ** 2).sum(-1), lambda x: np.asarray(x, float),
                           lambda x: np.eye(3))
        for p in (1.5, 2, 5):
            assert gtp_laplacian(half, np.array([0.3, -0.2, 1.0]), p) == pytest.approx((3 + p - 2) / p)

    def test_critical_point(self):
        with pytest.raises(VanishingGradient):
            gtp_laplacian(quad_probe(), np.zeros(2), 2)


class TestAmvp:
    def test_affine_ratio_zero(self):
        probe = lookup("affine", 2).probe
        for p in (1.5, 3, "inf"):
            assert abs(amvp_ratio(OperatorConfig(p, 0.1), probe, np.array([0.4, 0.6]))) < 1e-10

    def test_quadratic_p2(self):
        cfg = OperatorConfig(2, 0.05)
        x = np.array([0.3, 0.2])
        assert amvp_target(cfg, quad_probe(), x) == pytest.approx(0.75)
        assert abs(amvp_ratio(cfg, quad_probe(), x) - 0.75) <= 0.02

    def test_harmonious_radial_target_zero(self):
        probe = lookup("radial_power", 2, 1.5).probe
        x = np.array([1.2, 0.7])
        cfg = OperatorConfig(1.5, 0.05)
        assert abs(amvp_target(cfg, probe, x)) < 1e-12
        assert abs(amvp_ratio(cfg, probe, x)) < abs(amvp_ratio(OperatorConfig(1.5, 0.2), probe, x)) + 1e-12

    def test_vanishing_gradient(self):
        with pytest.raises(VanishingGradient):
            amvp_ratio(OperatorConfig(2, 0.1), quad_probe(), np.zeros(2))


class TestResidual:
    def test_boundary_and_zero_radius(self):
        g = Grid(SQUARE, 0.1)
        f = GridField.from_function(g, lambda x: x[:, 0])
        cfg = OperatorConfig(3, 0.1)
        assert residual_A(cfg, 0.7, np.array([0.0, 0.5]), f, g_at=0.7) == 0.0
        assert residual_A(cfg, 0.9, np.array([0.0, 0.5]), f, g_at=0.7) == pytest.approx(0.1 * 0.2)
        with pytest.raises(ZeroRadius):
            residual_A(cfg, 0.0, np.array([0.0, 0.5]), f, on_boundary=False)

    def test_affine_fixed_point(self):
        g = Grid(SQUARE, 0.1)
        f = GridField.from_function(g, lambda x: 2 * x[:, 0] - x[:, 1])
        cfg = OperatorConfig(1.5, 0.2)
        x = g.interior_nodes[5]
        assert abs(residual_A(cfg, float(f.interior[5]), x, f)) < 1e-8
        inner, bnd = residual_field(cfg, f)
        assert np.abs(inner).max() < 1e-8 and np.all(bnd == 0)

    def test_scaled_defect_tends_to_laplacian(self):
        probe = quad_probe()
        g = Grid(SQUARE, 1 / 256)
        f = GridField.from_function(g, probe.value)
        x = np.array([0.5, 0.5])
        want = -gtp_laplacian(probe, x, 3)
        errs = []
        for eps in (0.2, 0.1, 0.05):
            cfg = OperatorConfig(3, eps)
            res = residual_A(cfg, float(probe.value(x[None])[0]), x, f)
            errs.append(abs(res / eps - want))
        assert errs[-1] < 0.05 * abs(want)


def test_quadrature_override_used():
    q = build_ball_quadrature(2, 4, 16)
    cfg = OperatorConfig(3, 0.1, quadrature=q)
    assert cfg.rule(2) is q

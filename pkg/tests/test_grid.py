import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from confcap.domain import make_ball, make_ellipsoid
from confcap.fem import Assembler
from confcap.grid import GridError, build_grid

from conftest import COARSE


def test_volume_matches_annulus(ellipsoid_grid):
    g = ellipsoid_grid
    exact = 4 / 3 * np.pi * g.r_out**3 - g.domain.volume()
    assert g.total_volume == pytest.approx(exact, rel=1e-3)


def test_boundary_nodes_lie_on_boundary(ellipsoid_grid):
    g = ellipsoid_grid
    assert np.allclose(g.domain.implicit(g.points[g.inner]), 0, atol=1e-12)
    r = np.linalg.norm(g.points[g.outer] - g.center, axis=1)
    assert np.allclose(r, g.r_out)


@pytest.fixture(scope="module")
def refined_pair():
    dom = make_ellipsoid((1.2, 1.0, 1.0))
    return build_grid(dom, 38.4, COARSE), build_grid(dom, 38.4, (64, 24, 48))


def test_gradient_of_linear_fields_converges(refined_pair, rng):
    # the chart is curvilinear, so linear fields are only reproduced to truncation error
    a = rng.normal(size=3)
    errs = {}
    for order in (2, 4):
        errs[order] = [np.max(np.abs(g.gradient(g.points @ a, order) - a)) / np.linalg.norm(a) for g in refined_pair]
    assert errs[2][1] < 0.01 and errs[2][0] / errs[2][1] > 3.0
    assert errs[4][1] < errs[2][1] and errs[4][0] / errs[4][1] > 8.0


def test_hessian_of_log_radius_on_ball(ball_grid):
    g = ball_grid
    x = g.points
    r = np.linalg.norm(x, axis=1)
    H, grad = g.hessian(np.log(r))
    n = x / r[:, None]
    exact = (np.eye(3) - 2 * n[:, :, None] * n[:, None, :]) / (r**2)[:, None, None]
    rel = np.linalg.norm(H - exact, axis=(1, 2)) * r**2
    assert np.median(rel) < 1e-3
    assert np.allclose(grad, n / r[:, None], atol=1e-6)


def test_stiffness_symmetric_with_zero_row_sums(ellipsoid_grid):
    K = Assembler(ellipsoid_grid).stiffness()
    assert abs(K - K.T).max() < 1e-12 * abs(K).max()
    assert np.max(np.abs(K @ np.ones(K.shape[0]))) < 1e-10 * abs(K).max()


def test_stiffness_energy_of_linear_field_converges(refined_pair, rng):
    a = rng.normal(size=3)
    errs = []
    for g in refined_pair:
        u = g.points @ a
        K = Assembler(g).stiffness()
        errs.append(abs(u @ (K @ u) / (np.dot(a, a) * g.total_volume) - 1))
    assert errs[1] < 5e-3 and errs[0] / errs[1] > 3.0


def test_shell_rule_area(ball_grid):
    g = ball_grid
    for i in (0, g.ns // 2, g.ns - 1):
        w, nrm, idx = g.shell_rule(i)
        r = np.linalg.norm(g.points[idx] - g.center, axis=-1).mean()
        assert w.sum() == pytest.approx(4 * np.pi * r**2, rel=1e-10)
        assert np.allclose(np.linalg.norm(nrm, axis=-1), 1)


def test_interpolation_of_linear_fields_converges(refined_pair, rng):
    dirs = rng.normal(size=(200, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    pts = dirs * rng.uniform(1.3, 30.0, size=(200, 1))
    pts = pts[~refined_pair[0].domain.contains(pts)]
    a = rng.normal(size=3)
    errs = [np.max(np.abs(g.interpolate(g.points @ a, pts) - pts @ a) / np.linalg.norm(pts, axis=1)) for g in refined_pair]
    assert errs[1] < 1e-3 and errs[0] / errs[1] > 6.0


@settings(max_examples=20, deadline=None)
@given(st.floats(1.0, 30.0), st.floats(0.05, 3.1), st.floats(0.0, 6.28))
def test_locate_round_trip(r, theta, phi):
    g = build_grid(make_ball(1.0).domain, 32.0, (16, 8, 16))
    p = r * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    s, th, ph = g.locate(p[None])
    x, _ = g.map_structured(s, th, ph)
    assert np.allclose(x[0], p, atol=1e-9 * r)


def test_build_grid_validation():
    dom = make_ball(1.0).domain
    with pytest.raises(GridError):
        build_grid(dom, 32.0, (8, 8, 16))
    with pytest.raises(GridError):
        build_grid(dom, 32.0, (32, 12, 26))
    with pytest.raises(GridError):
        build_grid(dom, 2.0, COARSE)


def test_dump_lists_every_node(ball_grid, tmp_path):
    path = tmp_path / "grid.txt"
    build_grid(make_ball(1.0).domain, 8.0, (16, 8, 16)).dump(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 16 * 8 * 16 + 2 * 16
    assert lines[0].startswith("node 0 0 0")


def test_log_grading_on_unit_ball():
    g = build_grid(make_ball(1.0).domain, np.e, (33, 8, 16), check_ratio=False)
    r = np.linalg.norm(g.points, axis=1)
    assert np.allclose(r, np.exp(g.s_node), rtol=1e-12)


def test_exact_potential_is_uniform_in_s():
    g = build_grid(make_ball(1.0).domain, 100.0, (17, 8, 16))
    u = np.log(np.linalg.norm(g.points, axis=1))
    assert np.allclose(u, g.s_node * np.log(100.0), atol=1e-12)


def test_positive_jacobians_on_ellipsoid(ellipsoid_grid):
    g = ellipsoid_grid
    det = np.linalg.det(g.jac[: g.n_struct])
    assert np.all(det > 0)


def test_gradient_of_constant_and_log_radius(ball_grid):
    g = ball_grid
    assert np.max(np.abs(g.gradient(np.full(g.n_nodes, 3.7)))) < 1e-12
    x = g.points
    r2 = np.sum(x * x, axis=1)
    grad = g.gradient(0.5 * np.log(r2))
    interior = ~g.boundary
    rel = np.linalg.norm(grad - x / r2[:, None], axis=1) * np.sqrt(r2)
    assert np.max(rel[interior]) < 0.01


def test_gradient_error_on_log_radius_drops_with_refinement(refined_pair):
    errs = []
    for g in refined_pair:
        x = g.points - g.center
        r2 = np.sum(x * x, axis=1)
        grad = g.gradient(0.5 * np.log(r2), order=2)
        errs.append(np.max(np.linalg.norm(grad - x / r2[:, None], axis=1) * np.sqrt(r2)))
    assert errs[0] / errs[1] >= 3.0


def test_shell_volume_and_odd_integrand():
    g = build_grid(make_ball(1.0).domain, 4.0, (32, 12, 24))
    assert g.total_volume == pytest.approx(4 / 3 * np.pi * 63, rel=5e-3)
    assert abs(g.volume_integral(g.points[:, 0])) < 1e-9 * g.total_volume


def test_capacity_integrand_on_unit_annulus():
    g = build_grid(make_ball(1.0).domain, np.e, (32, 12, 24), check_ratio=False)
    r = np.linalg.norm(g.points, axis=1)
    grad = g.gradient(np.log(r), order=4)
    assert g.volume_integral(np.linalg.norm(grad, axis=1) ** 3) == pytest.approx(4 * np.pi, rel=0.01)


def test_discrete_divergence_theorem(ellipsoid_grid):
    # V = (x^2, y, x z), div V = 3 x + 1
    g = ellipsoid_grid
    x, y, z = (g.points - g.center).T
    V = np.stack([x * x, y, x * z], axis=1)
    lhs = g.volume_integral(3 * x + 1)
    rhs = g.shell_flux(V, g.ns - 1) - g.shell_flux(V, 0)
    assert lhs == pytest.approx(rhs, rel=0.02)

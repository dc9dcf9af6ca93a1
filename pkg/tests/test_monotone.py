import numpy as np
import pytest
from hypothesis import given, strategies as st

from confcap.monotone import (
    MonotoneSample,
    MonotoneSeries,
    U_from_Q,
    build_series,
    compute_Q,
    fd_derivative,
    monotonicity_report,
    sample_levels,
    schwarzschild_model_U,
    stability_excess,
)
from confcap.domain import point_mass_factor


@given(st.floats(0.0, 6.0))
def test_model_U_gives_constant_Q(t):
    assert compute_Q(t, schwarzschild_model_U(t)) == pytest.approx(16 * np.pi, rel=1e-12)


@given(st.floats(0.0, 6.0), st.floats(-30, 30))
def test_Q_and_U_are_inverse(t, U):
    assert U_from_Q(t, compute_Q(t, U)) == pytest.approx(U, abs=1e-9 * np.exp(t))


@given(st.floats(0.0, 6.0))
def test_model_saturates_ode(t):
    h = 1e-5
    dU = (schwarzschild_model_U(t + h) - schwarzschild_model_U(t - h)) / (2 * h)
    U = schwarzschild_model_U(t)
    assert dU + U**2 / (16 * np.pi) == pytest.approx(4 * np.pi, rel=1e-7)


def test_sample_levels():
    lv = sample_levels(4.0, 24, 0.05, 0.85)
    assert len(lv) == 24 and lv[0] == 0.05 and lv[-1] == pytest.approx(3.4)


def test_fd_derivative_exact_on_quadratics():
    t = np.sort(np.random.default_rng(3).uniform(0, 3, 12))
    assert np.allclose(fd_derivative(t, 2 * t**2 - t), 4 * t - 1)


def _series(t, U, ring=None, flagged=None):
    ring = np.zeros_like(t) if ring is None else ring
    flagged = np.zeros(len(t), bool) if flagged is None else flagged
    return MonotoneSeries(
        [MonotoneSample(a, b, float(compute_Q(a, b)), 1, 1, 1, c, bool(f)) for a, b, c, f in zip(t, U, ring, flagged)]
    )


def test_report_on_model_series_passes():
    t = np.linspace(0, 3, 20)
    rep = monotonicity_report(_series(t, schwarzschild_model_U(t)))
    assert rep["Q_nondecreasing"]["pass"] and rep["U_below_model"]["pass"] and rep["ode_inequality"]["pass"]
    assert rep["Q_nondecreasing"]["max_Q_deviation"] < 1e-10


def test_report_detects_violations():
    t = np.linspace(0, 3, 20)
    rep = monotonicity_report(_series(t, schwarzschild_model_U(t) + 0.1 * 8 * np.pi * t / 3))
    assert not rep["U_below_model"]["pass"]
    assert not rep["Q_nondecreasing"]["pass"]


def test_flagged_samples_ignored():
    t = np.linspace(0, 3, 20)
    U = schwarzschild_model_U(t)
    flagged = np.zeros(20, bool)
    flagged[7] = True
    U[7] += 10.0
    assert monotonicity_report(_series(t, U, flagged=flagged))["U_below_model"]["pass"]
    with pytest.raises(ValueError):
        monotonicity_report(_series(t[:4], U[:4]))


def test_stability_excess_closed_form():
    # constant ring integral c: int_0^s (e^t + 2 + e^-t) c dt = c (e^s - e^-s + 2 s)
    t = np.linspace(0, 2, 401)
    val, low = stability_excess(_series(t, schwarzschild_model_U(t), ring=np.full_like(t, 0.3)), 2.0)
    assert val == pytest.approx(0.3 * (np.exp(2) - np.exp(-2) + 4), rel=1e-5)
    assert not low
    assert stability_excess(_series(t, t), 0.0) == (0.0, False)


def test_schwarzschild_series_end_to_end(ball_potential):
    series = build_series(ball_potential, point_mass_factor(2.0), count=12, capacity=1.0)
    assert series.samples[0].t == 0.0
    t = series.t
    U = series.column("U")
    assert np.max(np.abs(U - schwarzschild_model_U(t))) < 0.03 * 8 * np.pi
    assert np.max(np.abs(series.column("Q") - 16 * np.pi)) < 0.03 * 16 * np.pi
    assert np.allclose(series.column("hawking_mass"), 2.0, rtol=0.03)
    rep = monotonicity_report(series, m_adm=2.0, capacity=1.0)
    assert rep["asymptotic_curve"]["bound"] == pytest.approx(16 * np.pi)


def test_model_ode_closed_form_derivative():
    t = np.linspace(0, 8, 100)
    dU = 4 * np.pi / np.cosh(t / 2) ** 2
    U = schwarzschild_model_U(t)
    assert np.max(np.abs(dU + U**2 / (16 * np.pi) - 4 * np.pi)) < 1e-12


def test_model_values():
    assert schwarzschild_model_U(0.0) == 0.0
    assert schwarzschild_model_U(np.log(3.0)) == pytest.approx(4 * np.pi)
    assert schwarzschild_model_U(40.0) == pytest.approx(8 * np.pi)
    assert compute_Q(0.0, 0.0) == pytest.approx(16 * np.pi)
    assert compute_Q(10.0, schwarzschild_model_U(10.0)) == pytest.approx(16 * np.pi, rel=1e-6)


def test_asymptotic_curve_below_bound():
    t = np.linspace(0, 5, 30)
    rep = monotonicity_report(_series(t, schwarzschild_model_U(t)), m_adm=2.0, capacity=1.0)
    curve = np.array(rep["asymptotic_curve"]["value"])
    slack = rep["asymptotic_curve"]["bound"] - curve
    assert np.all(slack > 0)
    assert np.all(np.diff(slack) < 0)
    assert slack[-1] == pytest.approx(16 * np.pi / (np.exp(5) + 1))


def test_excess_zero_on_schwarzschild_and_grows_with_eccentricity():
    from confcap.grid import build_grid
    from confcap.domain import make_ellipsoid
    from confcap.solver import normalize_to_log_growth, solve_annulus
    from confcap.synthesis import synthesize_minimal_boundary_factor

    excess = []
    for a in (1.0, 1.15, 1.3):
        dom = make_ellipsoid((a, 1.0, 1.0))
        grid = build_grid(dom, 32 * a, (32, 12, 24))
        pot = normalize_to_log_growth(solve_annulus(grid))
        f = synthesize_minimal_boundary_factor(dom, grid=grid)
        series = build_series(pot, f, count=12)
        excess.append(stability_excess(series, 1.0)[0])
    assert excess[0] < 1e-3
    assert excess[0] < excess[1] < excess[2]

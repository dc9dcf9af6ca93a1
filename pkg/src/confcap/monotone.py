"""U(t), Q(t) and their comparison with the Schwarzschild model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from confcap.levelset import LevelSetError, PotentialGeometry, boundary_surface, extract_level_surface

log = logging.getLogger(__name__)

SCALE_Q = 16 * np.pi
SCALE_U = 8 * np.pi
MASKED_LIMIT = 0.05


def schwarzschild_model_U(t):
    """``8 pi (e^t - 1)/(e^t + 1)``; the same for every mass."""
    t = np.asarray(t, dtype=float)
    return SCALE_U * np.tanh(0.5 * t)


def compute_Q(t, U):
    """``8 pi (e^t + 2 - e^-t) - (e^t + 1)^2 e^-t U``."""
    t = np.asarray(t, dtype=float)
    return 8 * np.pi * (np.exp(t) + 2 - np.exp(-t)) - (np.exp(t) + 1) ** 2 * np.exp(-t) * np.asarray(U)


def U_from_Q(t, Q):
    """Inverse of :func:`compute_Q` in ``U``."""
    t = np.asarray(t, dtype=float)
    return (8 * np.pi * (np.exp(t) + 2 - np.exp(-t)) - np.asarray(Q)) / ((np.exp(t) + 1) ** 2 * np.exp(-t))


@dataclass
class MonotoneSample:
    t: float
    U: float
    Q: float
    area_euc: float
    area_g: float
    hawking_mass: float
    ring_integral: float
    flagged: bool
    gauss_bonnet: float = float("nan")
    conformal_residual: float = 0.0
    masked_fraction: float = 0.0
    euler_characteristic: int = 2
    components: int = 1
    h_asymptotic: float = float("nan")

    def row(self):
        return [self.t, self.U, self.Q, self.area_euc, self.area_g, self.hawking_mass, self.ring_integral, int(self.flagged)]


SERIES_COLUMNS = ["t", "U", "Q", "area_euc", "area_g", "hawking_mass", "ring_integral", "flagged"]


@dataclass
class MonotoneSeries:
    samples: list
    verdicts: dict = field(default_factory=dict)

    @property
    def t(self):
        return np.array([s.t for s in self.samples])

    def column(self, name):
        return np.array([getattr(s, name) for s in self.samples], dtype=float)

    @property
    def model(self):
        return schwarzschild_model_U(self.t)

    def unflagged(self):
        return [s for s in self.samples if not s.flagged]


def sample_levels(u_max: float, count: int = 24, lo: float = 0.05, hi: float = 0.85):
    """``count`` levels uniform in ``t`` on ``[lo, hi * u_max]``."""
    return np.linspace(lo, hi * u_max, count)


def level_sample(surface, capacity: float | None = None) -> MonotoneSample:
    U, resid = surface.U()
    t = surface.t
    h_asym = float("nan")
    if capacity is not None:
        # |H c e^t / 2 - 1| on the surface
        h_asym = float(np.max(np.abs(surface.H[surface.weights > 0] * capacity * np.exp(t) / 2 - 1)))
    masked = surface.masked_fraction
    return MonotoneSample(
        t=float(t),
        U=float(U),
        Q=float(compute_Q(t, U)),
        area_euc=surface.area,
        area_g=surface.area_g,
        hawking_mass=surface.hawking_mass(),
        ring_integral=surface.ring_integral(),
        flagged=bool(masked > MASKED_LIMIT),
        gauss_bonnet=surface.gauss_bonnet(),
        conformal_residual=float(resid),
        masked_fraction=masked,
        euler_characteristic=surface.euler_characteristic(),
        components=surface.component_count,
        h_asymptotic=h_asym,
    )


def build_series(pot, factor, levels=None, count: int = 24, t_range=(0.05, 0.85), capacity=None, keep_surfaces=False):
    """Sample ``t = 0`` (the boundary itself) and the requested levels."""
    geometry = PotentialGeometry(pot)
    if levels is None:
        levels = sample_levels(pot.u_max, count, *t_range)
    surfaces = [boundary_surface(pot, geometry, factor)]
    for t in levels:
        try:
            surfaces.append(extract_level_surface(pot, float(t), geometry, factor))
        except LevelSetError as exc:
            log.warning("skipping level %.4f: %s", t, exc)
    samples = [level_sample(s, capacity) for s in surfaces]
    series = MonotoneSeries(samples)
    if keep_surfaces:
        series.surfaces = surfaces
    return series


def fd_derivative(t, y):
    """Central differences on a non-uniform grid, one-sided at the ends."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 3:
        return np.gradient(y, t)
    return np.gradient(y, t, edge_order=2)


def monotonicity_report(
    series: MonotoneSeries,
    tol_Q: float = 0.03 * SCALE_Q,
    tol_U: float = 0.03 * SCALE_U,
    tol_ODE: float = 0.03 * 4 * np.pi,
    m_adm: float | None = None,
    capacity: float | None = None,
) -> dict:
    """Verdicts (a) Q nondecreasing, (b) U below the model, (c) ODE inequality, (d) asymptotic curve."""
    good = series.unflagged()
    if len(good) < 5:
        raise ValueError(f"need at least 5 unflagged samples, got {len(good)}")
    t = np.array([s.t for s in good])
    U = np.array([s.U for s in good])
    Q = np.array([s.Q for s in good])
    dQ = np.diff(Q)
    q_margin = float(np.min(dQ + tol_Q))
    u_excess = U - schwarzschild_model_U(t)
    u_margin = float(np.min(tol_U - u_excess))
    ode = fd_derivative(t, U) + U**2 / SCALE_Q - 4 * np.pi
    interior = slice(1, len(t) - 1)
    ode_margin = float(np.min(tol_ODE - ode[interior]))
    out = {
        "Q_nondecreasing": {
            "pass": q_margin >= 0,
            "margin": q_margin,
            "max_drop": float(max(0.0, -np.min(dQ))),
            "max_Q_deviation": float(np.max(np.abs(Q - SCALE_Q))),
            "tol": tol_Q,
        },
        "U_below_model": {"pass": u_margin >= 0, "margin": u_margin, "max_excess": float(np.max(u_excess)), "tol": tol_U},
        "ode_inequality": {"pass": ode_margin >= 0, "margin": ode_margin, "max_value": float(np.max(ode[interior])), "tol": tol_ODE},
    }
    curve = np.exp(t) * (SCALE_U - U)
    asym = {"t": t.tolist(), "value": curve.tolist()}
    if m_adm is not None and capacity:
        asym["bound"] = SCALE_U * m_adm / capacity
    out["asymptotic_curve"] = asym
    series.verdicts = out
    return out


def stability_excess(series: MonotoneSeries, s_max: float):
    """Trapezoid rule for ``int_0^s_max (e^tau + 1)^2 e^-tau ring(tau) dtau``.

    Returns ``(value, low_confidence)``; low confidence when unflagged samples
    leave a gap larger than half the interval.
    """
    if s_max <= 0:
        return 0.0, False
    good = [s for s in series.unflagged() if s.t <= s_max + 1e-12]
    if len(good) < 2:
        return 0.0, True
    t = np.array([s.t for s in good])
    ring = np.array([s.ring_integral for s in good])
    y = (np.exp(t) + 1) ** 2 * np.exp(-t) * ring
    value = float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))
    pts = np.concatenate([[0.0], t, [s_max]])
    low = bool(np.max(np.diff(pts)) > 0.5 * s_max)
    return value, low

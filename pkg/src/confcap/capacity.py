"""Asymptotic constant, conformal capacity and related closed forms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from confcap.fem import p_energy
from confcap.grid import build_grid
from confcap.domain import make_ball
from confcap.solver import PotentialField, SolverConfig, solve_annulus

FIT_RESIDUAL_THRESHOLD = 1e-3


@dataclass
class ShellFit:
    r_out: float
    a: float
    b: float
    residual: float
    shell_means: list
    length_scale: float = 1.0


@dataclass
class CapacityResult:
    a_hat: float
    capacity: float
    shell_fit_residual: float
    truncation_pair: tuple
    fits: list = field(default_factory=list)
    low_confidence: bool = False
    truncation_dominated: bool = False

    def as_dict(self):
        return {
            "a_hat": self.a_hat,
            "capacity": self.capacity,
            "residual": self.shell_fit_residual,
            "R_out_pair": [float(f.r_out) for f in self.fits],
            "a_per_R_out": [float(f.a) for f in self.fits],
            "low_confidence": self.low_confidence,
            "truncation_dominated": self.truncation_dominated,
        }


def fit_far_field(pot: PotentialField) -> ShellFit:
    """Weighted least squares ``u - log|x - c| = a + b/r`` on the outer third.

    The three shells nearest the truncation sphere are excluded; every node
    carries its angular quadrature weight so the fit is an area average.
    """
    grid = pot.grid
    ns = grid.ns
    shells = range(ns - ns // 3, ns - 3)
    rows, rhs, wts, means = [], [], [], []
    for i in shells:
        w, _, idx = grid.shell_rule(i)
        r = grid.radius[idx].ravel()
        y = pot.values[idx].ravel() - np.log(r)
        w = w.ravel() / np.sum(w)
        rows.append(np.stack([np.ones_like(r), 1.0 / r], axis=1))
        rhs.append(y)
        wts.append(w)
        means.append(float(np.sum(w * y)))
    A = np.concatenate(rows)
    y = np.concatenate(rhs)
    sw = np.sqrt(np.concatenate(wts))
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    resid = y - A @ coef
    rms = float(np.sqrt(np.sum(sw**2 * resid**2) / np.sum(sw**2)))
    return ShellFit(grid.r_out, float(coef[0]), float(coef[1]), rms, means, grid.domain.bounding_radius)


def richardson_log(a1: float, R1: float, a2: float, R2: float, length: float = 1.0) -> float:
    """Extrapolate ``a(R)`` linearly in ``1/log(R/length)`` to zero.

    ``length`` makes the model dimensionless; the bounding radius of the
    domain keeps the extrapolated constant covariant under scaling.
    """
    x1, x2 = 1.0 / np.log(R1 / length), 1.0 / np.log(R2 / length)
    return (a2 * x1 - a1 * x2) / (x1 - x2)


def _drifting(means, tol):
    d = np.diff(means)
    monotone = np.all(d > 0) or np.all(d < 0)
    return bool(monotone and abs(means[-1] - means[0]) > tol)


def extract_asymptotic_constant(potentials, threshold: float = FIT_RESIDUAL_THRESHOLD) -> CapacityResult:
    """Capacity from one or two normalized potentials with different ``R_out``."""
    if isinstance(potentials, PotentialField):
        potentials = [potentials]
    fits = sorted((fit_far_field(p) for p in potentials), key=lambda f: f.r_out)
    if len(fits) >= 2:
        f1, f2 = fits[0], fits[-1]
        a_hat = richardson_log(f1.a, f1.r_out, f2.a, f2.r_out, f1.length_scale)
    else:
        a_hat = fits[0].a
    residual = max(f.residual for f in fits)
    return CapacityResult(
        a_hat=float(a_hat),
        capacity=float(np.exp(-a_hat)),
        shell_fit_residual=residual,
        truncation_pair=tuple(float(f.r_out) for f in fits),
        fits=fits,
        low_confidence=residual > threshold,
        truncation_dominated=any(_drifting(f.shell_means, 5 * threshold) for f in fits),
    )


def relative_capacity(domain, R_out: float, potential: PotentialField | None = None, resolution=(64, 24, 48), config=None):
    """``int |grad w|^3`` for the capacity potential with ``w = 0`` inside, ``1`` on ``|x - c| = R_out``.

    Returns ``(value, potential)``; the value is evaluated at the terminal eps.
    """
    if potential is None:
        grid = build_grid(domain, R_out, resolution, check_ratio=False)
        potential = solve_annulus(grid, 0.0, 1.0, config or SolverConfig())
    return float(p_energy(potential.grid, potential.values)), potential


def annulus_capacity_closed_form(inner: float, outer: float) -> float:
    """``4 pi / (log outer - log inner)^2`` for concentric spheres."""
    return 4 * np.pi / (np.log(outer) - np.log(inner)) ** 2


def isocapacitary_lower_bound(volume: float) -> float:
    """Radius of the ball with the given volume, which bounds the capacity from below."""
    if not volume > 0:
        raise ValueError("volume must be positive")
    return float((3.0 * volume / (4.0 * np.pi)) ** (1.0 / 3.0))


def ball_annulus(inner: float, outer: float, resolution=(64, 24, 48), config=None):
    """Relative capacity of ``B_inner`` inside ``B_outer`` by the solver."""
    return relative_capacity(make_ball(inner).domain, outer, resolution=resolution, config=config)

"""Harmonic conformal factors that make the domain boundary minimal.

The factor solves ``Laplace f = 0`` outside the domain with the Robin
condition ``f_nu + (H/4) f = 0`` on the boundary (``nu`` pointing away from
the domain), which is exactly the statement that the boundary has zero mean
curvature in ``g = f^4 g_euc``.  At the truncation sphere the far-field
relation ``f_r = -(f - 1)/r`` is imposed, which is exact for the monopole
part of ``f - 1``.
"""

from __future__ import annotations

import numpy as np

from confcap.domain import ConformalFactor, ImplicitDomain, InvalidScenario, directions
from confcap.fem import Assembler
from confcap.grid import AnnularGrid, build_grid
from confcap.quadrature import sphere_rule
from confcap.solver import IndefiniteSystem, SolverError, pcg


class GridField:
    """A nodal field with finite-difference derivatives, evaluated by interpolation."""

    def __init__(self, grid: AnnularGrid, values, order: int = 4, laplacian=None):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        hess, grad = grid.hessian(self.values, order)
        self.grad = grad
        self.hess = hess
        if laplacian is None:
            laplacian = np.trace(hess, axis1=1, axis2=2)
        self._packed = np.concatenate(
            [self.values[:, None], grad, hess.reshape(-1, 9), np.asarray(laplacian)[:, None]], axis=1
        )

    def _evaluate(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        pts = x.reshape(-1, 3)
        g = self.grid
        d = pts - g.center
        r = np.linalg.norm(d, axis=1)
        outside = r > g.r_out
        probe = pts.copy()
        if np.any(outside):
            probe[outside] = g.center + d[outside] * (g.r_out / r[outside])[:, None]
        data = g.interpolate(self._packed, probe)
        if np.any(outside):
            # continue beyond the truncation sphere as (f(R w) - 1) R / r
            q = g.r_out / r[outside]
            om = d[outside] / r[outside, None]
            v = data[outside, 0] - 1.0
            gr = data[outside, 1:4]
            gt = gr - np.sum(gr * om, axis=1)[:, None] * om
            data[outside, 0] = 1.0 + v * q
            data[outside, 1:4] = (q * q)[:, None] * gt - (v * q * q / g.r_out)[:, None] * om
            data[outside, 4:13] *= (q**3)[:, None]
            data[outside, 13] *= q**3
        return data.reshape(shape + (14,))

    def value(self, x):
        return self._evaluate(x)[..., 0]

    def gradient(self, x):
        return self._evaluate(x)[..., 1:4]

    def hessian(self, x):
        return self._evaluate(x)[..., 4:13].reshape(np.shape(x)[:-1] + (3, 3))

    def laplacian(self, x):
        return self._evaluate(x)[..., 13]


def boundary_mean_curvature(domain: ImplicitDomain, points):
    d = np.asarray(points, dtype=float) - domain.center
    omega = d / np.linalg.norm(d, axis=-1)[..., None]
    return domain.boundary_geometry(omega)["H"]


def check_mean_convex(domain: ImplicitDomain, n_theta: int = 48) -> float:
    theta, phi, _ = sphere_rule(n_theta, 2 * n_theta)
    H = domain.mean_curvature(directions(theta, phi))
    h_min = float(np.min(H))
    if h_min <= 0:
        raise InvalidScenario(f"boundary is not mean convex (min H = {h_min:.3g}); Robin synthesis needs H > 0")
    return h_min


def discrete_laplacian(grid: AnnularGrid, K, f):
    """Finite-element Laplacian ``-(K f)_i / w_i``; boundary rows copy their ray neighbour."""
    lap = -(K @ f) / grid.weights
    ns = grid.ns
    block = grid.structured(lap)
    block[0] = block[1]
    block[-1] = block[-2]
    for pole in (grid.north, grid.south):
        lap[pole(0)] = lap[pole(1)]
        lap[pole(ns - 1)] = lap[pole(ns - 2)]
    return lap


def solve_robin_factor(grid: AnnularGrid, rtol: float = 1e-12, maxiter: int = 50000, return_laplacian=False):
    """Nodal values of the harmonic factor on an existing grid."""
    domain = grid.domain
    asm = Assembler(grid)
    K = asm.stiffness()
    inner = asm.face_mass(0, lambda p: 0.25 * boundary_mean_curvature(domain, p))
    outer = asm.face_mass(grid.ns - 1) / grid.r_out
    A = (K - inner + outer).tocsr()
    b = asm.face_load(grid.ns - 1) / grid.r_out
    try:
        f, its = pcg(A, b, A.diagonal(), rtol, maxiter)
    except IndefiniteSystem as exc:
        raise SolverError(f"Robin system is not positive definite: {exc}") from exc
    if its >= maxiter:
        raise SolverError(f"Robin solve stagnated after {its} CG iterations")
    if np.min(f) <= 0:
        raise SolverError(f"synthesized factor is not positive (min {np.min(f):.3g})")
    if return_laplacian:
        return f, discrete_laplacian(grid, K, f)
    return f


def synthesize_minimal_boundary_factor(
    domain: ImplicitDomain,
    R_out: float | None = None,
    resolution=(64, 24, 48),
    grid: AnnularGrid | None = None,
) -> ConformalFactor:
    """Harmonic factor with minimal boundary; returned as an interpolated field."""
    check_mean_convex(domain)
    if grid is None:
        R_out = 32.0 * domain.bounding_radius if R_out is None else float(R_out)
        grid = build_grid(domain, R_out, resolution)
    f, lap = solve_robin_factor(grid, return_laplacian=True)
    fld = GridField(grid, f, laplacian=lap)
    far = grid.s_node >= 0.5
    decay = float(np.max(np.abs(f[far] - 1.0) * grid.radius[far]))
    return ConformalFactor(
        value=fld.value,
        gradient=fld.gradient,
        hessian=fld.hessian,
        laplacian=fld.laplacian,
        decay_constant=decay,
        label="synthesized-minimal",
        harmonic=True,
        grid=grid,
    )

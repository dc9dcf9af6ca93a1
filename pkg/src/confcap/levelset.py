"""Level surfaces ``{u = t}`` of a potential and their geometry.

Each grid ray (fixed ``theta_j, phi_k``) and each pole column crosses the
level once; the crossing is located by cubic Lagrange interpolation in ``s``
and the nodal gradient and Hessian of ``u`` are interpolated to it with the
same weights.  The crossings form a radial graph ``x = c + R(w) w`` over
the sphere, so surface integrals use the tensor Fejer/trapezoid sphere rule
with ``da = R^2 / (w . nu) dOmega``.  A triangle mesh over the same vertices
is kept for topology checks and output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from confcap.domain import ConformalFactor, shape_operator_from_derivatives
from confcap.quadrature import fejer_weights, lagrange_weights
from confcap.solver import PotentialField

REGULARITY_FRACTION = 1e-3


class LevelSetError(ValueError):
    pass


class PotentialGeometry:
    """Nodal derivatives of a potential, computed once and reused per level."""

    def __init__(self, pot: PotentialField, order: int = 4):
        self.pot = pot
        self.grid = pot.grid
        self.order = order
        hess, grad = self.grid.hessian(pot.values, order)
        self.grad = grad
        self.hess = hess
        self._packed = np.concatenate([grad, hess.reshape(-1, 9)], axis=1)

    def mean_curvature_field(self):
        """Level-set mean curvature at nodes, two ways.

        Returns ``(H, H_identity, mask)`` where ``H = div(grad u/|grad u|)``
        by stencils and ``H_identity = -2 (grad|grad u| . grad u)/|grad u|^2``
        uses the 3-harmonic equation; ``mask`` marks nodes with
        ``|grad u|`` above the regularity threshold.
        """
        g = self.grid
        gn = np.linalg.norm(self.grad, axis=1)
        safe = np.where(gn > 0, gn, 1.0)
        nu = self.grad / safe[:, None]
        dnu = g.gradient(nu, self.order)  # (N, 3 deriv, 3 comp)
        H = np.trace(dnu, axis1=1, axis2=2)
        dgn = g.gradient(gn, self.order)
        H_id = -2.0 * np.sum(dgn * self.grad, axis=1) / safe**2
        mask = gn > REGULARITY_FRACTION * np.median(gn)
        return np.where(mask, H, np.nan), np.where(mask, H_id, np.nan), mask


@dataclass
class LevelSurface:
    t: float
    vertices: np.ndarray  # (nv, 3)
    triangles: np.ndarray  # (nf, 3)
    normal: np.ndarray
    grad_norm: np.ndarray
    H: np.ndarray
    A2: np.ndarray
    A0: np.ndarray
    K: np.ndarray
    weights: np.ndarray  # area weights per vertex (pole vertices carry 0)
    regular: np.ndarray  # per-vertex |grad u| above threshold
    component_count: int = 1
    f: np.ndarray | None = None
    f_nu: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def regularity_flag(self) -> bool:
        return bool(np.all(self.regular))

    @property
    def masked_fraction(self) -> float:
        w = self.weights
        return float(np.sum(w[~self.regular]) / np.sum(w))

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * values))

    @property
    def area(self) -> float:
        return float(np.sum(self.weights))

    def gauss_bonnet(self) -> float:
        return self.integrate(self.K)

    # -- mesh topology ---------------------------------------------------------

    def edges(self):
        tri = self.triangles
        e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq, counts

    def boundary_edge_count(self) -> int:
        _, counts = self.edges()
        return int(np.sum(counts == 1))

    def euler_characteristic(self) -> int:
        uniq, _ = self.edges()
        return int(len(self.vertices) - len(uniq) + len(self.triangles))

    def mesh_area(self) -> float:
        v = self.vertices[self.triangles]
        return float(0.5 * np.sum(np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)))

    # -- g-metric --------------------------------------------------------------

    def with_factor(self, factor: ConformalFactor) -> "LevelSurface":
        f = np.asarray(factor.value(self.vertices), dtype=float)
        if np.min(f) <= 0:
            raise LevelSetError("conformal factor is not positive on the surface")
        f_nu = np.sum(factor.gradient(self.vertices) * self.normal, axis=1)
        out = LevelSurface(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.f, out.f_nu = f, f_nu
        out.extras = dict(self.extras)
        return out

    def g_quantities(self):
        """Per-vertex ``da_g`` weights, ``H_g`` and ``|grad^g u|``."""
        if self.f is None:
            raise LevelSetError("attach a conformal factor first")
        f = self.f
        Hg = (self.H + 4.0 * self.f_nu / f) / f**2
        return self.weights * f**4, Hg, self.grad_norm / f**2

    @property
    def area_g(self) -> float:
        return float(np.sum(self.g_quantities()[0]))

    def ring_integral(self) -> float:
        """``int |A0_g|^2 da_g``, equal to the Euclidean ``int |A0|^2 da``."""
        if self.f is None:
            return self.integrate(self.A0)
        w, _, _ = self.g_quantities()
        return float(np.sum(w * self.A0 / self.f**4))

    def hawking_mass(self) -> float:
        w, Hg, _ = self.g_quantities()
        area = np.sum(w)
        return float(np.sqrt(area / (16 * np.pi)) * (1.0 - np.sum(w * Hg**2) / (16 * np.pi)))

    def U(self):
        """``(U, |route_i - route_ii|)``; the second route is the Euclidean form."""
        w, Hg, gg = self.g_quantities()
        u1 = float(np.sum(w * Hg * gg))
        u2 = self.integrate((self.H + 4.0 * self.f_nu / self.f) * self.grad_norm)
        return u1, abs(u1 - u2)

    def write_off(self, path):
        """OFF mesh followed by per-vertex columns ``H K A0 grad_norm``."""
        with open(path, "w") as fh:
            fh.write("OFF\n")
            fh.write(f"{len(self.vertices)} {len(self.triangles)} 0\n")
            for (x, y, z), h, k, a0, gn in zip(self.vertices, self.H, self.K, self.A0, self.grad_norm):
                fh.write(f"{x:.12g} {y:.12g} {z:.12g} {h:.12g} {k:.12g} {a0:.12g} {gn:.12g}\n")
            for a, b, c in self.triangles:
                fh.write(f"3 {a} {b} {c}\n")


# ---------------------------------------------------------------------------


def ray_triangles(nt: int, nph: int):
    """Triangles over ray vertices ``j*nph + k`` plus poles ``nt*nph`` and ``nt*nph + 1``."""
    j, k = np.meshgrid(np.arange(nt - 1), np.arange(nph), indexing="ij")
    j, k = j.ravel(), k.ravel()
    k1 = (k + 1) % nph
    a, b = j * nph + k, j * nph + k1
    c, d = (j + 1) * nph + k1, (j + 1) * nph + k
    quads = np.concatenate([np.stack([a, d, c], 1), np.stack([a, c, b], 1)])
    kk = np.arange(nph)
    north = np.stack([np.full(nph, nt * nph), kk, (kk + 1) % nph], 1)
    last = (nt - 1) * nph
    south = np.stack([np.full(nph, nt * nph + 1), last + (kk + 1) % nph, last + kk], 1)
    return np.concatenate([quads, north, south])


def sphere_weights(nt: int, nph: int):
    w = np.outer(fejer_weights(nt), np.full(nph, 2 * np.pi / nph))
    return w.ravel()


def _columns(grid):
    """Node index arrays ``(n_rays, ns)`` for the structured rays and the two poles."""
    ns, nt, nph = grid.shape
    i = np.arange(ns)
    rays = grid.index(i[None, None, :], np.arange(nt)[:, None, None], np.arange(nph)[None, :, None]).reshape(-1, ns)
    poles = np.stack([grid.north(i), grid.south(i)])
    return np.concatenate([rays, poles])


def _crossings(u_cols, t, ds):
    """``(i0, sigma)``: 4-point stencil start and local coordinate of ``u = t`` per column."""
    n, ns = u_cols.shape
    above = u_cols > t
    change = np.diff(above.astype(int), axis=1)
    count = np.sum(change != 0, axis=1)
    if np.any(count == 0):
        raise LevelSetError(f"level t={t:g} does not cross every ray (outside the computed range)")
    if np.any(count > 1) or np.any(change < 0):
        raise LevelSetError(f"level t={t:g} is not a radial graph (multiple crossings along a ray)")
    i = np.argmax(change > 0, axis=1)  # u[i] <= t < u[i+1]
    i0 = np.clip(i - 1, 0, ns - 4)
    rows = np.arange(n)
    stencil = u_cols[rows[:, None], i0[:, None] + np.arange(4)[None, :]]
    lo = (i - i0).astype(float)
    hi = lo + 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        val = np.sum(lagrange_weights(mid) * stencil, axis=1)
        go_up = val <= t
        lo = np.where(go_up, mid, lo)
        hi = np.where(go_up, hi, mid)
    return i0, 0.5 * (lo + hi)


def _surface_from_data(t, grid, x, grad, hess, normal_override=None, geometry_override=None):
    ns, nt, nph = grid.shape
    if geometry_override is None:
        geo = shape_operator_from_derivatives(grad, hess)
    else:
        geo = dict(geometry_override)
        geo["grad_norm"] = np.linalg.norm(grad, axis=1)
    nu = geo["normal"] if normal_override is None else normal_override
    gn = geo["grad_norm"]
    d = x - grid.center
    R = np.linalg.norm(d, axis=1)
    omega = d / R[:, None]
    nr = nt * nph
    cosang = np.sum(omega[:nr] * nu[:nr], axis=1)
    if np.any(cosang <= 0):
        raise LevelSetError(f"level t={t:g}: normal not transversal to rays")
    w = np.zeros(len(x))
    w[:nr] = sphere_weights(nt, nph) * R[:nr] ** 2 / cosang
    regular = gn > REGULARITY_FRACTION * np.median(gn)
    return LevelSurface(
        t=float(t),
        vertices=x,
        triangles=ray_triangles(nt, nph),
        normal=nu,
        grad_norm=gn,
        H=geo["H"],
        A2=geo["A2"],
        A0=geo["A0"],
        K=geo["K"],
        weights=w,
        regular=regular,
    )


def extract_level_surface(pot: PotentialField, t: float, geometry: PotentialGeometry | None = None, factor=None):
    """Level surface ``{u = t}`` for ``0 < t < max u``."""
    grid = pot.grid
    if not 0 < t < pot.u_max:
        raise LevelSetError(f"level t={t:g} outside (0, {pot.u_max:g})")
    geometry = geometry or PotentialGeometry(pot)
    cols = _columns(grid)
    i0, sigma = _crossings(pot.values[cols], t, grid.ds)
    if np.any(i0 + sigma > grid.ns - 1.5):
        raise LevelSetError(f"level t={t:g} touches the truncation sphere")
    wl = lagrange_weights(sigma)  # (n, 4)
    rows = np.arange(len(cols))
    idx = cols[rows[:, None], i0[:, None] + np.arange(4)[None, :]]
    data = np.einsum("na,nac->nc", wl, geometry._packed[idx])
    grad, hess = data[:, :3], data[:, 3:].reshape(-1, 3, 3)
    s_star = (i0 + sigma) * grid.ds
    ns, nt, nph = grid.shape
    nr = nt * nph
    th = np.repeat(grid.theta, nph)
    ph = np.tile(grid.phi, nt)
    x = np.empty((len(cols), 3))
    x[:nr], _ = grid.map_structured(s_star[:nr], th, ph)
    for p, sign in ((0, 1.0), (1, -1.0)):
        x[nr + p], _ = grid.map_polar(s_star[nr + p], 0.0, 0.0, sign)
    surf = _surface_from_data(t, grid, x, grad, 0.5 * (hess + hess.transpose(0, 2, 1)))
    surf.extras["s"] = s_star
    return surf.with_factor(factor) if factor is not None else surf


def boundary_surface(pot: PotentialField, geometry: PotentialGeometry | None = None, factor=None):
    """The ``t = 0`` surface: domain boundary with analytic curvature and grid ``|grad u|``."""
    grid = pot.grid
    geometry = geometry or PotentialGeometry(pot)
    ns, nt, nph = grid.shape
    cols = _columns(grid)
    nodes = cols[:, 0]
    x = grid.points[nodes]
    d = x - grid.center
    omega = d / np.linalg.norm(d, axis=1)[:, None]
    geo = grid.domain.boundary_geometry(omega)
    nu = geo["normal"]
    gn = np.abs(np.sum(geometry.grad[nodes] * nu, axis=1))
    grad = gn[:, None] * nu
    surf = _surface_from_data(0.0, grid, x, grad, None, geometry_override=geo)
    surf.extras["s"] = np.zeros(len(x))
    return surf.with_factor(factor) if factor is not None else surf

"""Domains, conformal factors and scenarios.

A domain is a star-shaped region described by a radial graph about a star
center.  A conformal factor ``f`` defines the metric ``g = f**4 g_euc`` on the
exterior.  A scenario bundles the two, optionally with a closed-form reference
solution used as an oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import sph_harm_y

from confcap.quadrature import sphere_rule


class InvalidScenario(ValueError):
    """Raised when a domain, factor or scenario file is not well formed."""


# ---------------------------------------------------------------------------
# direction helpers


def directions(theta, phi):
    theta, phi = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(phi, dtype=float))
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def angles(omega):
    omega = np.asarray(omega, dtype=float)
    theta = np.arccos(np.clip(omega[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(omega[..., 1], omega[..., 0]), 2 * np.pi)
    return theta, phi


# ---------------------------------------------------------------------------
# radial graphs: callables mapping unit directions (..., 3) to radii (...)


class RadialGraph:
    """Boundary radius as a function of direction."""

    analytic = True

    def __call__(self, omega):
        raise NotImplementedError

    def angular_derivatives(self, theta, phi, h=1e-5):
        """Return (rho, d rho/d theta, d rho/d phi) by central differences."""
        rho = self(directions(theta, phi))
        d_th = (self(directions(theta + h, phi)) - self(directions(theta - h, phi))) / (2 * h)
        d_ph = (self(directions(theta, phi + h)) - self(directions(theta, phi - h))) / (2 * h)
        return rho, d_th, d_ph

    def scaled(self, factor: float) -> "RadialGraph":
        return ScaledGraph(self, factor)


@dataclass(frozen=True)
class ConstantRadius(RadialGraph):
    radius: float

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        return np.full(omega.shape[:-1], float(self.radius))

    def angular_derivatives(self, theta, phi, h=1e-5):
        shape = np.broadcast(np.asarray(theta), np.asarray(phi)).shape
        return np.full(shape, float(self.radius)), np.zeros(shape), np.zeros(shape)

    def scaled(self, factor):
        return ConstantRadius(self.radius * factor)


@dataclass(frozen=True)
class EllipsoidRadius(RadialGraph):
    """Axis-aligned ellipsoid ``sum (x_i/a_i)^2 = 1`` seen from its center."""

    axes: tuple[float, float, float]

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        inv = 1.0 / np.asarray(self.axes, dtype=float) ** 2
        return 1.0 / np.sqrt(np.sum(omega**2 * inv, axis=-1))

    def scaled(self, factor):
        return EllipsoidRadius(tuple(float(a) * factor for a in self.axes))


def real_sph_harm(l: int, m: int, theta, phi):
    """Orthonormal real spherical harmonic."""
    if m == 0:
        return np.real(sph_harm_y(l, 0, theta, phi))
    y = sph_harm_y(l, abs(m), theta, phi)
    if m > 0:
        return math.sqrt(2.0) * np.real(y)
    return math.sqrt(2.0) * np.imag(y)


def sh_index(l_max: int):
    return [(l, m) for l in range(l_max + 1) for m in range(-l, l + 1)]


@dataclass(frozen=True)
class SphericalHarmonicRadius(RadialGraph):
    """``rho(omega) = sum_lm c_lm Y_lm(omega)`` with orthonormal real harmonics.

    Coefficients are ordered ``(0,0), (1,-1), (1,0), (1,1), (2,-2), ...``.
    """

    l_max: int
    coeffs: tuple[float, ...]

    def __post_init__(self):
        if len(self.coeffs) != (self.l_max + 1) ** 2:
            raise InvalidScenario(
                f"l_max={self.l_max} needs {(self.l_max + 1) ** 2} coefficients, got {len(self.coeffs)}"
            )

    def __call__(self, omega):
        theta, phi = angles(omega)
        out = np.zeros(np.shape(theta))
        for c, (l, m) in zip(self.coeffs, sh_index(self.l_max)):
            if c != 0.0:
                out = out + c * real_sph_harm(l, m, theta, phi)
        return out

    def scaled(self, factor):
        return SphericalHarmonicRadius(self.l_max, tuple(c * factor for c in self.coeffs))

    @classmethod
    def perturbed_sphere(cls, radius: float, terms: dict[tuple[int, int], float]):
        l_max = max([0] + [l for l, _ in terms])
        coeffs = [0.0] * (l_max + 1) ** 2
        coeffs[0] = radius * math.sqrt(4 * math.pi)
        for idx, (l, m) in enumerate(sh_index(l_max)):
            coeffs[idx] += terms.get((l, m), 0.0)
        return cls(l_max, tuple(coeffs))

    @classmethod
    def fit(cls, graph: Callable, l_max: int, n_theta: int = 48):
        """Least-squares projection of samples of ``graph`` onto harmonics."""
        theta, phi, w = sphere_rule(n_theta, 2 * n_theta)
        rho = graph(directions(theta, phi))
        coeffs = [
            float(np.sum(w * rho * real_sph_harm(l, m, theta, phi))) for l, m in sh_index(l_max)
        ]
        return cls(l_max, tuple(coeffs))


@dataclass(frozen=True)
class ScaledGraph(RadialGraph):
    base: RadialGraph
    factor: float

    def __call__(self, omega):
        return self.factor * self.base(omega)


@dataclass(frozen=True)
class FunctionGraph(RadialGraph):
    func: Callable

    def __call__(self, omega):
        return np.asarray(self.func(np.asarray(omega, dtype=float)), dtype=float)


# ---------------------------------------------------------------------------
# domains


def implicit_shape_operator(func: Callable, points, h: float):
    """Normal and curvature data of the level set ``func = func(points)``.

    Uses central differences of ``func`` with step ``h``.  Returns a dict with
    the unit normal (direction of increasing ``func``), mean curvature ``H``,
    ``|A|^2``, traceless ``|A0|^2`` and Gauss curvature ``K``.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    n = x.shape[0]
    eye = np.eye(3) * h
    f0 = func(x)
    grad = np.empty((n, 3))
    hess = np.empty((n, 3, 3))
    fp = [func(x + eye[a]) for a in range(3)]
    fm = [func(x - eye[a]) for a in range(3)]
    for a in range(3):
        grad[:, a] = (fp[a] - fm[a]) / (2 * h)
        hess[:, a, a] = (fp[a] - 2 * f0 + fm[a]) / h**2
    for a in range(3):
        for b in range(a + 1, 3):
            fpp = func(x + eye[a] + eye[b])
            fpm = func(x + eye[a] - eye[b])
            fmp = func(x - eye[a] + eye[b])
            fmm = func(x - eye[a] - eye[b])
            hess[:, a, b] = hess[:, b, a] = (fpp - fpm - fmp + fmm) / (4 * h**2)
    return shape_operator_from_derivatives(grad, hess)


def shape_operator_from_derivatives(grad, hess):
    """Curvatures of level sets from the gradient and Hessian of the level function."""
    gnorm = np.linalg.norm(grad, axis=-1)
    nu = grad / gnorm[..., None]
    proj = np.eye(3) - nu[..., :, None] * nu[..., None, :]
    shape = proj @ hess @ proj / gnorm[..., None, None]
    H = np.trace(shape, axis1=-2, axis2=-1)
    A2 = np.sum(shape**2, axis=(-2, -1))
    traceless = shape - 0.5 * H[..., None, None] * proj
    A0 = np.sum(traceless**2, axis=(-2, -1))
    K = 0.5 * (H**2 - A2)
    return {"normal": nu, "grad_norm": gnorm, "H": H, "A2": A2, "A0": A0, "K": K}


@dataclass(frozen=True)
class ImplicitDomain:
    """Star-shaped bounded region ``{c + r w : r < rho(w)}``."""

    radial_graph: RadialGraph
    star_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bounding_radius: float = 1.0
    smoothness_budget: int = 2

    @property
    def center(self):
        return np.asarray(self.star_center, dtype=float)

    def rho(self, omega):
        return self.radial_graph(omega)

    def implicit(self, x):
        """Negative inside, zero on the boundary, positive outside."""
        d = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(d, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        omega = d / safe[..., None]
        omega = np.where((r > 0)[..., None], omega, np.array([0.0, 0.0, 1.0]))
        return r - self.rho(omega)

    def contains(self, x):
        return self.implicit(x) < 0

    def boundary_points(self, omega):
        omega = np.asarray(omega, dtype=float)
        return self.center + self.rho(omega)[..., None] * omega

    def boundary_geometry(self, omega):
        """Euclidean curvature data of the boundary at the given directions."""
        pts = self.boundary_points(omega)
        h = 1e-4 * self.bounding_radius
        geo = implicit_shape_operator(self.implicit, pts.reshape(-1, 3), h)
        shape = np.shape(omega)[:-1]
        out = {k: v.reshape(shape + v.shape[1:]) for k, v in geo.items()}
        out["points"] = pts
        return out

    def mean_curvature(self, omega):
        return self.boundary_geometry(omega)["H"]

    def volume(self, n_theta: int = 64):
        theta, phi, w = sphere_rule(n_theta, 2 * n_theta)
        rho = self.rho(directions(theta, phi))
        return float(np.sum(w * rho**3) / 3.0)

    def translated(self, shift) -> "ImplicitDomain":
        c = self.center + np.asarray(shift, dtype=float)
        return ImplicitDomain(self.radial_graph, tuple(c), self.bounding_radius, self.smoothness_budget)

    def scaled(self, factor: float) -> "ImplicitDomain":
        return ImplicitDomain(
            self.radial_graph.scaled(factor),
            tuple(self.center * factor),
            self.bounding_radius * factor,
            self.smoothness_budget,
        )


def make_star_domain(radial_graph, center=(0.0, 0.0, 0.0), n_check: int = 48) -> ImplicitDomain:
    """Validate a radial graph and wrap it as a domain."""
    if not isinstance(radial_graph, RadialGraph):
        radial_graph = FunctionGraph(radial_graph)
    theta, phi, _ = sphere_rule(n_check, 2 * n_check)
    rho = radial_graph(directions(theta, phi))
    if not np.all(np.isfinite(rho)) or np.min(rho) <= 0:
        raise InvalidScenario(f"radial graph must be strictly positive (min sample {np.min(rho):.3g})")
    center = tuple(float(c) for c in np.broadcast_to(np.asarray(center, dtype=float), (3,)))
    smooth = 1000 if radial_graph.analytic else 2
    return ImplicitDomain(radial_graph, center, float(np.max(rho)) * 1.0 + 0.0, smooth)


def make_ellipsoid(axes, center=(0.0, 0.0, 0.0)) -> ImplicitDomain:
    axes = tuple(float(a) for a in axes)
    if min(axes) <= 0:
        raise InvalidScenario("ellipsoid semi-axes must be positive")
    return ImplicitDomain(EllipsoidRadius(axes), tuple(float(c) for c in center), max(axes), 1000)


# ---------------------------------------------------------------------------
# conformal factors


Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ConformalFactor:
    """Positive function ``f`` with ``f -> 1`` at infinity; ``g = f^4 g_euc``.

    ``value``, ``gradient``, ``hessian`` and ``laplacian`` take points of
    shape ``(n, 3)``.
    """

    value: Field
    gradient: Field
    hessian: Field
    laplacian: Field
    decay_constant: float
    label: str = "factor"
    harmonic: bool = False
    grid: object = None

    def normal_derivative(self, points, normals):
        return np.sum(self.gradient(points) * normals, axis=-1)

    def scaled_by(self, c: float) -> "ConformalFactor":
        """Multiply the factor by a constant (breaks ``f -> 1`` unless c == 1)."""
        return ConformalFactor(
            value=lambda x: c * self.value(x),
            gradient=lambda x: c * self.gradient(x),
            hessian=lambda x: c * self.hessian(x),
            laplacian=lambda x: c * self.laplacian(x),
            decay_constant=self.decay_constant,
            label=f"{c:g}*{self.label}",
            harmonic=self.harmonic,
        )


def constant_factor(c: float = 1.0) -> ConformalFactor:
    if c <= 0:
        raise InvalidScenario("conformal factor must be positive")

    def value(x):
        return np.full(np.shape(x)[:-1], float(c))

    return ConformalFactor(
        value=value,
        gradient=lambda x: np.zeros(np.shape(x)),
        hessian=lambda x: np.zeros(np.shape(x)[:-1] + (3, 3)),
        laplacian=lambda x: np.zeros(np.shape(x)[:-1]),
        decay_constant=0.0 if c == 1.0 else math.inf,
        label=f"constant({c:g})",
        harmonic=True,
    )


def point_mass_factor(m: float, center=(0.0, 0.0, 0.0)) -> ConformalFactor:
    """``f = 1 + m / (2 |x - center|)``."""
    c = np.asarray(center, dtype=float)
    k = 0.5 * m

    def value(x):
        return 1.0 + k / np.linalg.norm(np.asarray(x) - c, axis=-1)

    def gradient(x):
        d = np.asarray(x) - c
        r = np.linalg.norm(d, axis=-1)
        return -k * d / r[..., None] ** 3

    def hessian(x):
        d = np.asarray(x) - c
        r = np.linalg.norm(d, axis=-1)[..., None, None]
        outer = d[..., :, None] * d[..., None, :]
        return k * (3 * outer / r**5 - np.eye(3) / r**3)

    return ConformalFactor(
        value=value,
        gradient=gradient,
        hessian=hessian,
        laplacian=lambda x: np.zeros(np.shape(x)[:-1]),
        decay_constant=k,
        label=f"schwarzschild(m={m:g})",
        harmonic=True,
    )


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class AnalyticReference:
    potential: Callable
    capacity: float
    m_adm: float | None = None


@dataclass(frozen=True)
class MetricScenario:
    domain: ImplicitDomain
    factor: ConformalFactor | None
    label: str
    analytic_reference: AnalyticReference | None = None
    synthesize_factor: bool = False
    extras: dict = field(default_factory=dict)

    def translated(self, shift) -> "MetricScenario":
        shift = np.asarray(shift, dtype=float)
        factor = self.factor
        if factor is not None and factor.grid is None:
            f0 = factor
            factor = ConformalFactor(
                value=lambda x: f0.value(np.asarray(x) - shift),
                gradient=lambda x: f0.gradient(np.asarray(x) - shift),
                hessian=lambda x: f0.hessian(np.asarray(x) - shift),
                laplacian=lambda x: f0.laplacian(np.asarray(x) - shift),
                decay_constant=f0.decay_constant,
                label=f0.label,
                harmonic=f0.harmonic,
            )
        ref = self.analytic_reference
        if ref is not None:
            p0 = ref.potential
            ref = AnalyticReference(lambda x: p0(np.asarray(x) - shift), ref.capacity, ref.m_adm)
        return MetricScenario(
            self.domain.translated(shift), factor, self.label, ref, self.synthesize_factor, dict(self.extras)
        )


def _log_potential(radius: float, center):
    c = np.asarray(center, dtype=float)
    return lambda x: np.log(np.linalg.norm(np.asarray(x) - c, axis=-1) / radius)


def make_ball(R: float, center=(0.0, 0.0, 0.0)) -> MetricScenario:
    """Ball of radius R with the flat factor; exact potential ``log(r/R)``."""
    if not R > 0:
        raise InvalidScenario(f"ball radius must be positive, got {R}")
    center = tuple(float(c) for c in center)
    domain = ImplicitDomain(ConstantRadius(float(R)), center, float(R), 1000)
    ref = AnalyticReference(_log_potential(R, center), float(R), 0.0)
    return MetricScenario(domain, constant_factor(1.0), f"ball(R={R:g})", ref)


def make_schwarzschild(m: float, center=(0.0, 0.0, 0.0)) -> MetricScenario:
    """Exterior of ``B_{m/2}`` with ``f = 1 + m/2r``; horizon is minimal."""
    if not m > 0:
        raise InvalidScenario(f"mass must be positive, got {m}")
    center = tuple(float(c) for c in center)
    R = 0.5 * m
    domain = ImplicitDomain(ConstantRadius(R), center, R, 1000)
    ref = AnalyticReference(_log_potential(R, center), R, float(m))
    return MetricScenario(domain, point_mass_factor(m, center), f"schwarzschild(m={m:g})", ref)


# ---------------------------------------------------------------------------
# admissibility


@dataclass
class AdmissibilityReport:
    max_laplacian: float
    laplacian_tol: float
    superharmonic: bool
    decay_slopes: dict
    decay_constants: dict
    decays: bool
    positive: bool
    max_boundary_Hg: float
    relative_boundary_Hg: float
    minimal: bool
    minimal_tol: float
    notes: list = field(default_factory=list)

    @property
    def admissible(self) -> bool:
        return self.superharmonic and self.decays and self.positive and self.minimal

    def as_dict(self):
        return {
            "max_laplacian": self.max_laplacian,
            "superharmonic": self.superharmonic,
            "decay_slopes": self.decay_slopes,
            "decay_constants": self.decay_constants,
            "decays": self.decays,
            "positive": self.positive,
            "max_boundary_Hg": self.max_boundary_Hg,
            "relative_boundary_Hg": self.relative_boundary_Hg,
            "minimal": self.minimal,
            "admissible": self.admissible,
            "notes": list(self.notes),
        }


def boundary_mean_curvature_g(domain: ImplicitDomain, factor: ConformalFactor, n_theta: int = 24):
    """g-mean curvature ``f^-2 (H + 4 f_nu / f)`` sampled on the boundary."""
    theta, phi, _ = sphere_rule(n_theta, 2 * n_theta)
    omega = directions(theta, phi).reshape(-1, 3)
    geo = domain.boundary_geometry(omega)
    pts = geo["points"]
    f = factor.value(pts)
    f_nu = np.sum(factor.gradient(pts) * geo["normal"], axis=-1)
    Hg = (geo["H"] + 4.0 * f_nu / f) / f**2
    return Hg, geo["H"]


def check_admissibility(
    scenario: MetricScenario,
    n_theta: int = 24,
    far_radii=None,
    laplacian_tol: float = 1e-6,
    minimal_tol: float = 0.02,
    slope_slack: float = 0.25,
) -> AdmissibilityReport:
    """Sample the class conditions: superharmonic f, decay rates, minimal boundary.

    Decay is judged from log-log slopes of ``|f-1|``, ``|grad f|`` and
    ``|hess f|`` over far shells, which must be at most ``-1, -2, -3`` plus
    ``slope_slack``.  The minimality verdict compares ``max |H_g|`` against
    ``minimal_tol * max H`` on the boundary.
    """
    domain, factor = scenario.domain, scenario.factor
    notes = []
    if factor is None:
        raise InvalidScenario("scenario has no conformal factor to check")
    R0 = domain.bounding_radius
    c = domain.center
    grid = factor.grid
    if far_radii is None:
        if grid is not None:
            r_max = 0.95 * grid.r_out
            far_radii = r_max * np.array([1 / 8, 1 / 4, 1 / 2, 1.0])
        else:
            far_radii = R0 * np.array([8.0, 32.0, 128.0, 512.0])
    theta, phi, _ = sphere_rule(n_theta, 2 * n_theta)
    omega = directions(theta, phi).reshape(-1, 3)

    # near field: sample the exterior between the boundary and the first far shell
    rho = domain.rho(omega)
    fractions = np.linspace(0.0, 1.0, 9)[1:]
    near = []
    for q in fractions:
        r = rho * (far_radii[0] / rho) ** q
        near.append(c + r[:, None] * omega)
    near = np.concatenate(near)
    lap = factor.laplacian(near)
    hess_scale = np.linalg.norm(factor.hessian(near), axis=(-2, -1))
    tol = laplacian_tol + 1e-2 * float(np.max(hess_scale)) if grid is not None else laplacian_tol
    max_lap = float(np.max(lap))
    superharmonic = max_lap <= tol
    positive = bool(np.min(factor.value(near)) > 0)

    mags = {"value": [], "gradient": [], "hessian": []}
    for r in far_radii:
        pts = c + r * omega
        mags["value"].append(float(np.max(np.abs(factor.value(pts) - 1.0))))
        mags["gradient"].append(float(np.max(np.linalg.norm(factor.gradient(pts), axis=-1))))
        mags["hessian"].append(float(np.max(np.linalg.norm(factor.hessian(pts), axis=(-2, -1)))))
    slopes, consts = {}, {}
    decays = True
    logr = np.log(far_radii)
    for (name, vals), power in zip(mags.items(), (1, 2, 3)):
        vals = np.asarray(vals)
        consts[name] = float(np.max(vals * far_radii**power))
        if np.max(vals) < 1e-13:
            slopes[name] = -math.inf
            continue
        slope = float(np.polyfit(logr, np.log(np.maximum(vals, 1e-300)), 1)[0])
        slopes[name] = slope
        if slope > -power + slope_slack:
            decays = False
            notes.append(f"{name} of f decays like r^{slope:.2f}, need r^-{power}")

    Hg, H = boundary_mean_curvature_g(domain, factor, n_theta)
    max_Hg = float(np.max(np.abs(Hg)))
    rel = max_Hg / float(np.max(np.abs(H)))
    minimal = rel <= minimal_tol
    if not minimal:
        notes.append(f"boundary not g-minimal: max|H_g|/max|H| = {rel:.3g}")
    if not superharmonic:
        notes.append(f"scalar curvature negative somewhere: max laplacian {max_lap:.3g}")
    return AdmissibilityReport(
        max_laplacian=max_lap,
        laplacian_tol=tol,
        superharmonic=superharmonic,
        decay_slopes=slopes,
        decay_constants=consts,
        decays=decays,
        positive=positive,
        max_boundary_Hg=max_Hg,
        relative_boundary_Hg=rel,
        minimal=minimal,
        minimal_tol=minimal_tol,
        notes=notes,
    )

"""Regularized 3-harmonic solver on the truncated exterior.

The discrete problem is the finite-element minimization of
``(1/3) int (|grad u|^2 + eps^2)^(3/2)`` with ``u = 0`` on the inner surface
and ``u = V`` on the truncation sphere.  Each Picard step freezes
``sigma = sqrt(|grad u|^2 + eps^2)``, solves the linear problem
``div(sigma grad w) = 0`` by preconditioned conjugate gradients and moves
towards ``w`` with an energy-decreasing relaxation factor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from confcap.fem import Assembler, GaussGradients, LineEnergy, regularized_energy
from confcap.grid import AnnularGrid

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Picard iteration failed to reach the requested residual."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class IndefiniteSystem(SolverError):
    """A frozen-coefficient matrix produced a non-positive curvature direction."""


@dataclass
class SolverConfig:
    eps_schedule: list | None = None
    picard_tol: float = 1e-8
    max_picard: int = 200
    linear_tol_factor: float = 0.1
    damping: float = 0.7
    # automatic continuation, used when ``eps_schedule`` is None
    eps_factor: float = 0.25
    terminal_eps_factor: float = 0.5
    stage_tol: float = 1e-3
    stage_max: int = 10
    max_linear: int = 20000
    line_search: bool = True

    def __post_init__(self):
        if self.eps_schedule is not None:
            sched = [float(e) for e in self.eps_schedule]
            if not sched or any(e <= 0 for e in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
                raise ValueError("eps_schedule must be positive and strictly decreasing")
            self.eps_schedule = sched
        for name in ("picard_tol", "linear_tol_factor", "stage_tol", "eps_factor", "terminal_eps_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_picard < 1:
            raise ValueError("max_picard must be at least 1")

    @classmethod
    def from_dict(cls, data: dict | None) -> "SolverConfig":
        data = dict(data or {})
        known = {k: data.pop(k) for k in list(data) if k in cls.__dataclass_fields__}
        if data:
            raise ValueError(f"unknown solver options {sorted(data)}")
        return cls(**known)

    def as_dict(self):
        return asdict(self)


@dataclass
class PotentialField:
    grid: AnnularGrid
    values: np.ndarray
    epsilon: float
    outer_value: float
    residual_norm: float
    iterations: int
    converged: bool = True
    normalization: float = 1.0
    flux_table: list = field(default_factory=list)
    history: list = field(default_factory=list)
    energy_history: list = field(default_factory=list)

    @property
    def u_max(self) -> float:
        return float(self.values[self.grid.outer].mean())

    def scaled(self, lam: float) -> "PotentialField":
        return PotentialField(
            grid=self.grid,
            values=lam * self.values,
            epsilon=lam * self.epsilon,
            outer_value=lam * self.outer_value,
            residual_norm=self.residual_norm,
            iterations=self.iterations,
            converged=self.converged,
            normalization=self.normalization * lam,
            flux_table=[(s, r, lam * lam * q) for s, r, q in self.flux_table],
            history=self.history,
            energy_history=self.energy_history,
        )


def pcg(A, b, diag, rtol: float, maxiter: int, x0=None):
    """Jacobi-preconditioned conjugate gradients; stops at ``|r| <= rtol |b|``."""
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x if x0 is not None else b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0
    inv = 1.0 / diag
    z = inv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0:
            raise IndefiniteSystem(f"non-positive curvature p.Ap={pAp:.3e} at CG iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, it
        z = inv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter


class _Problem:
    """Dirichlet bookkeeping shared by all Picard steps of a solve."""

    def __init__(self, grid: AnnularGrid, outer_value: float):
        self.grid = grid
        self.asm = Assembler(grid)
        self.free = np.flatnonzero(~grid.boundary)
        self.fixed = np.flatnonzero(grid.boundary)
        self.outer_value = outer_value

    def sigma(self, u, eps):
        h, w = GaussGradients(self.grid, u).dot(GaussGradients(self.grid, u))
        return np.sqrt(h + eps * eps), np.sqrt(w + eps * eps)

    def residual(self, K, u):
        R = K @ u
        rf = np.linalg.norm(R[self.free])
        rd = np.linalg.norm(R[self.fixed])
        return R, rf / rd if rd > 0 else np.inf


def initial_guess(grid: AnnularGrid, outer_value: float):
    """Linear in the radial grid coordinate ``s`` (exact for balls)."""
    return outer_value * grid.s_node


def default_outer_value(grid: AnnularGrid) -> float:
    """``log(R_out / mean boundary radius)``, so normalization stays close to 1."""
    inner = grid.radius[grid.inner]
    return float(np.log(grid.r_out / np.exp(np.mean(np.log(inner)))))


def eps_schedule(grid: AnnularGrid, u0, config: SolverConfig):
    if config.eps_schedule is not None:
        return list(config.eps_schedule)
    h, w = GaussGradients(grid, u0).dot(GaussGradients(grid, u0))
    g = np.sqrt(np.concatenate([h.ravel(), w.ravel()]))
    eps0 = float(g.max())
    eps_end = config.terminal_eps_factor * float(g.min()) * grid.ds
    sched = [eps0]
    while sched[-1] * config.eps_factor > eps_end:
        sched.append(sched[-1] * config.eps_factor)
    sched.append(eps_end)
    return sched


def _line_search(grid, u, d, eps, damping, use_newton):
    le = LineEnergy(grid, u, d, eps)
    e0 = le.value(0.0)
    tau = damping
    if use_newton:
        for _ in range(6):
            d1, d2 = le.derivatives(tau)
            if d2 <= 0:
                break
            step = d1 / d2
            tau = float(np.clip(tau - step, 0.05, 1.5))
            if abs(step) < 1e-3:
                break
    change = le.delta(tau)
    while change > 0 and tau > 1e-4:
        tau *= 0.5
        change = le.delta(tau)
    return tau, e0, change


def solve_annulus(
    grid: AnnularGrid,
    inner_value: float = 0.0,
    outer_value: float | None = None,
    config: SolverConfig | None = None,
    initial=None,
    raise_on_failure: bool = True,
) -> PotentialField:
    """Picard iteration with eps-continuation for the regularized 3-Laplacian."""
    if inner_value != 0.0:
        raise ValueError("inner boundary value is fixed to 0")
    config = config or SolverConfig()
    V = default_outer_value(grid) if outer_value is None else float(outer_value)
    if not V > 0:
        raise ValueError("outer value must be positive")
    prob = _Problem(grid, V)
    u = initial_guess(grid, V) if initial is None else np.array(initial, dtype=float)
    u[grid.inner] = 0.0
    u[grid.outer] = V
    schedule = eps_schedule(grid, u, config)
    history, energies = [], []
    total = 0
    res = np.inf
    for stage, eps in enumerate(schedule):
        last = stage == len(schedule) - 1
        tol = config.picard_tol if last else config.stage_tol
        cap = config.max_picard if last else config.stage_max
        stage_energy = []
        for it in range(cap):
            sh, sw = prob.sigma(u, eps)
            K = prob.asm.stiffness(sh, sw)
            R, res = prob.residual(K, u)
            history.append((eps, res))
            if res <= tol:
                break
            Kff = K[prob.free][:, prob.free]
            rhs = -R[prob.free]
            dfree, n_lin = pcg(Kff, rhs, Kff.diagonal(), config.linear_tol_factor * min(1.0, res), config.max_linear)
            d = np.zeros_like(u)
            d[prob.free] = dfree
            tau, e0, change = _line_search(grid, u, d, eps, config.damping, config.line_search)
            if change > 0:
                log.debug("no energy decrease at eps=%.3e (res=%.3e)", eps, res)
                break
            u = u + tau * d
            stage_energy.append(e0 + change)
            total += 1
            log.debug("eps=%.3e it=%d res=%.3e tau=%.3f cg=%d", eps, it, res, tau, n_lin)
        energies.append((eps, stage_energy))
    converged = res <= config.picard_tol
    if not converged and raise_on_failure:
        raise SolverError(
            f"Picard iteration stopped at residual {res:.3e} > {config.picard_tol:.1e} after {total} steps",
            history,
        )
    pot = PotentialField(
        grid=grid,
        values=u,
        epsilon=schedule[-1],
        outer_value=V,
        residual_norm=float(res),
        iterations=total,
        converged=bool(converged),
        history=history,
        energy_history=energies,
    )
    pot.flux_table = shell_flux_table(pot)
    return pot


def shell_flux_table(pot: PotentialField, order: int = 4):
    """``(s, mean radius, int |grad u|^2 da)`` on interior coordinate shells.

    The shells are homologous to the level sets, so by the divergence theorem
    the 3-harmonic flux through them equals the level-set flux.
    """
    grid = pot.grid
    g = grid.gradient(pot.values, order)
    gn = np.linalg.norm(g, axis=1)
    out = []
    for i in range(2, grid.ns - 2):
        w, nrm, idx = grid.shell_rule(i)
        flux = np.sum(w * gn[idx] * np.sum(g[idx] * nrm, axis=-1))
        out.append((float(grid.s[i]), float(grid.radius[idx].mean()), float(flux)))
    return out


def normalize_to_log_growth(pot: PotentialField) -> PotentialField:
    """Rescale so that the flux ``int |grad u|^2 da`` equals ``4 pi``."""
    fluxes = np.array([q for _, _, q in pot.flux_table])
    med = float(np.median(fluxes)) if len(fluxes) else 0.0
    if not med > 0:
        raise SolverError("non-positive flux; potential cannot be normalized")
    return pot.scaled(np.sqrt(4 * np.pi / med))


def flux_spread(pot: PotentialField) -> float:
    q = np.array([f for _, _, f in pot.flux_table])
    return float((q.max() - q.min()) / np.median(q))


def regularized_flux(pot: PotentialField, t: float, **kw) -> float:
    """``int_{u=t} sqrt(|grad u|^2 + eps^2) |grad u| da`` on the level surface."""
    from confcap.levelset import extract_level_surface

    surf = extract_level_surface(pot, t, **kw)
    gn = surf.grad_norm
    return float(np.sum(surf.weights * np.sqrt(gn**2 + pot.epsilon**2) * gn))


def linear_solve(grid: AnnularGrid, outer_value: float, rtol: float = 1e-10):
    """Harmonic (2-Laplace) annulus solution with the same Dirichlet data."""
    prob = _Problem(grid, outer_value)
    u = initial_guess(grid, outer_value)
    K = prob.asm.stiffness()
    R = K @ u
    Kff = K[prob.free][:, prob.free]
    d, _ = pcg(Kff, -R[prob.free], Kff.diagonal(), rtol, 20000)
    u[prob.free] += d
    return u


def energy(pot: PotentialField) -> float:
    return regularized_energy(pot.grid, pot.values, pot.epsilon)

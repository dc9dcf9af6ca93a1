"""End-to-end scenario runs and their file outputs."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from confcap.capacity import extract_asymptotic_constant, isocapacitary_lower_bound
from confcap.domain import (
    InvalidScenario,
    MetricScenario,
    SphericalHarmonicRadius,
    check_admissibility,
    constant_factor,
    make_ball,
    make_ellipsoid,
    make_schwarzschild,
    make_star_domain,
    point_mass_factor,
)
from confcap.grid import GridError, build_grid
from confcap.mass import adm_mass_flux, fraenkel_asymmetry, stability_ratio, theorem_verdicts
from confcap.monotone import SERIES_COLUMNS, build_series, monotonicity_report, schwarzschild_model_U, stability_excess
from confcap.solver import SolverConfig, SolverError, normalize_to_log_growth, solve_annulus, flux_spread
from confcap.synthesis import synthesize_minimal_boundary_factor

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_INVALID = 3


# ---------------------------------------------------------------------------
# scenario and config parsing


def _center(data):
    c = data.get("center", [0.0, 0.0, 0.0])
    if len(c) != 3:
        raise InvalidScenario("center must have three coordinates")
    return tuple(float(v) for v in c)


def scenario_from_dict(data: dict) -> MetricScenario:
    """Build a scenario from its JSON description."""
    if not isinstance(data, dict) or "domain" not in data:
        raise InvalidScenario("scenario needs a 'domain' entry")
    center = _center(data)
    dom = data["domain"]
    factor_desc = data.get("factor", {"constant": 1.0})
    label = str(data.get("label", "scenario"))
    if "ball" in dom:
        R = float(dom["ball"]["radius"])
        if "schwarzschild_m" in factor_desc and math.isclose(float(factor_desc["schwarzschild_m"]), 2 * R):
            base = make_schwarzschild(2 * R, center)
        else:
            base = make_ball(R, center)
        domain = base.domain
        reference = base.analytic_reference
    elif "star" in dom:
        star = dom["star"]
        graph = SphericalHarmonicRadius(int(star["l_max"]), tuple(float(c) for c in star["coeffs"]))
        domain = make_star_domain(graph, center)
        reference = None
    elif "ellipsoid" in dom:
        domain = make_ellipsoid(dom["ellipsoid"]["axes"], center)
        reference = None
    else:
        raise InvalidScenario(f"unknown domain type {sorted(dom)}")
    synthesize = False
    if "schwarzschild_m" in factor_desc:
        m = float(factor_desc["schwarzschild_m"])
        if not m > 0:
            raise InvalidScenario("schwarzschild_m must be positive")
        factor = point_mass_factor(m, center)
        if reference is not None:
            reference = type(reference)(reference.potential, reference.capacity, m)
    elif factor_desc.get("synthesize_minimal"):
        factor = None
        synthesize = True
    elif "constant" in factor_desc:
        factor = constant_factor(float(factor_desc["constant"]))
        if reference is not None:
            reference = type(reference)(reference.potential, reference.capacity, 0.0)
    else:
        raise InvalidScenario(f"unknown factor type {sorted(factor_desc)}")
    return MetricScenario(domain, factor, label, reference, synthesize)


def load_scenario(path) -> MetricScenario:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise InvalidScenario(f"scenario file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidScenario(f"scenario file is not valid JSON: {exc}") from exc
    return scenario_from_dict(data)


@dataclass
class RunConfig:
    scenario: dict
    solver: SolverConfig = field(default_factory=SolverConfig)
    r_out_factors: tuple = (32.0, 64.0)
    resolution: tuple = (64, 24, 48)
    level_count: int = 24
    level_range: tuple = (0.05, 0.85)
    outputs: str = "run"
    seed: int = 0
    deterministic: bool = True
    fraenkel_resolution: int = 128
    dump_surfaces: bool = False
    dump_grid: bool = False

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "RunConfig":
        base_dir = Path(base_dir or ".")
        scen = data.get("scenario")
        if isinstance(scen, str):
            path = Path(scen)
            if not path.is_absolute():
                path = base_dir / path
            try:
                with open(path) as fh:
                    scen = json.load(fh)
            except FileNotFoundError as exc:
                raise InvalidScenario(f"scenario file not found: {path}") from exc
        elif scen is None:
            raise InvalidScenario("config needs a 'scenario' entry (path or object)")
        grid = data.get("grid", {})
        levels = data.get("levels", {})
        out = data.get("outputs", "run")
        if not Path(out).is_absolute():
            out = str(base_dir / out)
        try:
            solver = SolverConfig.from_dict(data.get("solver"))
        except (TypeError, ValueError) as exc:
            raise InvalidScenario(f"invalid solver section: {exc}") from exc
        return cls(
            scenario=scen,
            solver=solver,
            r_out_factors=tuple(float(x) for x in grid.get("R_out_factors", (32.0, 64.0))),
            resolution=tuple(int(n) for n in grid.get("resolution", (64, 24, 48))),
            level_count=int(levels.get("count", 24)),
            level_range=tuple(float(x) for x in levels.get("range", (0.05, 0.85))),
            outputs=out,
            seed=int(data.get("seed", 0)),
            deterministic=bool(data.get("deterministic", True)),
            fraenkel_resolution=int(data.get("fraenkel", {}).get("resolution", 128)),
            dump_surfaces=bool(data.get("dump_surfaces", False)),
            dump_grid=bool(data.get("dump_grid", False)),
        )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise InvalidScenario(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidScenario(f"config file is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(data, path.parent)


# ---------------------------------------------------------------------------
# the pipeline


@dataclass
class RunResult:
    scenario: MetricScenario
    capacity: object
    potentials: list
    series: object
    monotonicity: dict
    adm: object
    fraenkel: object
    report: object
    admissibility: object
    excess: dict
    flux_spreads: list
    elapsed: float = 0.0


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _clean(obj):
    """Convert numpy scalars and arrays for JSON; floats round to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return float(f"{v:.12g}")
    return obj


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def solve_pair(scenario: MetricScenario, config: RunConfig):
    pots = []
    R0 = scenario.domain.bounding_radius
    for k in config.r_out_factors:
        grid = build_grid(scenario.domain, k * R0, config.resolution)
        pot = solve_annulus(grid, 0.0, None, config.solver)
        pots.append(normalize_to_log_growth(pot))
    return pots


def run_pipeline(config: RunConfig, scenario: MetricScenario | None = None) -> RunResult:
    start = time.perf_counter()
    scenario = scenario or scenario_from_dict(config.scenario)
    R0 = scenario.domain.bounding_radius
    if scenario.synthesize_factor:
        factor = synthesize_minimal_boundary_factor(
            scenario.domain, config.r_out_factors[0] * R0, config.resolution
        )
        scenario = MetricScenario(
            scenario.domain, factor, scenario.label, scenario.analytic_reference, True, dict(scenario.extras)
        )
    admissibility = check_admissibility(scenario)
    pots = solve_pair(scenario, config)
    cap = extract_asymptotic_constant(pots)
    adm = adm_mass_flux(scenario.factor, scenario.domain)
    series = build_series(
        pots[-1],
        scenario.factor,
        count=config.level_count,
        t_range=config.level_range,
        capacity=cap.capacity,
        keep_surfaces=config.dump_surfaces,
    )
    mono = monotonicity_report(series, m_adm=adm.m_adm, capacity=cap.capacity)
    fr = fraenkel_asymmetry(scenario.domain, n=config.fraenkel_resolution)
    volume = scenario.domain.volume()
    report = theorem_verdicts(
        adm.m_adm, cap.capacity, volume, fr.alpha, adm.m_adm_coord, adm_low_confidence=adm.low_confidence
    )
    t_top = float(max(s.t for s in series.unflagged()))
    excess_full, low_full = stability_excess(series, t_top)
    s_eta = min(2 * math.sqrt(max(report.eta, 0.0)), t_top)
    excess_eta, low_eta = stability_excess(series, s_eta)
    excess = {
        "s_max": t_top,
        "value": excess_full,
        "low_confidence": low_full,
        "s_max_2sqrt_eta": s_eta,
        "value_2sqrt_eta": excess_eta,
        "low_confidence_2sqrt_eta": low_eta,
    }
    return RunResult(
        scenario=scenario,
        capacity=cap,
        potentials=pots,
        series=series,
        monotonicity=mono,
        adm=adm,
        fraenkel=fr,
        report=report,
        admissibility=admissibility,
        excess=excess,
        flux_spreads=[flux_spread(p) for p in pots],
        elapsed=time.perf_counter() - start,
    )


def summary_lines(res: RunResult, deterministic: bool = True):
    rep = res.report
    adm = res.admissibility
    lines = [f"scenario: {res.scenario.label}"]
    if not adm.admissible:
        lines.append("WARNING: scenario is not admissible: " + "; ".join(adm.notes or ["see admissibility record"]))
    c = res.capacity
    lines.append(f"capacity: {c.capacity:.6f} (a_hat {c.a_hat:+.6f}, fit residual {c.shell_fit_residual:.2e}, R_out {list(c.truncation_pair)})")
    ref = res.scenario.analytic_reference
    if ref is not None:
        lines.append(f"capacity reference: {ref.capacity:.6f} (relative error {c.capacity / ref.capacity - 1:+.2e})")
    lines.append(f"ADM mass: {res.adm.m_adm:.6f} (coordinate route {res.adm.m_adm_coord:.6f})")
    lines.append(f"volume: {rep.vol:.6f}, Fraenkel asymmetry: {rep.alpha:.4f}")
    for key, name in (("mass_capacity", "mass-capacity inequality m_ADM >= 2c"), ("volumetric_penrose", "volumetric Penrose inequality m_ADM >= 2(3V/4pi)^(1/3)")):
        v = rep.verdicts[key]
        lines.append(f"{name}: {v['verdict']} (margin {v['margin']:+.4f})")
    m = res.monotonicity
    lines.append(f"monotonicity of Q: {'pass' if m['Q_nondecreasing']['pass'] else 'fail'} (margin {m['Q_nondecreasing']['margin']:+.4f}, max |Q-16pi| {m['Q_nondecreasing']['max_Q_deviation']:.4f})")
    lines.append(f"bound U <= U_s: {'pass' if m['U_below_model']['pass'] else 'fail'} (margin {m['U_below_model']['margin']:+.4f})")
    lines.append(f"inequality U' + U^2/16pi <= 4pi: {'pass' if m['ode_inequality']['pass'] else 'fail'} (margin {m['ode_inequality']['margin']:+.4f})")
    sr = stability_ratio(rep.eta, rep.alpha)
    lines.append(f"stability record: eta {rep.eta:+.5f}, alpha {rep.alpha:.4f}, alpha/sqrt(eta) {'n/a' if sr is None else f'{sr:.4f}'}")
    lines.append(f"flux spread: {max(res.flux_spreads):.2e}")
    if not deterministic:
        lines.append(f"elapsed: {res.elapsed:.1f} s")
    return lines


def write_outputs(res: RunResult, outdir, deterministic: bool = True):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "capacity.json", res.capacity.as_dict())
    verdicts = res.report.as_dict()
    verdicts["label"] = res.scenario.label
    verdicts["monotonicity"] = {k: v for k, v in res.monotonicity.items()}
    verdicts["admissibility"] = res.admissibility.as_dict()
    verdicts["adm"] = {
        "radii": res.adm.radii,
        "shell_masses": res.adm.shell_masses,
        "shell_masses_coord": res.adm.shell_masses_coord,
        "misfit": res.adm.misfit,
    }
    verdicts["stability_excess"] = res.excess
    verdicts["flux_spread"] = res.flux_spreads
    verdicts["fraenkel_center"] = res.fraenkel.center
    write_json(out / "verdicts.json", verdicts)
    write_csv(out / "series.csv", SERIES_COLUMNS, [s.row() for s in res.series.samples])
    (out / "summary.txt").write_text("\n".join(summary_lines(res, deterministic)) + "\n")
    if hasattr(res.series, "surfaces"):
        sdir = out / "surfaces"
        sdir.mkdir(exist_ok=True)
        for n, surf in enumerate(res.series.surfaces):
            surf.write_off(sdir / f"level_{n:02d}.off")
    return out


def run_scenario(config: RunConfig, write: bool = True):
    """Run and write artifacts; returns ``(exit_status, result or None, message)``."""
    try:
        res = run_pipeline(config)
    except (InvalidScenario, GridError) as exc:
        return EXIT_INVALID, None, str(exc)
    except SolverError as exc:
        return EXIT_SOLVER, None, str(exc)
    if write:
        write_outputs(res, config.outputs, config.deterministic)
        if config.dump_grid:
            res.potentials[-1].grid.dump(Path(config.outputs) / "grid.txt")
    return EXIT_OK, res, "\n".join(summary_lines(res, config.deterministic))


# ---------------------------------------------------------------------------
# convergence study, plot data and the cross-scenario ledger


def refinement_resolutions(base, levels: int):
    if levels < 2:
        raise ValueError("a convergence study needs at least 2 refinement levels")
    res = []
    for i in range(levels):
        k = 2 ** (levels - 1 - i)
        r = tuple(int(n // k) for n in base)
        if r[0] < 16 or r[1] < 8 or r[2] < 16 or r[2] % 4:
            raise ValueError(f"refinement level {r} is below the minimum grid (16, 8, 16)")
        res.append(r)
    return res


CONVERGENCE_COLUMNS = [
    "level", "n_s", "n_theta", "n_phi", "capacity", "capacity_error", "m_adm",
    "q_max_drop", "q_max_deviation", "observed_order_capacity", "observed_order_q",
]


def convergence_study(config: RunConfig, levels: int, outpath=None):
    """Capacity, ADM mass and Q diagnostics over successive grid refinements."""
    rows = []
    scenario = scenario_from_dict(config.scenario)
    ref = scenario.analytic_reference
    for n, res in enumerate(refinement_resolutions(config.resolution, levels)):
        cfg = RunConfig(**{**config.__dict__, "resolution": res})
        r = run_pipeline(cfg, scenario)
        err = abs(r.capacity.capacity - ref.capacity) if ref is not None else float("nan")
        q = r.monotonicity["Q_nondecreasing"]
        rows.append([n, *res, r.capacity.capacity, err, r.adm.m_adm, q["max_drop"], q["max_Q_deviation"]])
    caps = [row[4] for row in rows]
    for i, row in enumerate(rows):
        order_c = order_q = float("nan")
        if i > 0:
            e0, e1 = rows[i - 1][5], row[5]
            if ref is None and i > 1:
                e0, e1 = abs(caps[i - 1] - caps[i - 2]), abs(caps[i] - caps[i - 1])
            if e0 > 0 and e1 > 0:
                order_c = math.log2(e0 / e1)
            q0, q1 = rows[i - 1][8], row[8]
            if q0 > 0 and q1 > 0:
                order_q = math.log2(q0 / q1)
        row.extend([order_c, order_q])
    if outpath is not None:
        write_csv(outpath, CONVERGENCE_COLUMNS, rows)
    return rows


def emit_plot_data(run_dir):
    """Plot-ready CSVs with model columns next to the computed series."""
    run_dir = Path(run_dir)
    with open(run_dir / "series.csv") as fh:
        rows = list(csv.DictReader(fh))
    t = np.array([float(r["t"]) for r in rows])
    U = np.array([float(r["U"]) for r in rows])
    Q = np.array([float(r["Q"]) for r in rows])
    write_csv(run_dir / "plot_U.csv", ["t", "U", "U_model"], zip(t, U, schwarzschild_model_U(t)))
    write_csv(run_dir / "plot_Q.csv", ["t", "Q", "Q_model"], zip(t, Q, np.full_like(t, 16 * np.pi)))
    bound = None
    vpath = run_dir / "verdicts.json"
    if vpath.exists():
        v = json.loads(vpath.read_text())
        if v.get("m_adm") is not None and v.get("capacity"):
            bound = 8 * np.pi * v["m_adm"] / v["capacity"]
    write_csv(
        run_dir / "plot_asymptotic.csv",
        ["t", "e_t_times_8pi_minus_U", "bound"],
        [(a, b, bound) for a, b in zip(t, np.exp(t) * (8 * np.pi - U))],
    )
    return [run_dir / "plot_U.csv", run_dir / "plot_Q.csv", run_dir / "plot_asymptotic.csv"]


LEDGER_COLUMNS = ["label", "eta", "alpha", "alpha_over_sqrt_eta", "m_adm", "capacity", "ratio", "penrose_ratio"]


def build_ledger(run_dirs, outdir):
    """Collect stability records from run directories and fit ``alpha / sqrt(eta)``."""
    rows = []
    for d in run_dirs:
        vpath = Path(d) / "verdicts.json"
        if not vpath.exists():
            continue
        v = json.loads(vpath.read_text())
        rows.append([
            v.get("label", str(d)), v["eta"], v["alpha"], v.get("stability_ratio"),
            v["m_adm"], v["capacity"], v["ratio"], v["penrose_ratio"],
        ])
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_csv(outdir / "stability_ledger.csv", LEDGER_COLUMNS, rows)
    write_csv(outdir / "eta_alpha_scatter.csv", ["eta", "alpha"], [(r[1], r[2]) for r in rows])
    ratios = [r[3] for r in rows if r[3] is not None]
    fit = {"count": len(rows), "max_alpha_over_sqrt_eta": max(ratios) if ratios else None}
    pos = [(r[1], r[2]) for r in rows if r[1] is not None and r[1] > 0 and r[2] is not None]
    if pos:
        s = np.sqrt([p[0] for p in pos])
        a = np.array([p[1] for p in pos])
        fit["least_squares_C"] = float(np.dot(s, a) / np.dot(s, s))
    write_json(outdir / "stability_fit.json", fit)
    return rows, fit


def set_threads(n: int | None):
    """Limit BLAS/OpenMP thread pools (``CONFCAP_THREADS`` or the deterministic flag)."""
    if n is None:
        env = os.environ.get("CONFCAP_THREADS")
        n = int(env) if env else None
    if n is None:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(n)

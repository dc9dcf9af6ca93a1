import csv
import json

import numpy as np
import pytest

from confcap.cli import main
from confcap.domain import InvalidScenario
from confcap.pipeline import (
    RunConfig,
    build_ledger,
    convergence_study,
    load_config,
    refinement_resolutions,
    scenario_from_dict,
)
from confcap.monotone import SERIES_COLUMNS

SCHW = {"label": "schwarzschild-m2", "domain": {"ball": {"radius": 1.0}}, "factor": {"schwarzschild_m": 2.0}}
FLAT = {"label": "ball-flat", "domain": {"ball": {"radius": 1.0}}, "factor": {"constant": 1.0}}


def _config(tmp_path, scenario, name, **extra):
    (tmp_path / f"{name}_scenario.json").write_text(json.dumps(scenario))
    cfg = {
        "scenario": f"{name}_scenario.json",
        "grid": {"R_out_factors": [32, 64], "resolution": [32, 12, 24]},
        "levels": {"count": 12, "range": [0.05, 0.85]},
        "outputs": f"out_{name}",
        "fraenkel": {"resolution": 48},
        **extra,
    }
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def schw_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("schw")
    path = _config(tmp, SCHW, "schw", dump_surfaces=True)
    assert main(["--deterministic", "run", str(path)]) == 0
    return tmp / "out_schw"


def test_run_writes_artifacts(schw_run):
    for name in ("capacity.json", "verdicts.json", "series.csv", "summary.txt"):
        assert (schw_run / name).exists()
    cap = json.loads((schw_run / "capacity.json").read_text())
    assert set(cap) >= {"a_hat", "capacity", "residual", "R_out_pair"}
    v = json.loads((schw_run / "verdicts.json").read_text())
    assert v["ratio"] == pytest.approx(1.0, abs=0.02)
    assert v["verdicts"] == {"mass_capacity": "pass", "volumetric_penrose": "pass"}
    rows = list(csv.reader(open(schw_run / "series.csv")))
    assert rows[0] == SERIES_COLUMNS and len(rows) == 14
    assert len(list((schw_run / "surfaces").glob("*.off"))) == 13


def test_summary_names_theorem_and_margin(schw_run):
    text = (schw_run / "summary.txt").read_text()
    verdict_lines = [l for l in text.splitlines() if ": pass" in l or ": fail" in l]
    assert len(verdict_lines) >= 5
    for line in verdict_lines:
        assert "margin" in line
    assert "mass-capacity inequality" in text and "volumetric Penrose inequality" in text
    assert "elapsed" not in text


def test_csv_has_twelve_significant_digits(schw_run):
    rows = list(csv.reader(open(schw_run / "series.csv")))[1:]
    digits = max(len(c.replace("-", "").replace(".", "").split("e")[0].lstrip("0")) for r in rows for c in r)
    assert digits == 12


def test_deterministic_runs_are_identical(tmp_path, schw_run):
    path = _config(tmp_path, SCHW, "schw", dump_surfaces=True)
    assert main(["--deterministic", "run", str(path)]) == 0
    for name in ("capacity.json", "verdicts.json", "series.csv", "summary.txt", "surfaces/level_05.off"):
        assert (tmp_path / "out_schw" / name).read_bytes() == (schw_run / name).read_bytes()


def test_flat_factor_warns_but_completes(tmp_path):
    path = _config(tmp_path, FLAT, "flat")
    assert main(["run", str(path)]) == 0
    text = (tmp_path / "out_flat" / "summary.txt").read_text()
    assert "WARNING: scenario is not admissible" in text
    cap = json.loads((tmp_path / "out_flat" / "capacity.json").read_text())
    assert cap["capacity"] == pytest.approx(1.0, rel=0.02)
    v = json.loads((tmp_path / "out_flat" / "verdicts.json").read_text())
    assert v["verdicts"]["mass_capacity"] == "fail"


def test_missing_and_invalid_inputs_exit_3(tmp_path):
    assert main(["run", str(tmp_path / "missing.json")]) == 3
    path = _config(tmp_path, {"domain": {"torus": {}}}, "bad")
    assert main(["run", str(path)]) == 3
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["run", str(tmp_path / "broken.json")]) == 3
    path = _config(tmp_path, SCHW, "badsolver", solver={"damping": 3.0})
    assert main(["run", str(path)]) == 3
    assert main(["plots", str(tmp_path / "nowhere")]) == 3
    assert main(["ledger", str(tmp_path / "nowhere")]) == 3


def test_solver_failure_exits_2(tmp_path):
    path = _config(tmp_path, SCHW, "stall", solver={"max_picard": 1, "picard_tol": 1e-14, "stage_max": 1})
    assert main(["run", str(path)]) == 2


def test_plots(schw_run):
    assert main(["plots", str(schw_run)]) == 0
    rows = list(csv.DictReader(open(schw_run / "plot_U.csv")))
    U = np.array([float(r["U"]) for r in rows])
    model = np.array([float(r["U_model"]) for r in rows])
    assert np.max(np.abs(U - model)) < 0.03 * 8 * np.pi
    assert (schw_run / "plot_Q.csv").exists() and (schw_run / "plot_asymptotic.csv").exists()


def test_ledger(schw_run, tmp_path):
    rows, fit = build_ledger([schw_run, schw_run, schw_run], tmp_path / "led")
    assert fit["count"] == 3
    scatter = list(csv.reader(open(tmp_path / "led" / "eta_alpha_scatter.csv")))
    assert scatter[0] == ["eta", "alpha"] and len(scatter) == 4
    assert main(["ledger", "--output", str(tmp_path / "empty")]) == 0
    assert (tmp_path / "empty" / "eta_alpha_scatter.csv").read_text() == "eta,alpha\n"


def test_refinement_levels():
    assert refinement_resolutions((64, 24, 48), 2) == [(32, 12, 24), (64, 24, 48)]
    with pytest.raises(ValueError):
        refinement_resolutions((64, 24, 48), 1)
    with pytest.raises(ValueError):
        refinement_resolutions((64, 24, 48), 3)


def test_convergence_study_on_ball(tmp_path):
    path = _config(tmp_path, SCHW, "conv")
    cfg = load_config(path)
    cfg.resolution = (64, 24, 48)
    rows = convergence_study(cfg, 2, tmp_path / "conv.csv")
    errs = [r[5] for r in rows]
    assert errs[1] < errs[0]
    assert rows[1][9] >= 1.0
    assert rows[1][8] <= rows[0][8]
    assert main(["converge", str(path), "--levels", "1"]) == 3


def test_scenario_parsing():
    s = scenario_from_dict({"domain": {"ellipsoid": {"axes": [1.2, 1, 1]}}, "factor": {"synthesize_minimal": True}, "center": [1, 2, 3]})
    assert s.synthesize_factor and np.allclose(s.domain.center, [1, 2, 3])
    s = scenario_from_dict({"domain": {"star": {"l_max": 0, "coeffs": [2 * np.sqrt(np.pi)]}}})
    assert s.domain.volume() == pytest.approx(4 / 3 * np.pi)
    with pytest.raises(InvalidScenario):
        scenario_from_dict({"domain": {"ball": {"radius": 1}}, "factor": {"magic": 1}})
    with pytest.raises(InvalidScenario):
        scenario_from_dict({"domain": {"ball": {"radius": 1}}, "center": [0, 0]})
    with pytest.raises(InvalidScenario):
        RunConfig.from_dict({"grid": {}})

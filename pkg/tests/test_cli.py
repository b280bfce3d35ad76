import csv
import json
import logging
import os
import shutil
import subprocess
import sys

import pytest

from csa_uep.cli import ExperimentSpec, UsageError, grid_values, main, parse_grid, run
from csa_uep.model import ClassSpec, DegreeDistribution, ScenarioConfig, table1_row


@pytest.fixture
def row_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(ScenarioConfig(100, 0.5, table1_row("b3").classes(), seed=5).to_json())
    return path


@pytest.fixture
def x2_config(tmp_path):
    path = tmp_path / "x2.json"
    path.write_text(ScenarioConfig(100, 0.3, (ClassSpec(1.0, DegreeDistribution.monomial(2)),)).to_json())
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_grid_parsing():
    assert parse_grid("0.1:0.5:0.1") == (0.1, 0.5, 0.1)
    assert grid_values((0.1, 0.5, 0.1)) == [0.1, 0.2, 0.3, 0.4, 0.5]
    assert grid_values((0.3, 0.3, 0.05)) == [0.3]
    with pytest.raises(SystemExit):
        main(["simulate", "--grid", "0.1:0.5"])


def test_spec_validation(row_config):
    with pytest.raises(UsageError, match="trials must be ≥ 1"):
        ExperimentSpec("simulate", config=row_config, trials=0)
    with pytest.raises(UsageError):
        ExperimentSpec("simulate", config=row_config, grid=(0.1, 0.5, 0.0))
    with pytest.raises(UsageError):
        ExperimentSpec("simulate")
    with pytest.raises(UsageError):
        ExperimentSpec("reproduce", target="fig9")


def test_threshold_prints_degree_two_value(x2_config, tmp_path, capsys):
    assert main(["threshold", "--config", str(x2_config), "--out", str(tmp_path / "o"), "--trajectory"]) == 0
    out = capsys.readouterr().out
    value = float(out.split("=")[1].split("±")[0])
    assert value == pytest.approx(0.5, abs=1e-3)
    rows = read_csv(tmp_path / "o" / "trajectory.csv")
    assert rows[0] == ["iteration", "xi"]
    assert rows[1] == ["0", "1.0"]
    assert float(rows[-1][1]) < 1e-10


def test_zero_trials_exit_code(row_config, capsys):
    assert main(["simulate", "--config", str(row_config), "--trials", "0"]) == 1
    assert "trials must be ≥ 1" in capsys.readouterr().err


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": 100, "g": 0.5, "classes": [{"alpha": 0.5, "dist": {"2": 1.0}}]}))
    assert main(["simulate", "--config", str(bad), "--trials", "10", "--out", str(tmp_path)]) == 1
    assert "alphas sum" in capsys.readouterr().err
    assert main(["threshold", "--config", str(tmp_path / "missing.json")]) == 1


def test_degree_one_warning(tmp_path, caplog):
    cfg = tmp_path / "d1.json"
    dist = DegreeDistribution.from_mapping({1: 0.1, 2: 0.9})
    cfg.write_text(ScenarioConfig(50, 0.2, (ClassSpec(1.0, dist),)).to_json())
    with caplog.at_level(logging.WARNING, logger="csa_uep"):
        assert main(["threshold", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert "degree 1" in caplog.text


def test_simulate_outputs(row_config, tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(row_config), "--trials", "500", "--grid", "0.3:0.5:0.1",
                 "--out", str(out), "--trace", "--workers", "1"]) == 0
    rows = read_csv(out / "simulate.csv")
    assert rows[0] == ["g", "realized_load", "class", "users_observed", "users_unresolved", "plr", "halfwidth"]
    assert [r[0] for r in rows[1:]] == ["0.3", "0.3", "0.4", "0.4", "0.5", "0.5"]
    lines = (out / "trace_g0.5.jsonl").read_text().splitlines()
    assert len(lines) == 500
    assert json.loads(lines[0]).keys() == {"frame", "unresolved"}


def test_errorfloor_outputs(row_config, tmp_path):
    out = tmp_path / "ef"
    assert main(["errorfloor", "--config", str(row_config), "--grid", "0.4:0.5:0.1", "--nu-max", "3",
                 "--catalog-cache", str(tmp_path / "cat.json"), "--out", str(out)]) == 0
    rows = read_csv(out / "errorfloor.csv")
    assert rows[0] == ["g", "class", "plr_prediction"]
    assert len(rows) == 5
    assert (tmp_path / "cat.json").exists()
    values = {(r[0], r[1]): float(r[2]) for r in rows[1:]}
    assert values[("0.5", "0")] < values[("0.5", "1")]
    assert values[("0.4", "1")] < values[("0.5", "1")]


def test_delay_outputs(row_config, tmp_path):
    out = tmp_path / "delay"
    assert main(["delay", "--config", str(row_config), "--trials", "300", "--grid", "0.1:0.5:0.2",
                 "--out", str(out)]) == 0
    pmf = read_csv(out / "delay_pmf.csv")
    assert pmf[0] == ["class", "bin_center", "mass"]
    assert len(pmf) == 1 + 2 * 100
    means = read_csv(out / "delay_mean.csv")
    assert means[0] == ["g", "class", "mean", "resolved_fraction"]
    assert [r[0] for r in means[1:]] == ["0.1", "0.1", "0.3", "0.3", "0.5", "0.5"]


def test_outputs_do_not_depend_on_worker_count(row_config, tmp_path):
    dirs = []
    for workers in ("1", "8"):
        out = tmp_path / f"w{workers}"
        args = ["--config", str(row_config), "--grid", "0.3:0.5:0.2", "--workers", workers, "--out", str(out)]
        assert main(["simulate", "--trials", "9000", "--trace", *args]) == 0
        assert main(["delay", "--trials", "9000", *args]) == 0
        dirs.append(out)
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_seed_override_changes_results(row_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", str(row_config), "--trials", "2000", "--out", str(a)])
    main(["simulate", "--config", str(row_config), "--trials", "2000", "--out", str(b), "--seed", "77"])
    assert (a / "simulate.csv").read_bytes() != (b / "simulate.csv").read_bytes()


def test_optimize_require_feasible(tmp_path, capsys):
    problem = {"n": 100, "g_target": 0.5, "alphas": [0.2, 0.8], "targets": [1e-10, 1e-10], "grid_step": 0.5}
    path = tmp_path / "p.json"
    path.write_text(json.dumps(problem))
    out = tmp_path / "opt"
    assert main(["optimize", "--config", str(path), "--out", str(out)]) == 0
    assert main(["optimize", "--config", str(path), "--out", str(out), "--require-feasible"]) == 2
    result = json.loads((out / "optimize.json").read_text())
    assert result["result"]["feasible"] is False
    assert "g*" in (out / "optimize_table.txt").read_text()


def test_optimize_grid_step_override(tmp_path):
    problem = {"n": 100, "g_target": 0.5, "alphas": [0.2, 0.8], "targets": [1e-5, 1e-3]}
    path = tmp_path / "p.json"
    path.write_text(json.dumps(problem))
    assert main(["optimize", "--config", str(path), "--out", str(tmp_path), "--grid-step", "0.5"]) == 0
    assert json.loads((tmp_path / "optimize.json").read_text())["result"]["starts"] == 36
    assert main(["optimize", "--config", str(path), "--out", str(tmp_path), "--grid-step", "0.3"]) == 1


def test_reproduce_table1(tmp_path, capsys):
    out = tmp_path / "t1"
    assert run(ExperimentSpec("reproduce", target="table1", out=out, grid_step=0.25)) == 0
    rows = json.loads((out / "table1.json").read_text())
    assert [r["row"] for r in rows] == ["a1", "a2", "a3", "a4", "b1", "b2", "b3", "b4"]
    assert rows[0]["result"]["threshold"] >= 0.92
    assert len((out / "table1.txt").read_text().splitlines()) == 9


def test_reproduce_figures(tmp_path):
    out = tmp_path / "figs"
    assert main(["reproduce", "fig4", "--trials", "200", "--grid", "0.3:0.4:0.1", "--nu-max", "3",
                 "--out", str(out)]) == 0
    rows = read_csv(out / "fig4.csv")
    assert rows[0] == ["row", "g", "class", "plr_sim", "halfwidth", "plr_pred"]
    assert len(rows) == 1 + 4 * 2 * 2
    assert main(["reproduce", "fig56", "--trials", "200", "--grid", "0.2:0.4:0.2", "--out", str(out)]) == 0
    means = read_csv(out / "fig6_mean.csv")
    assert means[1][:2] == ["0.0", "0"] and float(means[1][2]) == pytest.approx(0.1125)
    assert len(read_csv(out / "fig5_pmf.csv")) == 1 + 3 * 2 * 100


def test_module_entry_point_logs_to_stderr(row_config, tmp_path):
    env = {**os.environ, "CSA_UEP_LOG": "info"}
    proc = subprocess.run(
        [sys.executable, "-m", "csa_uep", "reproduce", "table1", "--grid-step", "0.5", "--nu-max", "2",
         "--out", str(tmp_path)],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0
    assert "INFO csa_uep" in proc.stderr
    assert "INFO" not in proc.stdout
    assert proc.stdout.splitlines()[0].split()[0] == "p~(1)"


def test_console_script_is_installed(x2_config, tmp_path):
    exe = shutil.which("csa-uep")
    assert exe is not None
    proc = subprocess.run([exe, "threshold", "--config", str(x2_config), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("g* = 0.499")


def test_shipped_configs_load():
    from pathlib import Path

    from csa_uep.optimizer import OptimizationProblem

    root = Path(__file__).resolve().parent.parent / "configs"
    scenario = ScenarioConfig.load(root / "scenario_b3.json")
    assert scenario.classes == table1_row("b3").classes()
    assert ScenarioConfig.from_json(scenario.to_json()) == scenario
    assert OptimizationProblem.load(root / "problem_b3.json").targets == (1e-5, 1e-3)

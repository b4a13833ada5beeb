"""CLI behavior: subcommands, artifacts, exit codes 0/2/3."""

import json

import pytest
import yaml

from cpnav.cli import main


def _scenario_doc():
    return {
        "workspace": {"width": 8.0, "height": 8.0},
        "obstacles": [
            {"kind": "constant_velocity", "start": [6.0, 1.0],
             "velocity": [-0.25, 0.3], "radius": 0.4},
        ],
        "horizon_T": 20.0,
        "dt": 1.0,
    }


@pytest.fixture
def scenario_file(tmp_path):
    p = tmp_path / "scenario.yaml"
    p.write_text(yaml.safe_dump(_scenario_doc()))
    return p


@pytest.fixture
def experiment_file(tmp_path, scenario_file):
    doc = {
        "scenario_path": "scenario.yaml",
        "planner": "cp_sipp",
        "calibration_episodes": 20,
        "test_trials": 10,
        "ladder_levels": [0.9],
        "c_min": 0.9,
        "noise_sigma": 0.3,
        "start": [0, 0],
        "goal": [7, 7],
        "output_dir": str(tmp_path / "out"),
    }
    p = tmp_path / "experiment.yaml"
    p.write_text(yaml.safe_dump(doc))
    return p


def test_calibrate_writes_table_and_truth(scenario_file, tmp_path, capsys):
    out = tmp_path / "cal"
    rc = main(["calibrate", str(scenario_file), "--episodes", "15",
               "--levels", "0.9", "0.8", "--out", str(out)])
    assert rc == 0
    assert (out / "quantile_table.csv").exists()
    assert (out / "truth.csv").exists()
    header = (out / "quantile_table.csv").read_text().splitlines()[0]
    assert header == "confidence,t,threshold"
    assert "15 episodes" in capsys.readouterr().out


def test_missing_scenario_file_is_config_error(tmp_path, capsys):
    rc = main(["calibrate", str(tmp_path / "absent.yaml")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_malformed_spec_is_config_error(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({"planner": "cp_sipp"}))  # no scenario
    rc = main(["run", str(p)])
    assert rc == 2
    assert "scenario" in capsys.readouterr().err


def test_run_writes_report(experiment_file, tmp_path, capsys):
    rc = main(["run", str(experiment_file)])
    assert rc == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["n_trials"] == 10
    assert "collision rate" in capsys.readouterr().out


def test_sweep_overrides_trials(experiment_file, tmp_path):
    out = tmp_path / "sweep_out"
    rc = main(["sweep", str(experiment_file), "--trials", "4", "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["n_trials"] == 4


def test_infeasible_plan_exits_3(tmp_path, capsys):
    doc = _scenario_doc()
    doc["workspace"]["static_blocked_cells"] = [[3, y] for y in range(8)]
    (tmp_path / "walled.yaml").write_text(yaml.safe_dump(doc))
    exp = {
        "scenario_path": "walled.yaml",
        "planner": "spacetime",
        "calibration_episodes": 10,
        "test_trials": 5,
        "ladder_levels": [0.9],
        "c_min": 0.9,
        "start": [0, 0],
        "goal": [7, 7],
        "output_dir": str(tmp_path / "out"),
    }
    p = tmp_path / "exp.yaml"
    p.write_text(yaml.safe_dump(exp))
    rc = main(["plan", str(p)])
    assert rc == 3
    assert "infeasible" in capsys.readouterr().out


def test_verify_runs_named_checks(tmp_path, capsys):
    out = tmp_path / "verify_out"
    rc = main(["verify", "unit_identities", "determinism", "--out", str(out)])
    assert rc == 0
    payload = json.loads((out / "verify_report.json").read_text())
    assert [e["name"] for e in payload] == ["unit_identities", "determinism"]
    assert all(e["passed"] for e in payload)
    stdout = capsys.readouterr().out
    assert "unit_identities" in stdout and "PASS" in stdout


def test_verify_unknown_check_is_config_error(capsys):
    rc = main(["verify", "no_such_check"])
    assert rc == 2
    assert "unknown check" in capsys.readouterr().err


def test_plot_emits_svg(tmp_path):
    data = tmp_path / "trace.csv"
    data.write_text("t,R_t,d_min,lambda,e_t\n0.0,,2.0,1.0,\n1.0,,1.0,1.2,1\n")
    out = tmp_path / "trace.svg"
    rc = main(["plot", "--kind", "lambda_trace", "--data", str(data),
               "--out", str(out)])
    assert rc == 0
    assert "<svg" in out.read_text()


def test_plot_missing_data_is_config_error(tmp_path, capsys):
    rc = main(["plot", "--kind", "lambda_trace", "--data",
               str(tmp_path / "absent.csv"), "--out", str(tmp_path / "x.svg")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err

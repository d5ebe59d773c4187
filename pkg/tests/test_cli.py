import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from effc_toolkit import cli
from effc_toolkit.errors import NumericalError
from effc_toolkit.validation import CheckResult, SuiteReport


def _run(tmp_path, *argv):
    return cli.main([*argv, "--output-dir", str(tmp_path)])


def _error(capsys):
    return json.loads(capsys.readouterr().err)


def test_analytic_table(tmp_path):
    assert _run(tmp_path, "analytic", "--c", "1", "--lambda", "0.2", "--k-max", "20") == cli.EXIT_OK
    summary = json.loads((tmp_path / "analytic.json").read_text(encoding="utf-8"))
    assert summary["schema_version"] == "1.0"
    assert summary["regime"] == "Subcritical"
    assert summary["rho1"] == pytest.approx(0.6)
    lines = (tmp_path / "analytic.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "k,rho,hitting_time,holding_time"
    assert len(lines) == 21


def test_analytic_supercritical_has_no_stationary_column(tmp_path):
    assert _run(tmp_path, "analytic", "--lambda", "0.8", "--k-max", "3") == cli.EXIT_OK
    summary = json.loads((tmp_path / "analytic.json").read_text(encoding="utf-8"))
    assert summary["regime"] == "Supercritical"
    assert "rho1" not in summary
    assert (tmp_path / "analytic.csv").read_text(encoding="utf-8").splitlines()[1].startswith("1,,,")


def test_bad_flag_value_is_a_usage_error(tmp_path, capsys):
    assert _run(tmp_path, "analytic", "--lambda", "-1") == cli.EXIT_USAGE
    assert _error(capsys)["error"] == "config_error"


def test_module_entry_point_keeps_stderr_machine_readable(tmp_path):
    env = {key: value for key, value in os.environ.items() if not key.startswith("EFFC_")}
    env["PYTHONWARNINGS"] = "ignore"
    env["PYTHONPATH"] = os.pathsep.join(filter(None, [str(Path(__file__).resolve().parents[1] / "src"), env.get("PYTHONPATH")]))
    result = subprocess.run(
        [sys.executable, "-m", "effc_toolkit", "analytic", "--lambda", "-1", "--output-dir", str(tmp_path)],
        capture_output=True,
        text=True,
        cwd=tmp_path,
        env=env,
        timeout=120,
    )
    assert result.returncode == cli.EXIT_USAGE
    assert json.loads(result.stderr)["error"] == "config_error"


def test_unknown_command_is_a_usage_error(tmp_path, capsys):
    assert _run(tmp_path, "plot") == cli.EXIT_USAGE
    assert _error(capsys)["error"] == "usage_error"


def test_numerical_failure_exit_code(tmp_path, capsys, monkeypatch):
    def broken(config):
        raise NumericalError("singular", {"pivot": 0.0})

    monkeypatch.setitem(cli.HANDLERS, "oracle", broken)
    assert _run(tmp_path, "oracle") == cli.EXIT_NUMERICAL
    error = _error(capsys)
    assert error["error"] == "numerical_error"
    assert error["condition"] == {"pivot": 0.0}


def test_domain_error_exit_code(tmp_path, capsys):
    assert _run(tmp_path, "hitting", "--n-max", "10", "--k", "10") == cli.EXIT_USAGE
    assert _error(capsys)["error"] == "domain_error"


def test_failed_acceptance_exit_code(tmp_path, monkeypatch):
    report = SuiteReport(suite="quick", seed=42, checks=[CheckResult(name="broken", passed=False, runtime=1.5)])
    monkeypatch.setattr(cli, "run_suite", lambda suite, seed, threads: report)
    assert _run(tmp_path, "validate", "--seed", "42") == cli.EXIT_ACCEPTANCE
    document = json.loads((tmp_path / "validation.json").read_text(encoding="utf-8"))
    assert document["passed"] is False
    assert "runtime" not in document["checks"][0]


def test_passing_acceptance_exit_code(tmp_path, monkeypatch):
    report = SuiteReport(suite="quick", seed=42, checks=[CheckResult(name="fine", passed=True)])
    monkeypatch.setattr(cli, "run_suite", lambda suite, seed, threads: report)
    assert _run(tmp_path, "validate", "--suite", "quick", "--seed", "42") == cli.EXIT_OK


def test_simulate_is_byte_identical(tmp_path):
    argv = ["simulate", "--c", "1", "--lambda", "0.2", "--n-max", "1000", "--t-end", "2", "--seed", "7"]
    first, second = tmp_path / "a", tmp_path / "b"
    assert _run(first, *argv) == cli.EXIT_OK
    assert _run(second, *argv) == cli.EXIT_OK
    for name in ("trajectory.csv", "simulate.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_simulate_replicas_write_numbered_files(tmp_path):
    argv = ["simulate", "--n-max", "200", "--t-end", "1", "--replicas", "3", "--threads", "2"]
    assert _run(tmp_path, *argv) == cli.EXIT_OK
    names = sorted(p.name for p in tmp_path.glob("trajectory_*.csv"))
    assert names == ["trajectory_0000.csv", "trajectory_0001.csv", "trajectory_0002.csv"]


def test_oracle_and_hitting_outputs(tmp_path):
    assert _run(tmp_path, "oracle", "--lambda", "0.25", "--n-max", "200", "--k", "1") == cli.EXIT_OK
    oracle = json.loads((tmp_path / "oracle.json").read_text(encoding="utf-8"))
    assert oracle["K"] == 200
    assert oracle["pi1"] == pytest.approx(0.5, abs=0.05)

    argv = ["hitting", "--n-max", "200", "--k", "10", "--replicas", "20", "--seed", "3"]
    assert _run(tmp_path, *argv) == cli.EXIT_OK
    hitting = json.loads((tmp_path / "hitting.json").read_text(encoding="utf-8"))
    assert hitting["completed"] == 20
    assert hitting["analytic"] == pytest.approx(1.0 / 3.0)


def test_excursions_and_dimension_outputs(tmp_path):
    argv = ["--lambda", "0.25", "--n-max", "500", "--t-end", "20", "--seed", "5"]
    assert _run(tmp_path, "excursions", *argv, "--j-window", "10", "50") == cli.EXIT_OK
    summary = json.loads((tmp_path / "excursions.json").read_text(encoding="utf-8"))
    assert [level["j"] for level in summary["speed"]] == [10, 50]
    assert (tmp_path / "excursions.csv").read_text(encoding="utf-8").startswith("start,end,duration,min_state\n")

    assert _run(tmp_path, "dimension", *argv) == cli.EXIT_OK
    assert (tmp_path / "dimension.csv").read_text(encoding="utf-8").startswith("delta,count\n")
    dimension = json.loads((tmp_path / "dimension.json").read_text(encoding="utf-8"))
    assert 0.0 <= dimension["slope"] <= 1.0

"""Tests for the command-line entry points."""

import pytest
from click.testing import CliRunner

from cli import cli

from conftest import REPO_ROOT


@pytest.fixture
def runner(monkeypatch):
    monkeypatch.chdir(REPO_ROOT)
    monkeypatch.delenv("MGC_DATA_PATH", raising=False)
    monkeypatch.delenv("MGC_CONFIG_PATH", raising=False)
    return CliRunner()


def test_power_flow_check_reports_feeder(runner, tmp_path):
    out = tmp_path / "violations.csv"
    result = runner.invoke(cli, ["power-flow-check", "--violations-csv", str(out)])
    assert result.exit_code == 0, result.output
    assert "converged" in result.output
    assert out.read_text().splitlines()[0] == "bus_id,voltage_pu,deviation_pu"


def test_power_flow_check_on_toy_feeder(runner):
    result = runner.invoke(cli, ["power-flow-check", "--network", "networks/toy6.json", "--load-scale", "0.5"])
    assert result.exit_code == 0, result.output


def test_missing_network_exits_non_zero(runner):
    result = runner.invoke(cli, ["power-flow-check", "--network", "networks/none.json"])
    assert result.exit_code == 1
    assert "ConfigValidationError" in result.output


def test_compare_with_one_report_fails(runner, tmp_path):
    result = runner.invoke(cli, ["compare", str(tmp_path)])
    assert result.exit_code == 1


def test_run_and_compare(runner, tmp_path):
    for alpha, name in [("0.5", "risk"), ("1.0", "neutral")]:
        result = runner.invoke(cli, [
            "run", "--scenario", "toy", "--alpha", alpha, "--iterations", "1", "--batch-size", "2",
            "--seed", "0", "--out-dir", str(tmp_path / name),
        ])
        assert result.exit_code == 0, result.output
    summary = tmp_path / "summary.csv"
    result = runner.invoke(cli, ["compare", str(tmp_path / "risk"), str(tmp_path / "neutral"),
                                 "--out", str(summary)])
    assert result.exit_code == 0, result.output
    assert summary.exists()
    assert (tmp_path / "summary_pairwise.csv").exists()

"""Tests for the catalog, experiment runner, replay and report comparison."""

import json
import shutil

import numpy as np
import pandas as pd
import pytest

from modules.core.config import RunConfig, with_overrides
from modules.core.errors import ConfigValidationError, HarnessError, MismatchedScenarios, TrainingAborted
from modules.environment.mgc_env import MgcEnv, renewable_share
from modules.harness import runner
from modules.harness.catalog import catalog_entry, catalog_ids, resolve_scenario
from modules.harness.compare import (
    algorithm_averages,
    compare_reports,
    load_report,
    pct_difference,
    render_table,
    write_comparison,
)
from modules.harness.evaluation import evaluate_policies, policies_from_checkpoint
from modules.harness.runner import replay_manifest, run_experiment
from modules.learning.rs_trpo import RsTrpoTrainer

from conftest import CONFIG_DIR, DATA_DIR

OUTPUT_FILES = ["manifest.json", "run_times.json", "metrics.csv", "evaluation.csv",
                "transitions.csv", "timing.csv"]


def small_run() -> RunConfig:
    return with_overrides(RunConfig(), batch_size=2, iterations=2, hidden_sizes=[8], seeds=[0],
                          eval_episodes=2, checkpoint_every=0, critic_epochs=2)


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    scenario, _ = catalog_entry("toy")
    out_dir = tmp_path_factory.mktemp("runs") / "toy_rs-trpo"
    report = run_experiment(scenario, small_run(), out_dir, data_path=DATA_DIR)
    return report


# ==================== CATALOG ====================

def test_catalog_scenarios():
    assert catalog_ids() == ["scenario1", "scenario2", "scenario3", "scenario4", "toy", "toy_risk"]
    scenario, run = catalog_entry("scenario4")
    assert (scenario.load_scale, scenario.uncertainty_scale) == (1.0, 1.0)
    scenario, run = catalog_entry("toy_risk", regime="B")
    assert scenario.penalty_regime == "B"
    assert run.alpha == 0.5
    assert run.batch_size == 16


def test_resolve_prefers_config_files():
    scenario, run = resolve_scenario("scenario2", config_dir=CONFIG_DIR)
    assert (scenario.load_scale, scenario.uncertainty_scale) == (0.5, 1.0)
    scenario, _ = resolve_scenario(str(CONFIG_DIR / "toy.json"), regime="B")
    assert scenario.scenario_id == "toy"
    assert scenario.penalty_regime == "B"


def test_resolve_unknown_scenario(tmp_path):
    with pytest.raises(ConfigValidationError):
        resolve_scenario("nowhere", config_dir=tmp_path)


# ==================== RUNNER ====================

def test_run_writes_outputs(finished_run):
    for name in OUTPUT_FILES:
        assert (finished_run.out_dir / name).exists()
    manifest = json.loads(finished_run.manifest_path.read_text())
    assert manifest['status'] == 'complete'
    assert manifest['seeds'] == [0]
    assert manifest['scenario']['scenario_id'] == 'toy'
    assert manifest['run']['batch_size'] == 2
    assert set(manifest['summary']) == {'episodes', 'mean_return', 'cvar_05_return',
                                        'voltage_max_dev', 'renewable_share'}
    assert (finished_run.out_dir / "checkpoints" / "seed_0" / "final.npz").exists()

    metrics = pd.read_csv(finished_run.out_dir / "metrics.csv")
    assert list(metrics.columns[:3]) == ['algorithm', 'seed', 'iter']
    assert len(metrics) == 2
    evaluation = pd.read_csv(finished_run.out_dir / "evaluation.csv")
    assert len(evaluation) == 2
    transitions = pd.read_csv(finished_run.out_dir / "transitions.csv")
    assert len(transitions) == 2 * 24


def test_renewable_share_recomputed_from_log(finished_run):
    transitions = pd.read_csv(finished_run.out_dir / "transitions.csv")
    expected = transitions['renewable_mw'].sum() / transitions['mg_supply_mw'].sum()
    assert renewable_share(transitions) == pytest.approx(expected)
    assert finished_run.summary['renewable_share'] == pytest.approx(expected)


def test_replay_is_byte_identical(finished_run, tmp_path):
    replayed = replay_manifest(finished_run.manifest_path, tmp_path / "replay")
    for name in ["manifest.json", "metrics.csv", "evaluation.csv", "transitions.csv"]:
        assert (replayed.out_dir / name).read_bytes() == (finished_run.out_dir / name).read_bytes()


def test_run_times_kept_beside_manifest(finished_run):
    manifest = json.loads(finished_run.manifest_path.read_text())
    assert 'started' not in manifest and 'finished' not in manifest
    assert "run_times.json" in manifest['outputs']
    stamps = json.loads((finished_run.out_dir / "run_times.json").read_text())
    assert stamps['started'] <= stamps['finished']


def test_checkpoint_evaluates_like_trained_policy(finished_run):
    scenario, _ = catalog_entry("toy")
    env = MgcEnv.from_scenario(scenario, DATA_DIR)
    agents, critic = policies_from_checkpoint(
        finished_run.out_dir / "checkpoints" / "seed_0" / "final.npz", env)
    assert all(agent.normalizer.frozen for agent in agents)
    result = evaluate_policies(env, agents, seed=0, episodes=2, algorithm="rs-trpo")
    evaluation = pd.read_csv(finished_run.out_dir / "evaluation.csv")
    np.testing.assert_allclose(result.returns, evaluation['return'].to_numpy())


def test_failed_run_leaves_incomplete_manifest(tmp_path, monkeypatch):
    class FailingTrainer(RsTrpoTrainer):
        def update_agents(self, batch):
            raise TrainingAborted("forced")

    monkeypatch.setattr(runner, "trainer_for", lambda algorithm: FailingTrainer)
    scenario, _ = catalog_entry("toy")
    with pytest.raises(TrainingAborted):
        run_experiment(scenario, small_run(), tmp_path / "failed", data_path=DATA_DIR)
    manifest = json.loads((tmp_path / "failed" / "manifest.json").read_text())
    assert manifest['status'] == 'incomplete'
    assert 'forced' in manifest['error']
    assert (tmp_path / "failed" / "metrics.csv").exists()


def test_unexpected_error_still_marks_run_incomplete(tmp_path, monkeypatch):
    def crash(self, seed):
        self.metrics.append(pd.DataFrame({'algorithm': ['rs-trpo'], 'seed': [seed], 'iter': [0]}))
        raise RuntimeError("disk vanished")

    monkeypatch.setattr(runner.ExperimentRunner, "_run_seed", crash)
    scenario, _ = catalog_entry("toy")
    with pytest.raises(RuntimeError):
        run_experiment(scenario, small_run(), tmp_path / "crashed", data_path=DATA_DIR)
    manifest = json.loads((tmp_path / "crashed" / "manifest.json").read_text())
    assert manifest['status'] == 'incomplete'
    assert manifest['error'] == "RuntimeError: disk vanished"
    metrics = pd.read_csv(tmp_path / "crashed" / "metrics.csv")
    assert len(metrics) == 1
    stamps = json.loads((tmp_path / "crashed" / "run_times.json").read_text())
    assert stamps['finished'] is not None


def test_interrupt_marks_run_incomplete(tmp_path, monkeypatch):
    def interrupt(self, seed):
        raise KeyboardInterrupt

    monkeypatch.setattr(runner.ExperimentRunner, "_run_seed", interrupt)
    scenario, _ = catalog_entry("toy")
    with pytest.raises(KeyboardInterrupt):
        run_experiment(scenario, small_run(), tmp_path / "stopped", data_path=DATA_DIR)
    manifest = json.loads((tmp_path / "stopped" / "manifest.json").read_text())
    assert manifest['status'] == 'incomplete'
    assert manifest['error'].startswith("KeyboardInterrupt")


# ==================== COMPARE ====================

def test_pct_difference():
    assert pct_difference(110.0, 100.0) == pytest.approx(10.0)
    assert pct_difference(-110.0, -100.0) == pytest.approx(-10.0)
    assert pct_difference(0.0, 0.0) == 0.0
    assert np.isnan(pct_difference(1.0, 0.0))


def test_report_compared_with_itself(finished_run, tmp_path):
    summary, pairwise = compare_reports([finished_run.out_dir, finished_run.manifest_path])
    assert list(summary['report']) == ["toy_rs-trpo", "toy_rs-trpo#2"]
    assert len(pairwise) == 2
    for column in [c for c in pairwise.columns if c.endswith('_pct')]:
        assert (pairwise[column] == 0.0).all()

    written = write_comparison(summary, pairwise, tmp_path / "summary.csv", tmp_path / "summary.xlsx")
    assert [p.name for p in written] == ["summary.csv", "summary_pairwise.csv", "summary.xlsx"]
    assert pd.ExcelFile(tmp_path / "summary.xlsx").sheet_names == ["Summary", "Pairwise", "Algorithm Averages"]
    assert list(algorithm_averages(summary)['algorithm']) == ["rs-trpo"]
    assert "toy_rs-trpo#2" in render_table(summary)


def test_compare_needs_two_reports_per_scenario(finished_run, tmp_path):
    other = tmp_path / "other_run"
    shutil.copytree(finished_run.out_dir, other)
    manifest = json.loads((other / "manifest.json").read_text())
    manifest['scenario']['scenario_id'] = 'toy_risk'
    (other / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(MismatchedScenarios):
        compare_reports([finished_run.out_dir, other])
    with pytest.raises(HarnessError):
        compare_reports([finished_run.out_dir])


def test_incomplete_report_rejected(finished_run, tmp_path):
    broken = tmp_path / "broken"
    shutil.copytree(finished_run.out_dir, broken)
    manifest = json.loads((broken / "manifest.json").read_text())
    manifest['status'] = 'incomplete'
    (broken / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(HarnessError):
        load_report(broken)

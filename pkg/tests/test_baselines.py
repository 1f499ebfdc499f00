"""Tests for the VPG and MATRPO baselines."""

import numpy as np
import pandas as pd
import pytest

from modules.core.config import with_overrides
from modules.core.errors import ConfigValidationError, NonFiniteError
from modules.environment.mgc_env import MgcEnv
from modules.learning.baselines import (
    BaselineConfig,
    MatrpoTrainer,
    VpgTrainer,
    matrpo_config,
    trainer_for,
    vpg_gradient,
    vpg_update,
)
from modules.learning.function_approx import WeightedLogLikelihood
from modules.learning.policies import AgentPolicy
from modules.learning.rs_trpo import RsTrpoTrainer
from modules.learning.trajectories import collect_batch, td_advantages

from conftest import DATA_DIR


@pytest.fixture
def batch_and_agents(toy_env):
    rng = np.random.default_rng(0)
    agents = [AgentPolicy.create(name, obs_dim, act_dim, [4], rng)
              for name, obs_dim, act_dim in zip(toy_env.fleet.agent_ids, toy_env.observation_dims,
                                                toy_env.action_dims)]
    batch = collect_batch(toy_env, agents, 2, seed_key=(0, 0, 0))
    td_advantages(batch, lambda states: np.zeros(len(states)))
    return batch, agents


def test_zero_advantages_leave_parameters(batch_and_agents):
    batch, agents = batch_and_agents
    batch.advantages = np.zeros(batch.rewards.shape)
    updated = vpg_update(batch, 0, agents[0].theta, learning_rate=0.1)
    np.testing.assert_array_equal(updated.values, agents[0].theta.values)


def test_zero_learning_rate_is_rejected():
    with pytest.raises(ConfigValidationError):
        BaselineConfig("vpg", learning_rate=0.0)


def test_update_without_advantages_raises(batch_and_agents):
    batch, agents = batch_and_agents
    batch.advantages = None
    with pytest.raises(NonFiniteError):
        vpg_update(batch, 0, agents[0].theta, learning_rate=0.1)


def test_vpg_gradient_matches_finite_differences(batch_and_agents):
    batch, agents = batch_and_agents
    theta = agents[3].theta
    d, t = batch.rewards.shape
    objective = WeightedLogLikelihood(batch.actions[3].reshape(d * t, -1), batch.advantages.reshape(-1))
    observations = batch.obs_norm[3].reshape(d * t, -1)
    analytic = vpg_gradient(batch, 3, theta).values
    numeric = np.zeros_like(theta.values)
    for i in range(len(numeric)):
        plus, minus = theta.values.copy(), theta.values.copy()
        plus[i] += 1e-6
        minus[i] -= 1e-6
        numeric[i] = (objective.value(theta.with_values(plus), observations)
                      - objective.value(theta.with_values(minus), observations)) / 2e-6
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)


def test_vpg_step_follows_gradient(batch_and_agents):
    batch, agents = batch_and_agents
    theta = agents[1].theta
    updated = vpg_update(batch, 1, theta, learning_rate=0.05)
    np.testing.assert_allclose(updated.values, theta.values + 0.05 * vpg_gradient(batch, 1, theta).values)


def test_matrpo_config_turns_off_risk_sensitivity(tiny_run):
    run = matrpo_config(tiny_run)
    assert run.algorithm == "matrpo"
    assert run.alpha == 1.0
    assert run.cvar_baseline == "none"


def test_matrpo_matches_full_selection_rs_trpo(toy_scenario, tiny_run):
    matrpo = MatrpoTrainer(MgcEnv.from_scenario(toy_scenario, DATA_DIR), tiny_run, seed=2).train()
    plain = with_overrides(tiny_run, alpha=1.0, cvar_baseline="none")
    reference = RsTrpoTrainer(MgcEnv.from_scenario(toy_scenario, DATA_DIR), plain, seed=2).train()
    pd.testing.assert_frame_equal(matrpo.metrics, reference.metrics)


def test_vpg_trainer_runs(toy_env, tiny_run):
    result = VpgTrainer(toy_env, tiny_run, seed=0).train()
    assert len(result.metrics) == tiny_run.iterations
    assert (result.metrics['agent_kl_1'] == 0.0).all()
    assert result.accepted_steps == []


def test_trainer_lookup():
    assert trainer_for("rs-trpo") is RsTrpoTrainer
    assert trainer_for("matrpo") is MatrpoTrainer
    assert trainer_for("vpg") is VpgTrainer
    with pytest.raises(ConfigValidationError):
        trainer_for("ppo")

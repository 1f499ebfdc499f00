"""Tests for the microgrid-cluster environment."""

import math

import numpy as np
import pytest

from modules.core.errors import BadScenario, EpisodeFinished
from modules.environment.assets import HOURS
from modules.environment.mgc_env import (
    TRANSITION_COLUMNS,
    MgcEnv,
    project_action,
    renewable_share,
    transition_record,
    transitions_frame,
)
from modules.harness.catalog import catalog_entry

from conftest import DATA_DIR


def zero_actions(env):
    return [np.zeros(dim) for dim in env.action_dims]


def run_day(env, seed, actions=None):
    state = env.reset(seed=seed)
    transitions = []
    while state is not None:
        transition, state = env.step(state, actions or zero_actions(env))
        transitions.append(transition)
    return transitions


def test_dimensions(toy_env):
    assert toy_env.n_agents == 4
    assert toy_env.action_dims == [1, 1, 1, 1]
    assert toy_env.observation_dims == [8, 8, 8, 8]
    state = toy_env.reset(seed=0)
    assert [len(obs) for obs in state.observations()] == toy_env.observation_dims
    assert len(state.vector()) == toy_env.state_dim


def test_reset_is_deterministic(toy_env):
    toy_env.reset(seed=np.random.SeedSequence([3, 0, 0, 1]))
    first = toy_env.realized_profiles()
    toy_env.reset(seed=np.random.SeedSequence([3, 0, 0, 1]))
    second = toy_env.realized_profiles()
    for key in first:
        np.testing.assert_array_equal(first[key], second[key])
    toy_env.reset(seed=np.random.SeedSequence([3, 0, 0, 2]))
    assert not np.array_equal(first['mg_load'], toy_env.realized_profiles()['mg_load'])


def test_initial_state_starts_at_midpoints(toy_env):
    state = toy_env.reset(seed=0)
    assert state.hour == 0
    np.testing.assert_allclose(state.prev_outputs, [0.15] * 4)
    np.testing.assert_allclose(state.headroom, [0.15] * 4)
    assert state.prev_balancing_cost == 0.0
    np.testing.assert_allclose(state.soc, [0.4])


def test_project_action_clips_and_ramps(toy_env):
    fleet = toy_env.fleet
    prev = np.array([0.15, 0.0, 0.15, 0.3])
    action = project_action([np.array([5.0]), np.array([1.0]), np.array([-1.0]), np.array([-1.0])],
                            fleet, prev)
    np.testing.assert_allclose(np.concatenate(action.p_mw), [0.3, 0.15, 0.0, 0.15])
    assert action.projected


def test_project_action_rejects_wrong_shape(toy_env):
    with pytest.raises(BadScenario):
        project_action([np.zeros(2)] * 4, toy_env.fleet, np.full(4, 0.15))
    with pytest.raises(BadScenario):
        project_action([np.zeros(1)] * 3, toy_env.fleet, np.full(4, 0.15))


def test_day_has_24_steps(toy_env):
    transitions = run_day(toy_env, seed=5)
    assert len(transitions) == HOURS
    assert [t.state.hour for t in transitions] == list(range(HOURS))
    assert transitions[-1].done and transitions[-1].next_state is None
    assert not any(t.done for t in transitions[:-1])


def test_step_without_reset_raises(toy_scenario):
    env = MgcEnv.from_scenario(toy_scenario, DATA_DIR)
    other = MgcEnv.from_scenario(toy_scenario, DATA_DIR)
    state = other.reset(seed=0)
    with pytest.raises(EpisodeFinished):
        env.step(state, zero_actions(env))


def test_reward_is_revenue_minus_costs(toy_env):
    for transition in run_day(toy_env, seed=1, actions=[np.array([0.5])] * 4):
        c = transition.components
        assert transition.reward == pytest.approx(
            c.revenue - c.balancing - c.generation - c.curtailment - c.voltage)
        assert transition.scaled_reward == pytest.approx(transition.reward / toy_env.reward_scale)
        assert c.voltage == 0.0


def test_regime_b_charges_voltage_to_reward():
    scenario, _ = catalog_entry("toy", regime="B")
    env = MgcEnv.from_scenario(scenario, DATA_DIR)
    state = env.reset(seed=2)
    transition, _ = env.step(state, zero_actions(env))
    assert transition.components.voltage == pytest.approx(
        env.prices.voltage_penalty * transition.dispatch.voltage_penalty)


def test_next_state_carries_outputs_forward(toy_env):
    state = toy_env.reset(seed=4)
    transition, next_state = toy_env.step(state, [np.array([1.0])] * 4)
    np.testing.assert_allclose(next_state.prev_outputs, np.concatenate(transition.action.p_mw))
    assert next_state.prev_balancing_cost == pytest.approx(
        transition.dispatch.balancing_price * transition.dispatch.delivered_total_mw)


def test_renewable_share_from_transition_log(toy_env):
    transitions = run_day(toy_env, seed=6)
    frame = transitions_frame([transition_record(0, t) for t in transitions])
    assert list(frame.columns) == TRANSITION_COLUMNS
    renewable = sum(t.renewable_mw for t in transitions)
    supply = sum(float(np.sum(t.mg_supply_mw)) for t in transitions)
    assert renewable_share(frame) == pytest.approx(renewable / supply)
    assert 0.0 < renewable_share(frame) < 1.0


# ==================== PROPERTIES ====================

PF_TAN = math.sqrt(1.0 - 0.95 ** 2) / 0.95
TOLERANCE = 1e-9


def catalog_env(scenario_id, regime="A"):
    scenario, _ = catalog_entry(scenario_id, regime=regime)
    return MgcEnv.from_scenario(scenario, DATA_DIR)


def random_day(env, seed):
    """Play one day with fresh uniform actions every hour, recording the realized profiles"""
    rng = np.random.default_rng(seed)
    state = env.reset(seed=np.random.SeedSequence([seed, 9]))
    profiles = env.realized_profiles()
    transitions = []
    while state is not None:
        actions = [rng.uniform(-1.5, 1.5, dim) for dim in env.action_dims]
        transition, state = env.step(state, actions)
        transitions.append(transition)
    return profiles, transitions


def test_projection_stays_in_feasible_interval():
    env = catalog_env("scenario4")
    generators = env.generators
    low = np.array([gen.p_min for gen in generators])
    high = np.array([gen.p_max for gen in generators])
    rng = np.random.default_rng(2024)

    for _ in range(10_000):
        prev = rng.uniform(low, high)
        raw = [rng.uniform(-1.5, 1.5, dim) for dim in env.action_dims]
        action = project_action(raw, env.fleet, prev)
        p = np.concatenate(action.p_mw)
        q = np.concatenate(action.q_mvar)
        a = np.concatenate(raw)
        for g, gen in enumerate(generators):
            lo = max(gen.p_min, prev[g] + gen.ramp_down)
            hi = min(gen.p_max, prev[g] + gen.ramp_up)
            target = gen.p_min + 0.5 * (min(1.0, max(-1.0, a[g])) + 1.0) * (gen.p_max - gen.p_min)
            expected = lo if target < lo else hi if target > hi else target
            assert lo - 1e-12 <= p[g] <= hi + 1e-12
            assert p[g] == pytest.approx(expected, abs=1e-12)
            assert q[g] == pytest.approx(min(gen.q_max, max(gen.q_min, p[g] * PF_TAN)), abs=1e-12)
            assert gen.q_min <= q[g] <= gen.q_max


@pytest.mark.parametrize("scenario_id,regime", [
    ("toy", "A"),
    ("toy", "B"),
    ("scenario4", "A"),
    ("toy_risk", "A"),
])
def test_settlement_balances_every_hour(scenario_id, regime):
    env = catalog_env(scenario_id, regime)
    adn_base = sum(env.topology.load_p_mw.values())
    for seed in range(3):
        profiles, transitions = random_day(env, seed)
        for transition in transitions:
            t = transition.state.hour
            dispatch = transition.dispatch
            supply = np.array([np.sum(p) for p in transition.action.p_mw]) + profiles['mg_rder'][:, t]
            load = profiles['mg_load'][:, t]
            np.testing.assert_allclose(transition.mg_supply_mw, supply, atol=1e-12)

            adn_total = profiles['adn_factor'][t] * env.adn_shape[t] * adn_base
            first_loss = dispatch.loss_mw - dispatch.loss_mismatch_mw
            demand = adn_total - np.sum(supply - load) + first_loss
            supplied = (sum(dispatch.rdg_mw.values()) + sum(dispatch.cdg_mw.values())
                        + sum(dispatch.ess_mw.values()) + dispatch.hv_import_mw)
            assert abs(supplied - (demand - dispatch.unserved_mw)) <= TOLERANCE


@pytest.mark.parametrize("scenario_id", ["toy", "scenario4", "toy_risk"])
def test_storage_stays_within_bands(scenario_id):
    env = catalog_env(scenario_id)
    for seed in range(3):
        _, transitions = random_day(env, seed)
        for transition in transitions:
            for k, ess in enumerate(env.fleet.dso_storage):
                soc = transition.state.soc[k]
                power = transition.dispatch.ess_mw[ess.id]
                assert ess.soc_min - 1e-12 <= soc <= ess.soc_max + 1e-12
                assert power <= ess.discharge_limit(soc) + 1e-12
                assert -power <= ess.charge_limit(soc) + 1e-12
                after = transition.dispatch.next_soc[ess.id]
                assert ess.soc_min - 1e-12 <= after <= ess.soc_max + 1e-12


@pytest.mark.parametrize("scenario_id", ["toy", "scenario4", "toy_risk"])
def test_no_curtailment_without_unserved_demand(scenario_id):
    env = catalog_env(scenario_id)
    for seed in range(3):
        profiles, transitions = random_day(env, seed)
        for transition in transitions:
            dispatch = transition.dispatch
            t = transition.state.hour
            deficits = np.maximum(0.0, profiles['mg_load'][:, t] - transition.mg_supply_mw)
            if dispatch.unserved_mw > TOLERANCE:
                assert dispatch.curtailed_total_mw + dispatch.adn_shed_mw == pytest.approx(
                    dispatch.unserved_mw, abs=TOLERANCE)
                continue
            assert dispatch.curtailed_total_mw == 0.0
            assert dispatch.adn_shed_mw == 0.0
            assert transition.components.curtailment == 0.0
            delivered = [dispatch.mg_delivered_mw[mg_id] for mg_id in env.fleet.agent_ids]
            np.testing.assert_allclose(delivered, deficits, atol=1e-12)


@pytest.mark.parametrize("scenario_id,regime", [
    ("toy", "A"),
    ("toy", "B"),
    ("scenario4", "A"),
    ("toy_risk", "A"),
])
def test_reward_matches_recomputed_cash_flows(scenario_id, regime):
    env = catalog_env(scenario_id, regime)
    prices = env.prices
    for seed in range(3):
        profiles, transitions = random_day(env, seed)
        for transition in transitions:
            t = transition.state.hour
            dispatch = transition.dispatch
            revenue = cost = 0.0
            delivered = curtailed = 0.0
            for k, mg in enumerate(env.fleet.microgrids):
                outputs = transition.action.p_mw[k]
                supply = float(np.sum(outputs)) + profiles['mg_rder'][k, t]
                load = profiles['mg_load'][k, t]
                revenue += prices.mg_retail * min(supply, load)
                cost += sum(gen.cost * p for gen, p in zip(mg.generators, outputs))
                delivered += dispatch.mg_delivered_mw[mg.id]
                curtailed += dispatch.mg_curtailed_mw[mg.id]
            expected = (revenue - dispatch.balancing_price * delivered - cost
                        - prices.curtailment_penalty * curtailed)
            if prices.voltage_in_reward:
                expected -= prices.voltage_penalty * dispatch.voltage_penalty
            assert transition.reward == pytest.approx(expected, rel=1e-12, abs=TOLERANCE)

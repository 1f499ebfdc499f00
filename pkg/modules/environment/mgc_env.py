"""
Microgrid Cluster Environment
Hourly Markov game: microgrid self-dispatch settled by a merit-order DSO
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from modules.core.config import ScenarioConfig, resolve_data_file
from modules.core.console import get_logger
from modules.core.errors import BadScenario, EpisodeFinished
from modules.environment.assets import (
    HOURS,
    AssetFleet,
    ControllableGenerator,
    PriceBook,
    build_price_book,
    load_fleet,
)
from modules.environment.dso import DsoDispatch, dso_merit_order_dispatch
from modules.environment.uncertainty import ErrorModel, build_error_model, sample_net_load
from modules.network.topology import NetworkTopology, load_network

logger = get_logger(__name__)

TRANSITION_COLUMNS = [
    'episode', 't', 'reward', 'revenue', 'balancing_cost', 'gen_cost', 'curtail_cost',
    'voltage_max_dev', 'hv_import', 'voltage_cost', 'renewable_mw', 'mg_supply_mw',
]


# ==================== STATE AND ACTIONS ====================

@dataclass(frozen=True)
class EnvState:
    """
    Observable state at the start of an hour

    Generator arrays follow fleet order; agent_slices maps each microgrid to
    its generators. Forecasts, not realizations, are observable.
    """

    hour: int
    adn_load_forecast: float
    mg_load_forecast: np.ndarray
    rder_forecast: np.ndarray
    prev_outputs: np.ndarray
    headroom: np.ndarray
    prev_balancing_cost: float
    dso_prev: np.ndarray
    soc: np.ndarray
    agent_slices: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        if not 0 <= self.hour < HOURS:
            raise EpisodeFinished("State hour outside the day", hour=self.hour)

    def _time_features(self) -> List[float]:
        angle = 2.0 * np.pi * self.hour / HOURS
        return [np.sin(angle), np.cos(angle)]

    def observation(self, agent: int) -> np.ndarray:
        """Local observation of one microgrid agent"""
        start, stop = self.agent_slices[agent]
        return np.concatenate([
            self._time_features(),
            [self.adn_load_forecast, self.mg_load_forecast[agent], self.rder_forecast[agent],
             self.prev_balancing_cost],
            self.prev_outputs[start:stop],
            self.headroom[start:stop],
        ])

    def observations(self) -> List[np.ndarray]:
        return [self.observation(k) for k in range(len(self.agent_slices))]

    def vector(self) -> np.ndarray:
        """Global state encoding used by the critic"""
        return np.concatenate([
            self._time_features(),
            [self.adn_load_forecast],
            self.mg_load_forecast,
            self.rder_forecast,
            [self.prev_balancing_cost],
            self.prev_outputs,
            self.headroom,
            self.dso_prev,
            self.soc,
        ])


@dataclass
class JointAction:
    """Per-agent normalized actions and, once projected, MW / MVAr setpoints"""

    raw: List[np.ndarray]
    p_mw: Optional[List[np.ndarray]] = None
    q_mvar: Optional[List[np.ndarray]] = None

    @property
    def projected(self) -> bool:
        return self.p_mw is not None


@dataclass
class RewardComponents:
    """Common-reward terms in RMB; total = revenue minus every cost term"""

    revenue: float
    balancing: float
    generation: float
    curtailment: float
    voltage: float = 0.0

    @property
    def total(self) -> float:
        return self.revenue - self.balancing - self.generation - self.curtailment - self.voltage


@dataclass
class Transition:
    state: EnvState
    observations: List[np.ndarray]
    action: JointAction
    reward: float
    scaled_reward: float
    components: RewardComponents
    next_state: Optional[EnvState]
    done: bool
    dispatch: DsoDispatch
    mg_supply_mw: np.ndarray
    renewable_mw: float
    log_probs: Optional[np.ndarray] = None


# ==================== PURE OPERATIONS ====================

def project_action(raw: Sequence[np.ndarray], fleet: AssetFleet,
                   prev_outputs: np.ndarray) -> JointAction:
    """
    Map normalized actions onto feasible generator setpoints

    Each dimension is clipped to [-1, 1], mapped affinely onto [p_min, p_max]
    and then clipped to the ramp band around the previous output intersected
    with the capacity band. Reactive output follows a fixed power factor.
    """
    if len(raw) != fleet.n_agents:
        raise BadScenario("Joint action does not cover every agent",
                          expected=fleet.n_agents, got=len(raw))
    p_out, q_out = [], []
    index = 0
    for mg, action in zip(fleet.microgrids, raw):
        action = np.asarray(action, dtype=float).reshape(-1)
        if action.shape[0] != mg.action_dim:
            raise BadScenario("Action dimension mismatch", agent=mg.id,
                              expected=mg.action_dim, got=action.shape[0])
        clipped = np.clip(action, -1.0, 1.0)
        p_agent = np.empty(mg.action_dim)
        q_agent = np.empty(mg.action_dim)
        for q, gen in enumerate(mg.generators):
            target = gen.p_min + 0.5 * (clipped[q] + 1.0) * (gen.p_max - gen.p_min)
            low, high = gen.feasible_band(float(prev_outputs[index]))
            p_agent[q] = min(high, max(low, target))
            q_agent[q] = gen.reactive_output(p_agent[q])
            index += 1
        p_out.append(p_agent)
        q_out.append(q_agent)
    return JointAction(raw=[np.asarray(a, dtype=float) for a in raw], p_mw=p_out, q_mvar=q_out)


def mg_supply(action: JointAction, rder_realized: Sequence[float]) -> np.ndarray:
    """Per-microgrid output: dispatched generation plus realized renewables"""
    if not action.projected:
        raise BadScenario("mg_supply needs a projected action")
    return np.array([float(np.sum(p)) + float(r) for p, r in zip(action.p_mw, rder_realized)])


def headrooms(generators: Sequence[ControllableGenerator], prev_outputs: np.ndarray) -> np.ndarray:
    """Upward room per generator given ramp and capacity"""
    return np.array([gen.feasible_band(float(p))[1] - float(p)
                     for gen, p in zip(generators, prev_outputs)])


# ==================== ENVIRONMENT ====================

@dataclass
class _Realization:
    mg_rder: np.ndarray       # (K, T) per-MG renewable sum
    dso_rder: np.ndarray      # (R_dso, T)
    mg_load: np.ndarray       # (K, T)
    adn_factor: np.ndarray    # (T,) realized / forecast


class MgcEnv:
    """
    Microgrid-cluster Markov game over one 24-hour day

    An instance is single-writer: reset() pre-samples the whole day and
    step() advances it one hour at a time.
    """

    def __init__(self, topology: NetworkTopology, fleet: AssetFleet, prices: PriceBook,
                 scenario_id: str = "custom", initial_soc: Optional[float] = None,
                 reward_scale: Optional[float] = None, allow_curtailment: bool = True):
        fleet.validate_against(topology)
        self.topology = topology
        self.fleet = fleet
        self.prices = prices
        self.scenario_id = scenario_id
        self.allow_curtailment = allow_curtailment
        self.initial_soc = initial_soc

        self.generators = fleet.mg_generators()
        slices, start = [], 0
        for mg in fleet.microgrids:
            slices.append((start, start + mg.action_dim))
            start += mg.action_dim
        self.agent_slices = tuple(slices)

        self.mg_load_forecast = np.array([mg.load_forecast for mg in fleet.microgrids])
        self.mg_rder_forecast = np.array([
            np.sum([u.forecast for u in mg.renewables], axis=0) if mg.renewables else np.zeros(HOURS)
            for mg in fleet.microgrids
        ])
        self.adn_shape = np.asarray(fleet.adn_load_shape, dtype=float)
        base_p = sum(topology.load_p_mw.values())
        self.adn_load_forecast = base_p * self.adn_shape

        peak = float(np.max(self.mg_load_forecast.sum(axis=0)))
        self.reward_scale = reward_scale or max(prices.mg_retail * peak, 1.0)

        self.error_model = self._error_model()
        self._realized: Optional[_Realization] = None
        self.state: Optional[EnvState] = None

    # ==================== CONSTRUCTION ====================

    @classmethod
    def from_scenario(cls, scenario: ScenarioConfig, data_path: Optional[Path] = None) -> "MgcEnv":
        """Build an environment from a scenario config and its data files"""
        topology = load_network(resolve_data_file(scenario.network_file, data_path))
        base_fleet = load_fleet(resolve_data_file(scenario.fleet_file, data_path))
        fleet = base_fleet.scaled(scenario.load_scale, scenario.uncertainty_scale)
        prices = build_price_book(fleet, scenario.penalty_regime, scenario.balancing_uplift,
                                  scenario.alpha_v, scenario.beta_v)
        return cls(topology, fleet, prices, scenario_id=scenario.scenario_id,
                   initial_soc=scenario.initial_soc, reward_scale=scenario.reward_scale)

    def _error_model(self) -> ErrorModel:
        sigma, caps, groups, labels = [], [], [], []
        for mg in self.fleet.microgrids:
            for unit in mg.renewables:
                sigma.append(unit.error_std)
                caps.append(unit.capacity)
                groups.append(unit.group)
                labels.append(unit.id)
        for unit in self.fleet.dso_renewables:
            sigma.append(unit.error_std)
            caps.append(unit.capacity)
            groups.append(unit.group)
            labels.append(unit.id)
        for mg in self.fleet.microgrids:
            sigma.append(mg.load_error_std)
            caps.append(np.inf)
            groups.append(mg.load_group)
            labels.append(f"{mg.id}_load")
        sigma.append(self.fleet.adn_error_std)
        caps.append(np.inf)
        groups.append(self.fleet.adn_group)
        labels.append("adn_load")
        return build_error_model(sigma, caps, groups, self.fleet.correlation, labels)

    def _forecast_matrix(self) -> np.ndarray:
        rows = [u.forecast for mg in self.fleet.microgrids for u in mg.renewables]
        rows += [u.forecast for u in self.fleet.dso_renewables]
        rows += [mg.load_forecast for mg in self.fleet.microgrids]
        rows.append(np.ones(HOURS))
        return np.array(rows, dtype=float)

    # ==================== DIMENSIONS ====================

    @property
    def n_agents(self) -> int:
        return self.fleet.n_agents

    @property
    def action_dims(self) -> List[int]:
        return self.fleet.action_dims

    @property
    def observation_dims(self) -> List[int]:
        return [6 + 2 * dim for dim in self.action_dims]

    @property
    def state_dim(self) -> int:
        n_gen = len(self.generators)
        return (3 + 2 * self.n_agents + 1 + 2 * n_gen
                + len(self.fleet.dso_generators) + len(self.fleet.dso_storage))

    # ==================== EPISODE ====================

    def reset(self, seed: Union[int, np.random.SeedSequence, None] = None) -> EnvState:
        """
        Start a new day

        All 24 hours of renewable and load realizations are drawn here from the
        seeded uncertainty model. Generators start at their band midpoints.
        """
        realized = sample_net_load(self._forecast_matrix(), self.error_model, seed)
        n_mg_rder = sum(len(mg.renewables) for mg in self.fleet.microgrids)
        n_dso = len(self.fleet.dso_renewables)
        mg_rder, offset = [], 0
        for mg in self.fleet.microgrids:
            count = len(mg.renewables)
            mg_rder.append(realized[offset:offset + count].sum(axis=0) if count else np.zeros(HOURS))
            offset += count
        k = self.n_agents
        self._realized = _Realization(
            mg_rder=np.array(mg_rder),
            dso_rder=realized[n_mg_rder:n_mg_rder + n_dso],
            mg_load=realized[n_mg_rder + n_dso:n_mg_rder + n_dso + k],
            adn_factor=realized[-1],
        )

        prev = np.array([gen.midpoint for gen in self.generators])
        soc = np.array([
            self.initial_soc if self.initial_soc is not None else ess.soc_init
            for ess in self.fleet.dso_storage
        ])
        for ess, value in zip(self.fleet.dso_storage, soc):
            if not ess.soc_min <= value <= ess.soc_max:
                raise BadScenario("Initial SOC outside the storage band", storage=ess.id, soc=value)
        self.state = self._make_state(
            hour=0,
            prev=prev,
            prev_cost=0.0,
            dso_prev=np.array([gen.midpoint for gen in self.fleet.dso_generators]),
            soc=soc,
        )
        return self.state

    def _make_state(self, hour: int, prev: np.ndarray, prev_cost: float,
                    dso_prev: np.ndarray, soc: np.ndarray) -> EnvState:
        return EnvState(
            hour=hour,
            adn_load_forecast=float(self.adn_load_forecast[hour]),
            mg_load_forecast=self.mg_load_forecast[:, hour].copy(),
            rder_forecast=self.mg_rder_forecast[:, hour].copy(),
            prev_outputs=prev.copy(),
            headroom=headrooms(self.generators, prev),
            prev_balancing_cost=float(prev_cost),
            dso_prev=dso_prev.copy(),
            soc=soc.copy(),
            agent_slices=self.agent_slices,
        )

    def step(self, state: EnvState, joint_action: Union[JointAction, Sequence[np.ndarray]]
             ) -> Tuple[Transition, Optional[EnvState]]:
        """
        Advance one hour

        Projects the action, settles imbalances through the DSO, computes the
        common reward and returns the transition with the next state (None
        after the last hour).
        """
        if self._realized is None:
            raise EpisodeFinished("Environment needs reset() before step()")
        t = state.hour
        raw = joint_action.raw if isinstance(joint_action, JointAction) else list(joint_action)
        action = project_action(raw, self.fleet, state.prev_outputs)

        rder = self._realized.mg_rder[:, t]
        supply = mg_supply(action, rder)
        load = self._realized.mg_load[:, t]
        net_p = supply - load
        q_gen = np.array([float(np.sum(q)) for q in action.q_mvar])
        q_load = load * np.array([mg.load_q_ratio for mg in self.fleet.microgrids])
        net_q = q_gen - q_load

        ids = self.fleet.agent_ids
        adn_factor = float(self._realized.adn_factor[t]) * self.adn_shape[t]
        dispatch = dso_merit_order_dispatch(
            topology=self.topology,
            fleet=self.fleet,
            prices=self.prices,
            hour=t,
            adn_load_p={b: v * adn_factor for b, v in self.topology.load_p_mw.items()},
            adn_load_q={b: v * adn_factor for b, v in self.topology.load_q_mvar.items()},
            mg_net_p=dict(zip(ids, net_p)),
            mg_net_q=dict(zip(ids, net_q)),
            dso_prev=dict(zip([g.id for g in self.fleet.dso_generators], state.dso_prev)),
            soc=dict(zip([e.id for e in self.fleet.dso_storage], state.soc)),
            rdg_available=dict(zip([u.id for u in self.fleet.dso_renewables],
                                   self._realized.dso_rder[:, t])),
            allow_curtailment=self.allow_curtailment,
        )

        outputs = np.concatenate(action.p_mw)
        delivered = sum(dispatch.mg_delivered_mw.values())
        curtailed = sum(dispatch.mg_curtailed_mw.values())
        if curtailed > 0:
            logger.warning(f"Hour {t}: {curtailed:.4f} MW of microgrid load curtailed")

        balancing_payment = dispatch.balancing_price * delivered
        # retail revenue counts only own-served load; surplus exported to the ADN earns nothing
        components = RewardComponents(
            revenue=self.prices.mg_retail * float(np.sum(np.minimum(supply, load))),
            balancing=balancing_payment,
            generation=float(sum(gen.cost * p for gen, p in zip(self.generators, outputs))),
            curtailment=self.prices.curtailment_penalty * curtailed,
            voltage=(self.prices.voltage_penalty * dispatch.voltage_penalty
                     if self.prices.voltage_in_reward else 0.0),
        )
        reward = components.total

        done = t + 1 >= HOURS
        next_state = None
        if not done:
            dso_prev = np.array([dispatch.cdg_mw[g.id] for g in self.fleet.dso_generators])
            soc = np.array([dispatch.next_soc[e.id] for e in self.fleet.dso_storage])
            next_state = self._make_state(t + 1, outputs, balancing_payment, dso_prev, soc)
        self.state = next_state

        transition = Transition(
            state=state,
            observations=state.observations(),
            action=action,
            reward=reward,
            scaled_reward=reward / self.reward_scale,
            components=components,
            next_state=next_state,
            done=done,
            dispatch=dispatch,
            mg_supply_mw=supply,
            renewable_mw=float(np.sum(rder)),
        )
        return transition, next_state

    def realized_profiles(self) -> Dict[str, np.ndarray]:
        """Pre-sampled realizations of the current day (copies)"""
        if self._realized is None:
            raise EpisodeFinished("Environment needs reset() first")
        return {
            'mg_rder': self._realized.mg_rder.copy(),
            'dso_rder': self._realized.dso_rder.copy(),
            'mg_load': self._realized.mg_load.copy(),
            'adn_factor': self._realized.adn_factor.copy(),
        }


# ==================== TRANSITION LOG ====================

def transition_record(episode: int, transition: Transition) -> Dict:
    c = transition.components
    return {
        'episode': episode,
        't': transition.state.hour,
        'reward': transition.reward,
        'revenue': c.revenue,
        'balancing_cost': c.balancing,
        'gen_cost': c.generation,
        'curtail_cost': c.curtailment,
        'voltage_max_dev': transition.dispatch.voltage_max_dev,
        'hv_import': transition.dispatch.hv_import_mw,
        'voltage_cost': c.voltage,
        'renewable_mw': transition.renewable_mw,
        'mg_supply_mw': float(np.sum(transition.mg_supply_mw)),
    }


def transitions_frame(records: List[Dict]) -> pd.DataFrame:
    """Transition log with a fixed column order"""
    return pd.DataFrame(records, columns=TRANSITION_COLUMNS)


def renewable_share(frame: pd.DataFrame) -> float:
    """Renewable MWh over total microgrid MWh"""
    supply = float(frame['mg_supply_mw'].sum())
    return float(frame['renewable_mw'].sum()) / supply if supply > 0 else 0.0

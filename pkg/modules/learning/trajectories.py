"""
Trajectory Module
Seeded episode collection and temporal-difference advantages
"""

import copy
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from modules.core.errors import EmptyBatch, NonFiniteError
from modules.environment.assets import HOURS
from modules.environment.mgc_env import MgcEnv, transition_record
from modules.learning.policies import AgentPolicy

STD_FLOOR = 1e-12


@dataclass
class EpisodeResult:
    states: np.ndarray            # (T, S)
    next_states: np.ndarray       # (T, S), zeros after the last hour
    dones: np.ndarray             # (T,)
    obs: List[np.ndarray]         # per agent (T, o_k) raw
    obs_norm: List[np.ndarray]    # per agent (T, o_k) normalized at collection time
    actions: List[np.ndarray]     # per agent (T, a_k)
    log_probs: np.ndarray         # (p, T)
    raw_rewards: np.ndarray       # (T,) RMB
    rewards: np.ndarray           # (T,) scaled
    voltage_max_dev: np.ndarray   # (T,)
    renewable_mw: np.ndarray      # (T,)
    supply_mw: np.ndarray         # (T,)
    records: List[Dict] = field(default_factory=list)


@dataclass
class TrajectoryBatch:
    """
    D episodes of T hourly transitions

    Per-agent arrays are lists indexed by agent in fleet order. Advantages
    and the CVaR selection are filled in by the trainer.
    """

    states: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    obs: List[np.ndarray]
    obs_norm: List[np.ndarray]
    actions: List[np.ndarray]
    old_log_probs: np.ndarray     # (p, D, T)
    raw_rewards: np.ndarray       # (D, T)
    rewards: np.ndarray           # (D, T)
    gamma: float
    voltage_max_dev: np.ndarray
    renewable_mw: np.ndarray
    supply_mw: np.ndarray
    records: List[Dict] = field(default_factory=list)
    td_errors: Optional[np.ndarray] = None
    advantages: Optional[np.ndarray] = None
    selected: Optional[np.ndarray] = None
    var_estimate: Optional[float] = None

    @property
    def n_episodes(self) -> int:
        return self.rewards.shape[0]

    @property
    def horizon(self) -> int:
        return self.rewards.shape[1]

    @property
    def n_agents(self) -> int:
        return len(self.actions)

    @property
    def discounts(self) -> np.ndarray:
        return self.gamma ** np.arange(self.horizon)

    @property
    def episode_returns(self) -> np.ndarray:
        """Discounted scaled return per episode, sum_t gamma^t r_t"""
        return self.rewards @ self.discounts

    @property
    def undiscounted_returns(self) -> np.ndarray:
        """Scaled undiscounted return per episode (ordering used for CVaR selection)"""
        return self.rewards.sum(axis=1)

    @property
    def raw_returns(self) -> np.ndarray:
        """Undiscounted return per episode in RMB"""
        return self.raw_rewards.sum(axis=1)

    @property
    def returns_to_go(self) -> np.ndarray:
        """Discounted scaled return from every step, shape (D, T)"""
        out = np.zeros_like(self.rewards)
        running = np.zeros(self.n_episodes)
        for t in range(self.horizon - 1, -1, -1):
            running = self.rewards[:, t] + self.gamma * running
            out[:, t] = running
        return out

    @property
    def renewable_share(self) -> float:
        supply = float(self.supply_mw.sum())
        return float(self.renewable_mw.sum()) / supply if supply > 0 else 0.0


def episode_seed(key: Sequence[int], episode: int) -> np.random.SeedSequence:
    """Seed of one episode from a stream key, independent of worker scheduling"""
    return np.random.SeedSequence([*key, episode])


def run_episode(env: MgcEnv, agents: Sequence[AgentPolicy], seed: np.random.SeedSequence,
                deterministic: bool = False, keep_records: bool = False,
                episode_index: int = 0) -> EpisodeResult:
    """Roll out one 24-hour day with every agent acting on its own observation"""
    env_seed, action_seed = seed.spawn(2)
    rng = np.random.default_rng(action_seed)
    state = env.reset(env_seed)
    p = len(agents)

    states, next_states, dones = [], [], []
    obs = [[] for _ in range(p)]
    obs_norm = [[] for _ in range(p)]
    actions = [[] for _ in range(p)]
    log_probs = np.zeros((p, HOURS))
    raw_rewards, rewards = np.zeros(HOURS), np.zeros(HOURS)
    vdev, ren, supply = np.zeros(HOURS), np.zeros(HOURS), np.zeros(HOURS)
    records = []

    for t in range(HOURS):
        joint = []
        for k, agent in enumerate(agents):
            observation = state.observation(k)
            action, logp, normalized = agent.act(observation, rng, deterministic)
            obs[k].append(observation)
            obs_norm[k].append(normalized)
            actions[k].append(action)
            log_probs[k, t] = logp
            joint.append(action)

        transition, next_state = env.step(state, joint)
        transition.log_probs = log_probs[:, t].copy()
        states.append(state.vector())
        next_states.append(next_state.vector() if next_state is not None else np.zeros_like(states[-1]))
        dones.append(transition.done)
        raw_rewards[t] = transition.reward
        rewards[t] = transition.scaled_reward
        vdev[t] = transition.dispatch.voltage_max_dev
        ren[t] = transition.renewable_mw
        supply[t] = float(np.sum(transition.mg_supply_mw))
        if keep_records:
            records.append(transition_record(episode_index, transition))
        if next_state is None:
            break
        state = next_state

    return EpisodeResult(
        states=np.array(states), next_states=np.array(next_states), dones=np.array(dones, dtype=bool),
        obs=[np.array(o) for o in obs], obs_norm=[np.array(o) for o in obs_norm],
        actions=[np.array(a) for a in actions], log_probs=log_probs,
        raw_rewards=raw_rewards, rewards=rewards, voltage_max_dev=vdev,
        renewable_mw=ren, supply_mw=supply, records=records,
    )


def stack_episodes(episodes: List[EpisodeResult], gamma: float) -> TrajectoryBatch:
    if not episodes:
        raise EmptyBatch("No episodes to stack")
    p = len(episodes[0].actions)
    records = [r for e in episodes for r in e.records]
    return TrajectoryBatch(
        states=np.stack([e.states for e in episodes]),
        next_states=np.stack([e.next_states for e in episodes]),
        dones=np.stack([e.dones for e in episodes]),
        obs=[np.stack([e.obs[k] for e in episodes]) for k in range(p)],
        obs_norm=[np.stack([e.obs_norm[k] for e in episodes]) for k in range(p)],
        actions=[np.stack([e.actions[k] for e in episodes]) for k in range(p)],
        old_log_probs=np.stack([e.log_probs for e in episodes], axis=1),
        raw_rewards=np.stack([e.raw_rewards for e in episodes]),
        rewards=np.stack([e.rewards for e in episodes]),
        gamma=gamma,
        voltage_max_dev=np.stack([e.voltage_max_dev for e in episodes]),
        renewable_mw=np.stack([e.renewable_mw for e in episodes]),
        supply_mw=np.stack([e.supply_mw for e in episodes]),
        records=records,
    )


def collect_batch(env: MgcEnv, agents: Sequence[AgentPolicy], n_episodes: int,
                  seed_key: Sequence[int], gamma: float = 0.9, deterministic: bool = False,
                  workers: int = 1, keep_records: bool = False) -> TrajectoryBatch:
    """
    Collect D full episodes under the current joint policy

    Episode d draws its environment and action noise from
    SeedSequence([*seed_key, d]); with workers > 1 episodes run on deep
    copies of the environment and are reassembled in episode order.

    Args:
        env: Environment template
        agents: One policy per microgrid, fleet order
        n_episodes: Batch size D
        seed_key: Stream key, e.g. (run seed, tag, iteration)
        gamma: Discount for returns
        deterministic: Act with the policy means
        workers: Thread fan-out
        keep_records: Keep per-step transition log rows

    Returns:
        TrajectoryBatch
    """
    if n_episodes < 1:
        raise EmptyBatch("Batch size must be at least one episode")

    def work(d: int, environment: MgcEnv) -> EpisodeResult:
        return run_episode(environment, agents, episode_seed(seed_key, d), deterministic,
                           keep_records, episode_index=d)

    if workers <= 1:
        episodes = [work(d, env) for d in range(n_episodes)]
    else:
        copies = [copy.deepcopy(env) for _ in range(n_episodes)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            episodes = list(pool.map(work, range(n_episodes), copies))
    return stack_episodes(episodes, gamma)


def td_advantages(batch: TrajectoryBatch, value_fn: Callable[[np.ndarray], np.ndarray],
                  gamma: Optional[float] = None, standardize: bool = True) -> TrajectoryBatch:
    """
    Fill one-step TD errors and advantages

    psi_t = r_t + gamma * V(s_{t+1}) - V(s_t), with V = 0 after the last hour.
    Standardized advantages have zero batch mean and unit std (only centered
    when the std vanishes).
    """
    gamma = batch.gamma if gamma is None else gamma
    d, t = batch.rewards.shape
    flat_states = batch.states.reshape(d * t, -1)
    flat_next = batch.next_states.reshape(d * t, -1)
    values = np.asarray(value_fn(flat_states), dtype=float).reshape(d, t)
    next_values = np.asarray(value_fn(flat_next), dtype=float).reshape(d, t)
    next_values = np.where(batch.dones, 0.0, next_values)

    td = batch.rewards + gamma * next_values - values
    if not np.all(np.isfinite(td)):
        raise NonFiniteError("Non-finite TD errors")
    batch.td_errors = td
    if standardize:
        centered = td - td.mean()
        std = td.std()
        batch.advantages = centered / std if std > STD_FLOOR else centered
    else:
        batch.advantages = td.copy()
    return batch

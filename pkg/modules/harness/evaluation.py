"""
Evaluation Module
Deterministic policy evaluation over seeded episodes
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.core.errors import BadScenario
from modules.environment.mgc_env import MgcEnv, renewable_share, transitions_frame
from modules.learning.checkpoint import load_checkpoint
from modules.learning.policies import AgentPolicy, Critic
from modules.learning.rs_trpo import EVAL_STREAM, cvar_of
from modules.learning.trajectories import collect_batch

EVALUATION_COLUMNS = [
    'algorithm', 'scenario_id', 'seed', 'episode', 'return', 'scaled_return',
    'voltage_max_dev', 'renewable_mwh', 'supply_mwh', 'renewable_share',
]

REPORT_ALPHA = 0.5


@dataclass
class EvaluationResult:
    episodes: pd.DataFrame
    transitions: pd.DataFrame

    @property
    def returns(self) -> np.ndarray:
        return self.episodes['return'].to_numpy()

    @property
    def mean_return(self) -> float:
        return float(self.returns.mean())

    @property
    def cvar_return(self) -> float:
        return cvar_of(self.returns, REPORT_ALPHA)

    @property
    def voltage_max_dev(self) -> float:
        return float(self.episodes['voltage_max_dev'].max())

    @property
    def renewable_share(self) -> float:
        return renewable_share(self.transitions)

    def summary(self) -> Dict:
        return summarize_evaluation(self.episodes, self.transitions)


def evaluate_policies(env: MgcEnv, agents: Sequence[AgentPolicy], seed: int, episodes: int = 20,
                      algorithm: str = "", gamma: float = 0.9) -> EvaluationResult:
    """
    Roll out the policy means on evaluation seeds

    Episode d uses SeedSequence([seed, 1, 0, d]); training streams never
    share these seeds. Only environment noise varies across episodes.
    """
    batch = collect_batch(env, agents, episodes, seed_key=(seed, EVAL_STREAM, 0), gamma=gamma,
                          deterministic=True, keep_records=True)
    renewable = batch.renewable_mw.sum(axis=1)
    supply = batch.supply_mw.sum(axis=1)
    frame = pd.DataFrame({
        'algorithm': algorithm,
        'scenario_id': env.scenario_id,
        'seed': seed,
        'episode': np.arange(episodes),
        'return': batch.raw_returns,
        'scaled_return': batch.undiscounted_returns,
        'voltage_max_dev': batch.voltage_max_dev.max(axis=1),
        'renewable_mwh': renewable,
        'supply_mwh': supply,
        'renewable_share': np.divide(renewable, supply, out=np.zeros_like(renewable), where=supply > 0),
    }, columns=EVALUATION_COLUMNS)
    return EvaluationResult(episodes=frame, transitions=transitions_frame(batch.records))


def summarize_evaluation(episodes: pd.DataFrame, transitions: pd.DataFrame) -> Dict:
    """Report metrics pooled over every seed and episode of an evaluation table"""
    returns = episodes['return'].to_numpy(dtype=float)
    return {
        'episodes': int(len(returns)),
        'mean_return': float(returns.mean()),
        'cvar_05_return': cvar_of(returns, REPORT_ALPHA),
        'voltage_max_dev': float(episodes['voltage_max_dev'].max()),
        'renewable_share': renewable_share(transitions),
    }


def policies_from_checkpoint(path: Path, env: MgcEnv) -> Tuple[List[AgentPolicy], Critic]:
    """Rebuild the agents and critic stored by a trainer checkpoint"""
    checkpoint = load_checkpoint(path)
    names = checkpoint.extra.get('agents', [])
    if list(names) != list(env.fleet.agent_ids):
        raise BadScenario("Checkpoint agents do not match the scenario fleet",
                          checkpoint=names, fleet=env.fleet.agent_ids)
    agents = []
    for name in names:
        normalizer = checkpoint.normalizers[name]
        normalizer.frozen = True
        agents.append(AgentPolicy(name, checkpoint.params[name], normalizer))
    critic = Critic(checkpoint.params['critic'], checkpoint.normalizers['critic'])
    return agents, critic

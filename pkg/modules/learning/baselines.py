"""
Baselines Module
Vanilla policy gradient and non-risk-sensitive sequential TRPO
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from modules.core.config import RunConfig, ScenarioConfig, with_overrides
from modules.core.errors import ConfigValidationError, NonFiniteError
from modules.environment.mgc_env import MgcEnv
from modules.learning.function_approx import ParamVector, WeightedLogLikelihood
from modules.learning.rs_trpo import RsTrpoTrainer, TrainingResult, TrustRegionConfig, train
from modules.learning.trajectories import TrajectoryBatch


@dataclass(frozen=True)
class BaselineConfig:
    algorithm: str
    learning_rate: float = 1e-3
    trust_region: TrustRegionConfig = field(default_factory=TrustRegionConfig)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigValidationError("Learning rate must be positive",
                                        field_path="run.vpg_learning_rate", reason=str(self.learning_rate))

    @classmethod
    def from_run(cls, run: RunConfig, seed: int = 0) -> "BaselineConfig":
        return cls(run.algorithm, run.vpg_learning_rate, TrustRegionConfig.from_run(run), seed)


def vpg_gradient(batch: TrajectoryBatch, agent: int, theta: ParamVector) -> ParamVector:
    """(1/(D*T)) * sum of grad log pi(a_t | o_t) * psi_t over the whole batch"""
    d, t = batch.rewards.shape
    obs = batch.obs_norm[agent].reshape(d * t, -1)
    actions = batch.actions[agent].reshape(d * t, -1)
    loss = WeightedLogLikelihood(actions, batch.advantages.reshape(-1), denominator=d * t)
    _, g = loss.value_and_grad(theta, obs)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("Non-finite policy gradient", agent=agent)
    return theta.with_values(g)


def vpg_update(batch: TrajectoryBatch, agent: int, theta: ParamVector, learning_rate: float) -> ParamVector:
    """Plain gradient ascent step, no KL constraint and no line search"""
    if batch.advantages is None:
        raise NonFiniteError("Batch has no advantages")
    g = vpg_gradient(batch, agent, theta)
    return theta.with_values(theta.values + learning_rate * g.values)


class VpgTrainer(RsTrpoTrainer):
    """Every agent steps independently on the same batch; nothing else changes"""

    algorithm = "vpg"

    def update_agents(self, batch: TrajectoryBatch) -> Dict:
        for k, agent in enumerate(self.agents):
            agent.theta = vpg_update(batch, k, agent.theta, self.run.vpg_learning_rate)
        return {}


def matrpo_config(run: RunConfig) -> RunConfig:
    return with_overrides(run, algorithm="matrpo", alpha=1.0, cvar_baseline="none")


class MatrpoTrainer(RsTrpoTrainer):
    algorithm = "matrpo"

    def __init__(self, env: MgcEnv, run: RunConfig, seed: int, checkpoint_dir: Optional[Path] = None):
        super().__init__(env, matrpo_config(run), seed, checkpoint_dir)


def matrpo_train(scenario: ScenarioConfig, run: RunConfig, seed: int,
                 checkpoint_dir: Optional[Path] = None, env: Optional[MgcEnv] = None) -> TrainingResult:
    """RS-TRPO with every episode selected and the CVaR baseline switched off"""
    return train(scenario, run, seed, checkpoint_dir, env, trainer_cls=MatrpoTrainer)


def vpg_train(scenario: ScenarioConfig, run: RunConfig, seed: int,
              checkpoint_dir: Optional[Path] = None, env: Optional[MgcEnv] = None) -> TrainingResult:
    return train(scenario, run, seed, checkpoint_dir, env, trainer_cls=VpgTrainer)


TRAINERS = {
    "rs-trpo": RsTrpoTrainer,
    "matrpo": MatrpoTrainer,
    "vpg": VpgTrainer,
}


def trainer_for(algorithm: str):
    try:
        return TRAINERS[algorithm]
    except KeyError:
        raise ConfigValidationError(f"Unknown algorithm '{algorithm}'", field_path="run.algorithm",
                                    reason=f"expected one of {sorted(TRAINERS)}")

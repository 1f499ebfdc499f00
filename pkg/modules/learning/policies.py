"""
Policies Module
Per-agent Gaussian actors and the centralized critic
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from modules.learning.function_approx import (
    MlpSpec,
    ParamVector,
    actor_forward,
    gaussian_log_density,
    init_params,
    value_forward,
)
from modules.learning.optim import RunningNormalizer


@dataclass
class AgentPolicy:
    """One microgrid's actor: parameters plus its observation normalizer"""

    name: str
    theta: ParamVector
    normalizer: RunningNormalizer

    @classmethod
    def create(cls, name: str, obs_dim: int, action_dim: int, hidden_sizes: Sequence[int],
               rng: np.random.Generator) -> "AgentPolicy":
        spec = MlpSpec(obs_dim, action_dim, tuple(hidden_sizes), "gaussian")
        return cls(name, init_params(spec, rng), RunningNormalizer(obs_dim))

    def act(self, observation: np.ndarray, rng: np.random.Generator,
            deterministic: bool = False) -> Tuple[np.ndarray, float, np.ndarray]:
        """
        Sample an action for one raw observation

        Returns:
            (action, log-probability, normalized observation)
        """
        obs = self.normalizer.normalize(observation)
        out = actor_forward(self.theta, obs)
        if deterministic:
            action = out.mean.copy()
        else:
            action = out.mean + out.std * rng.standard_normal(out.mean.shape)
        return action, float(gaussian_log_density(action, out.mean, out.log_std)), obs


@dataclass
class Critic:
    """State-value network over the global state encoding"""

    phi: ParamVector
    normalizer: RunningNormalizer

    @classmethod
    def create(cls, state_dim: int, hidden_sizes: Sequence[int], rng: np.random.Generator) -> "Critic":
        spec = MlpSpec(state_dim, 1, tuple(hidden_sizes), "value")
        return cls(init_params(spec, rng), RunningNormalizer(state_dim))

    def value(self, states: np.ndarray) -> np.ndarray:
        return np.atleast_1d(value_forward(self.phi, self.normalizer.normalize(np.atleast_2d(states))))

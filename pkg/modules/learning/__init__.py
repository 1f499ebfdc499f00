"""
Learning Module
Numpy actor/critic networks, RS-TRPO and the comparison learners
"""

from .function_approx import MlpSpec, ParamVector, actor_forward, log_prob, mean_kl, fisher_vector_product
from .policies import AgentPolicy, Critic
from .trajectories import TrajectoryBatch, collect_batch, td_advantages
from .rs_trpo import (
    CvarConfig,
    TrustRegionConfig,
    RsTrpoTrainer,
    cvar_select,
    cvar_policy_gradient,
    trust_region_step,
    sequential_agent_update,
    critic_update,
    train,
)
from .baselines import VpgTrainer, MatrpoTrainer, vpg_update, matrpo_train, trainer_for

__all__ = ['MlpSpec', 'ParamVector', 'actor_forward', 'log_prob', 'mean_kl', 'fisher_vector_product',
           'AgentPolicy', 'Critic', 'TrajectoryBatch', 'collect_batch', 'td_advantages',
           'CvarConfig', 'TrustRegionConfig', 'RsTrpoTrainer', 'cvar_select', 'cvar_policy_gradient',
           'trust_region_step', 'sequential_agent_update', 'critic_update', 'train',
           'VpgTrainer', 'MatrpoTrainer', 'vpg_update', 'matrpo_train', 'trainer_for']

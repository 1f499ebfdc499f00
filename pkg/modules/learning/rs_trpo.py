"""
RS-TRPO Module
Risk-sensitive sequential trust-region policy optimization:
CVaR episode selection, importance-weighted agent-by-agent updates
and critic regression
"""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.core.config import RunConfig, ScenarioConfig
from modules.core.console import get_logger
from modules.core.errors import (
    CgBreakdown,
    ConfigValidationError,
    DimMismatch,
    EmptyBatch,
    NonFiniteError,
    RatioOverflow,
    TrainingAborted,
)
from modules.environment.mgc_env import MgcEnv
from modules.learning.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from modules.learning.function_approx import (
    ParamVector,
    ValueRegressionLoss,
    WeightedLogLikelihood,
    fisher_vector_product,
    log_prob,
    mean_kl,
)
from modules.learning.optim import AdamOptimizer
from modules.learning.policies import AgentPolicy, Critic
from modules.learning.trajectories import TrajectoryBatch, collect_batch, td_advantages

logger = get_logger(__name__)

TRAIN_STREAM = 0
EVAL_STREAM = 1


# ==================== CONFIGURATION ====================

@dataclass(frozen=True)
class TrustRegionConfig:
    epsilon: float = 0.01
    backtrack_coeff: float = 0.8
    max_backtracks: int = 10
    cg_iterations: int = 10
    cg_damping: float = 0.1
    gamma: float = 0.9

    def __post_init__(self):
        if self.epsilon <= 0 or not 0 < self.backtrack_coeff < 1 or not 0 < self.gamma <= 1:
            raise ConfigValidationError("Invalid trust-region settings", field_path="run",
                                        reason="epsilon > 0, backtrack_coeff in (0,1), gamma in (0,1]")

    @classmethod
    def from_run(cls, run: RunConfig) -> "TrustRegionConfig":
        return cls(run.epsilon, run.backtrack_coeff, run.max_backtracks,
                   run.cg_iterations, run.cg_damping, run.gamma)


@dataclass(frozen=True)
class CvarConfig:
    alpha: float = 0.9
    baseline: str = "quantile-advantage"
    ratio_cap: float = 1e3

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigValidationError("alpha must lie in (0, 1]", field_path="run.alpha",
                                        reason=str(self.alpha))

    @classmethod
    def from_run(cls, run: RunConfig) -> "CvarConfig":
        return cls(run.alpha, run.cvar_baseline, run.ratio_cap)


# ==================== CVAR ====================

@dataclass
class CvarSelection:
    indices: np.ndarray
    var_estimate: float

    @property
    def count(self) -> int:
        return len(self.indices)


def cvar_count(alpha: float, n_episodes: int) -> int:
    return max(1, int(math.ceil(alpha * n_episodes - 1e-9)))


def cvar_select(returns, alpha: float) -> CvarSelection:
    """
    Worst ceil(alpha * D) episodes by undiscounted return

    The VaR estimate is the return of the best selected episode. Accepts a
    TrajectoryBatch (marks its selection) or an array of returns.
    """
    batch = returns if isinstance(returns, TrajectoryBatch) else None
    values = np.asarray(batch.undiscounted_returns if batch is not None else returns, dtype=float)
    if values.size == 0:
        raise EmptyBatch("CVaR selection on an empty batch")
    if not 0 < alpha <= 1:
        raise ConfigValidationError("alpha must lie in (0, 1]", field_path="alpha", reason=str(alpha))
    order = np.argsort(values, kind="stable")
    indices = np.sort(order[:cvar_count(alpha, len(values))])
    selection = CvarSelection(indices=indices, var_estimate=float(values[indices].max()))
    if batch is not None:
        mask = np.zeros(len(values), dtype=bool)
        mask[indices] = True
        batch.selected = mask
        batch.var_estimate = selection.var_estimate
    return selection


def cvar_of(values: np.ndarray, alpha: float) -> float:
    """Mean of the worst ceil(alpha * n) values"""
    values = np.sort(np.asarray(values, dtype=float))
    return float(values[:cvar_count(alpha, len(values))].mean())


def cvar_baseline(batch: TrajectoryBatch, cvar: CvarConfig) -> float:
    """
    Baseline c subtracted from the advantages of the selected steps

    quantile-advantage takes the alpha-quantile of the standardized advantages
    of every step in the batch, not only the selected ones. raw-var uses the
    VaR return estimate; none disables the baseline.
    """
    if cvar.baseline == "none":
        return 0.0
    if cvar.baseline == "raw-var":
        return float(batch.var_estimate)
    return float(np.quantile(batch.advantages, cvar.alpha, method="inverted_cdf"))


@dataclass
class AgentGradient:
    gradient: ParamVector
    weights: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    centered_advantages: np.ndarray
    importance: np.ndarray


def cvar_policy_gradient(batch: TrajectoryBatch, agent: int, theta: ParamVector,
                         importance: np.ndarray, cvar: CvarConfig) -> AgentGradient:
    """
    Importance-weighted policy gradient over the CVaR-selected episodes

    g = 1/(n_sel * T) * sum over selected steps of
        Lambda_t * grad log pi(a_t | o_t) * (psi_t - c)

    Args:
        batch: Batch with advantages and selection filled
        agent: Agent index (fleet order)
        theta: Agent parameters at the trust-region center
        importance: Lambda per step (D, T) from agents updated earlier
        cvar: Selection and baseline settings

    Returns:
        AgentGradient with the gradient and the per-step pieces reused by
        the surrogate evaluator
    """
    if batch.advantages is None or batch.selected is None:
        raise EmptyBatch("Batch needs advantages and a CVaR selection")
    sel = batch.selected
    lam = importance[sel]
    if np.any(lam > cvar.ratio_cap) or not np.all(np.isfinite(lam)):
        raise RatioOverflow("Importance factor exceeded its cap", agent=agent,
                            max_factor=float(np.max(lam)), cap=cvar.ratio_cap)

    c = cvar_baseline(batch, cvar)
    centered = (batch.advantages[sel] - c).reshape(-1)
    lam = lam.reshape(-1)
    obs = batch.obs_norm[agent][sel].reshape(len(centered), -1)
    actions = batch.actions[agent][sel].reshape(len(centered), -1)
    old_logp = batch.old_log_probs[agent][sel].reshape(-1)
    weights = lam * centered

    loss = WeightedLogLikelihood(actions, weights, denominator=len(centered))
    _, g = loss.value_and_grad(theta, obs)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("Non-finite policy gradient", agent=agent)
    return AgentGradient(theta.with_values(g), weights, obs, actions, old_logp, centered, lam)


def surrogate_advantage(pieces: AgentGradient, theta: ParamVector) -> float:
    """Sampled surrogate U = mean of Lambda * (ratio - 1) * (psi - c) over selected steps"""
    ratio = np.exp(log_prob(theta, pieces.observations, pieces.actions) - pieces.old_log_probs)
    return float(np.mean(pieces.importance * (ratio - 1.0) * pieces.centered_advantages))


# ==================== TRUST REGION ====================

def conjugate_gradient(fvp: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       iterations: int = 10, residual_tol: float = 1e-10) -> np.ndarray:
    """Approximately solve H x = b using only products H v"""
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rr = float(r @ r)
    for _ in range(iterations):
        if rr < residual_tol:
            break
        hp = fvp(p)
        php = float(p @ hp)
        if php <= 0:
            break
        step = rr / php
        x += step * p
        r -= step * hp
        new_rr = float(r @ r)
        p = r + (new_rr / rr) * p
        rr = new_rr
    return x


@dataclass
class TrustRegionResult:
    theta: ParamVector
    accepted: bool
    kl: float = 0.0
    improvement: float = 0.0
    backtracks: int = -1
    reason: str = ""


def trust_region_step(theta_old: ParamVector, g: ParamVector, observations: np.ndarray,
                      cfg: TrustRegionConfig, surrogate: Callable[[ParamVector], float],
                      fvp: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                      kl: Optional[Callable[[ParamVector], float]] = None) -> TrustRegionResult:
    """
    Natural-gradient step with backtracking line search

    Solves H x = g by conjugate gradient, scales the step to the KL boundary,
    and shrinks it by backtrack_coeff until mean KL <= epsilon and the sampled
    surrogate does not decrease. When nothing is accepted theta is unchanged.
    """
    grad = np.asarray(g.values if isinstance(g, ParamVector) else g, dtype=float)
    if grad.shape != theta_old.values.shape:
        raise DimMismatch("Gradient length does not match parameters",
                          expected=theta_old.values.shape, got=grad.shape)
    if not np.any(grad):
        return TrustRegionResult(theta_old, False, reason="zero-gradient")

    if fvp is None:
        def fvp(v):
            return fisher_vector_product(theta_old, observations, v, cfg.cg_damping)
    if kl is None:
        def kl(theta):
            return mean_kl(theta_old, theta, observations)

    x = conjugate_gradient(fvp, grad, cfg.cg_iterations)
    shs = float(x @ grad)
    if not math.isfinite(shs) or shs <= 0:
        error = CgBreakdown("Conjugate gradient returned a non-ascent direction", xTg=shs)
        logger.warning(str(error))
        return TrustRegionResult(theta_old, False, reason="cg-breakdown")

    full_step = math.sqrt(2.0 * cfg.epsilon / shs) * x
    for j in range(cfg.max_backtracks + 1):
        candidate = theta_old.with_values(theta_old.values + (cfg.backtrack_coeff ** j) * full_step)
        kl_value = kl(candidate)
        improvement = surrogate(candidate)
        if (math.isfinite(kl_value) and math.isfinite(improvement)
                and kl_value <= cfg.epsilon and improvement >= 0):
            return TrustRegionResult(candidate, True, kl_value, improvement, j, "accepted")

    logger.debug("Line search rejected every candidate; keeping parameters")
    return TrustRegionResult(theta_old, False, reason="line-search")


# ==================== SEQUENTIAL UPDATE ====================

@dataclass
class SequentialUpdateResult:
    order: List[int]
    results: Dict[int, TrustRegionResult] = field(default_factory=dict)
    importance: Optional[np.ndarray] = None


def agent_step_batch(batch: TrajectoryBatch, agent: int) -> Tuple[np.ndarray, np.ndarray]:
    d, t = batch.rewards.shape
    return (batch.obs_norm[agent].reshape(d * t, -1), batch.actions[agent].reshape(d * t, -1))


def sequential_agent_update(batch: TrajectoryBatch, agents: Sequence[AgentPolicy],
                            cfg: TrustRegionConfig, cvar: CvarConfig,
                            rng: np.random.Generator) -> SequentialUpdateResult:
    """
    Update agents one at a time in a random order

    Each agent's gradient is reweighted by the product of the policy ratios of
    the agents already updated in this iteration; after its own step the
    agent's ratio is folded into that product.
    """
    order = [int(k) for k in rng.permutation(len(agents))]
    d, t = batch.rewards.shape
    importance = np.ones((d, t))
    outcome = SequentialUpdateResult(order=order)

    for m in order:
        agent = agents[m]
        theta_old = agent.theta
        pieces = cvar_policy_gradient(batch, m, theta_old, importance, cvar)
        observations, actions = agent_step_batch(batch, m)

        result = trust_region_step(
            theta_old, pieces.gradient, observations, cfg,
            surrogate=lambda theta: surrogate_advantage(pieces, theta),
        )
        outcome.results[m] = result
        if result.accepted:
            agent.theta = result.theta
            new_logp = log_prob(result.theta, observations, actions).reshape(d, t)
            importance = importance * np.exp(new_logp - batch.old_log_probs[m])

    outcome.importance = importance
    return outcome


# ==================== CRITIC ====================

def critic_targets(batch: TrajectoryBatch, target: str = "return-to-go") -> np.ndarray:
    if target == "one-step-reward":
        return batch.rewards.reshape(-1)
    return batch.returns_to_go.reshape(-1)


def critic_update(critic: Critic, states: np.ndarray, targets: np.ndarray, learning_rate: float,
                  epochs: int, minibatches: int, rng: np.random.Generator,
                  optimizer: Optional[AdamOptimizer] = None) -> Tuple[ParamVector, float]:
    """
    Minibatch Adam regression of V(s) onto targets

    Returns:
        (updated parameters, full-batch loss after the update)
    """
    optimizer = optimizer or AdamOptimizer(learning_rate)
    x = critic.normalizer.normalize(np.atleast_2d(states))
    y = np.asarray(targets, dtype=float).reshape(-1)
    n = len(y)
    if n == 0:
        raise EmptyBatch("Critic update without samples")
    phi = critic.phi
    for _ in range(epochs):
        order = rng.permutation(n)
        for chunk in np.array_split(order, min(minibatches, n)):
            _, g = ValueRegressionLoss(y[chunk]).value_and_grad(phi, x[chunk])
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("Non-finite critic gradient")
            phi = phi.with_values(optimizer.step(phi.values, g))
    loss = ValueRegressionLoss(y).value(phi, x)
    critic.phi = phi
    return phi, loss


# ==================== TRAINER ====================

@dataclass
class TrainingResult:
    agents: List[AgentPolicy]
    critic: Critic
    metrics: pd.DataFrame
    timing: pd.DataFrame
    accepted_steps: List[Dict]


class RsTrpoTrainer:
    """
    Training loop for one seed

    Per iteration: collect, update the critic normalizer, TD advantages,
    CVaR selection, sequential agent updates, critic regression, then the
    actor normalizers. Permutation and critic shuffling use their own RNG
    streams derived from the run seed.
    """

    algorithm = "rs-trpo"

    def __init__(self, env: MgcEnv, run: RunConfig, seed: int,
                 checkpoint_dir: Optional[Path] = None):
        self.env = env
        self.run = run
        self.seed = int(seed)
        self.trust_region = TrustRegionConfig.from_run(run)
        self.cvar = CvarConfig.from_run(run)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None

        init_seq, perm_seq, critic_seq = np.random.SeedSequence([self.seed, 7]).spawn(3)
        init_rng = np.random.default_rng(init_seq)
        self.perm_rng = np.random.default_rng(perm_seq)
        self.critic_rng = np.random.default_rng(critic_seq)

        self.agents = [
            AgentPolicy.create(name, obs_dim, act_dim, run.hidden_sizes, init_rng)
            for name, obs_dim, act_dim in zip(env.fleet.agent_ids, env.observation_dims, env.action_dims)
        ]
        self.critic = Critic.create(env.state_dim, run.hidden_sizes, init_rng)
        self.critic_optimizer = AdamOptimizer(run.critic_learning_rate)
        self.metrics: List[Dict] = []
        self.timing: List[Dict] = []
        self.accepted_steps: List[Dict] = []
        self._failures = 0
        self.start_iteration = 0

    # ==================== ITERATION ====================

    def collect(self, iteration: int) -> TrajectoryBatch:
        return collect_batch(self.env, self.agents, self.run.batch_size,
                             seed_key=(self.seed, TRAIN_STREAM, iteration),
                             gamma=self.trust_region.gamma, workers=self.run.workers)

    def update_agents(self, batch: TrajectoryBatch) -> Dict[int, TrustRegionResult]:
        return sequential_agent_update(batch, self.agents, self.trust_region, self.cvar,
                                       self.perm_rng).results

    def iteration(self, iteration: int) -> Dict:
        started = time.perf_counter()
        batch = self.collect(iteration)
        self.critic.normalizer.update(batch.states.reshape(-1, batch.states.shape[-1]))
        td_advantages(batch, self.critic.value, self.trust_region.gamma)
        cvar_select(batch, self.cvar.alpha)

        snapshot = [agent.theta for agent in self.agents]
        try:
            results = self.update_agents(batch)
            self._failures = 0
        except (RatioOverflow, NonFiniteError) as e:
            self._failures += 1
            logger.warning(f"Iteration {iteration}: agent updates aborted ({e})")
            # no partial joint update survives an aborted sequence
            for agent, theta in zip(self.agents, snapshot):
                agent.theta = theta
            if self._failures >= self.run.max_nonfinite_iterations:
                raise TrainingAborted("Persistent numerical failure in agent updates",
                                      iteration=iteration, failures=self._failures) from e
            results = {}

        critic_loss = math.nan
        try:
            _, critic_loss = critic_update(
                self.critic, batch.states.reshape(-1, batch.states.shape[-1]),
                critic_targets(batch, self.run.critic_target),
                self.run.critic_learning_rate, self.run.critic_epochs,
                self.run.critic_minibatches, self.critic_rng, self.critic_optimizer,
            )
        except NonFiniteError as e:
            logger.warning(f"Iteration {iteration}: critic update skipped ({e})")

        for k, agent in enumerate(self.agents):
            agent.normalizer.update(batch.obs[k].reshape(-1, batch.obs[k].shape[-1]))

        row = self._metrics_row(iteration, batch, results, critic_loss)
        wall_ms = (time.perf_counter() - started) * 1000.0
        if self.run.record_timing:
            row['wall_ms'] = wall_ms
        self.timing.append({'iter': iteration, 'wall_ms': wall_ms})
        return row

    def _metrics_row(self, iteration: int, batch: TrajectoryBatch,
                     results: Dict[int, TrustRegionResult], critic_loss: float) -> Dict:
        raw = batch.raw_returns
        row = {
            'iter': iteration,
            'mean_return': float(raw.mean()),
            'cvar_return': cvar_of(raw, self.cvar.alpha),
            'min_return': float(raw.min()),
        }
        for k in range(len(self.agents)):
            result = results.get(k)
            row[f'agent_kl_{k + 1}'] = result.kl if result and result.accepted else 0.0
        for k in range(len(self.agents)):
            result = results.get(k)
            row[f'surrogate_{k + 1}'] = result.improvement if result and result.accepted else 0.0
            if result and result.accepted:
                self.accepted_steps.append({'iter': iteration, 'agent': k + 1,
                                            'kl': result.kl, 'surrogate': result.improvement})
        row['critic_loss'] = critic_loss
        row['voltage_max_dev'] = float(batch.voltage_max_dev.max())
        row['renewable_share'] = batch.renewable_share
        kls = ", ".join(f"{row[f'agent_kl_{k + 1}']:.4f}" for k in range(len(self.agents)))
        logger.info(f"[{self.algorithm} seed {self.seed}] iter {iteration}: "
                    f"mean {row['mean_return']:.2f} cvar {row['cvar_return']:.2f} kl [{kls}]")
        return row

    # ==================== LOOP ====================

    def train(self, iterations: Optional[int] = None) -> TrainingResult:
        total = self.run.iterations if iterations is None else iterations
        for iteration in range(self.start_iteration, total):
            self.metrics.append(self.iteration(iteration))
            every = self.run.checkpoint_every
            if self.checkpoint_dir and every and (iteration + 1) % every == 0:
                self.save(self.checkpoint_dir / f"iter_{iteration + 1:05d}.npz", iteration + 1)
        if self.checkpoint_dir:
            self.save(self.checkpoint_dir / "final.npz", total)
        return TrainingResult(
            agents=self.agents,
            critic=self.critic,
            metrics=pd.DataFrame(self.metrics, columns=self.metric_columns()),
            timing=pd.DataFrame(self.timing, columns=['iter', 'wall_ms']),
            accepted_steps=self.accepted_steps,
        )

    def metric_columns(self) -> List[str]:
        p = len(self.agents)
        columns = ['iter', 'mean_return', 'cvar_return', 'min_return']
        columns += [f'agent_kl_{k + 1}' for k in range(p)]
        columns += [f'surrogate_{k + 1}' for k in range(p)]
        columns += ['critic_loss', 'voltage_max_dev', 'renewable_share']
        if self.run.record_timing:
            columns.append('wall_ms')
        return columns

    def checkpoint(self, iteration: int) -> Checkpoint:
        params = {agent.name: agent.theta for agent in self.agents}
        params['critic'] = self.critic.phi
        normalizers = {agent.name: agent.normalizer for agent in self.agents}
        normalizers['critic'] = self.critic.normalizer
        return Checkpoint(
            params=params,
            normalizers=normalizers,
            rng_states={'permutation': self.perm_rng.bit_generator.state,
                        'critic': self.critic_rng.bit_generator.state},
            optimizers={'critic': self.critic_optimizer},
            extra={'iteration': iteration, 'seed': self.seed, 'algorithm': self.algorithm,
                   'agents': [agent.name for agent in self.agents], 'failures': self._failures},
        )

    def save(self, path: Path, iteration: int) -> Path:
        return save_checkpoint(path, self.checkpoint(iteration))

    def restore(self, path: Path) -> int:
        """
        Resume from a checkpoint written by save()

        Restores parameters, normalizers, both RNG streams and the critic
        optimizer, so training continues exactly as the uninterrupted run.

        Returns:
            The iteration training resumes at
        """
        checkpoint = load_checkpoint(path)
        extra = checkpoint.extra
        if extra.get('seed') != self.seed or extra.get('algorithm') != self.algorithm:
            raise ConfigValidationError("Checkpoint belongs to another run", field_path="checkpoint",
                                        reason=f"{extra.get('algorithm')} seed {extra.get('seed')}")
        for agent in self.agents:
            agent.theta = checkpoint.params[agent.name]
            agent.normalizer = checkpoint.normalizers[agent.name]
        self.critic.phi = checkpoint.params['critic']
        self.critic.normalizer = checkpoint.normalizers['critic']
        self.perm_rng.bit_generator.state = checkpoint.rng_states['permutation']
        self.critic_rng.bit_generator.state = checkpoint.rng_states['critic']
        self.critic_optimizer = checkpoint.optimizers['critic']
        self._failures = int(extra.get('failures', 0))
        self.start_iteration = int(extra['iteration'])
        logger.info(f"[{self.algorithm} seed {self.seed}] resumed at iter {self.start_iteration}")
        return self.start_iteration


def train(scenario: ScenarioConfig, run: RunConfig, seed: int,
          checkpoint_dir: Optional[Path] = None, env: Optional[MgcEnv] = None,
          trainer_cls=None) -> TrainingResult:
    """
    Train one seed of the configured algorithm

    Args:
        scenario: Scenario to build the environment from
        run: Hyperparameters
        seed: Run seed
        checkpoint_dir: Where periodic and final checkpoints go
        env: Pre-built environment (skips loading data files)
        trainer_cls: Trainer class override (baselines)

    Returns:
        TrainingResult
    """
    env = env or MgcEnv.from_scenario(scenario)
    trainer = (trainer_cls or RsTrpoTrainer)(env, run, seed, checkpoint_dir)
    return trainer.train()

"""
Optimization Helpers
Running observation normalizer and the Adam optimizer used by the critic
"""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from modules.core.errors import DimMismatch

CLIP_RANGE = 10.0
VARIANCE_EPS = 1e-8


@dataclass
class RunningNormalizer:
    """
    Welford running mean/variance, merged batch-wise

    normalize() returns (x - mean) / sqrt(var + eps) clipped to +-10. A frozen
    normalizer ignores updates (evaluation mode).
    """

    dim: int
    count: float = 0.0
    mean: np.ndarray = None
    m2: np.ndarray = None
    frozen: bool = False

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.m2 is None:
            self.m2 = np.zeros(self.dim)

    @property
    def var(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return self.m2 / self.count

    def update(self, batch: np.ndarray) -> None:
        if self.frozen:
            return
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        if batch.shape[1] != self.dim:
            raise DimMismatch("Normalizer input dimension mismatch", expected=self.dim, got=batch.shape[1])
        n = batch.shape[0]
        if n == 0:
            return
        batch_mean = batch.mean(axis=0)
        batch_m2 = ((batch - batch_mean) ** 2).sum(axis=0)
        total = self.count + n
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * n / total
        self.m2 = self.m2 + batch_m2 + delta ** 2 * self.count * n / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.clip((x - self.mean) / np.sqrt(self.var + VARIANCE_EPS), -CLIP_RANGE, CLIP_RANGE)

    def copy(self) -> "RunningNormalizer":
        return RunningNormalizer(self.dim, self.count, self.mean.copy(), self.m2.copy(), self.frozen)

    def state_dict(self) -> Dict:
        return {'dim': self.dim, 'count': self.count, 'frozen': self.frozen}


@dataclass
class AdamOptimizer:
    """Adam for descent on a flat parameter vector"""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0

    def step(self, params: np.ndarray, gradient: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * gradient
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * gradient ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        if self.m is None:
            return {}
        return {'adam_m': self.m, 'adam_v': self.v}

    def state_dict(self) -> Dict:
        return {'learning_rate': self.learning_rate, 'beta1': self.beta1, 'beta2': self.beta2,
                'eps': self.eps, 't': self.t}

    @classmethod
    def from_state(cls, state: Dict, arrays: Dict[str, np.ndarray]) -> "AdamOptimizer":
        """Rebuild an optimizer from state_dict() and state_arrays()"""
        optimizer = cls(**state)
        if arrays:
            optimizer.m = arrays['adam_m'].copy()
            optimizer.v = arrays['adam_v'].copy()
        return optimizer

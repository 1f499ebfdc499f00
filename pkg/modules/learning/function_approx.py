"""
Function Approximation Module
Small tanh MLPs with hand-written reverse/forward differentiation,
a diagonal Gaussian policy head, KL divergence and Fisher-vector products
"""

import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from modules.core.errors import DimMismatch, NonFiniteError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_STD_INIT = math.log(0.3)
LOG_2PI = math.log(2.0 * math.pi)


# ==================== SPEC AND PARAMETERS ====================

@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes and output head of an actor or critic network"""

    input_dim: int
    output_dim: int
    hidden_sizes: Tuple[int, ...] = (64, 32)
    head: Literal["gaussian", "value"] = "gaussian"

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0 or any(h <= 0 for h in self.hidden_sizes):
            raise DimMismatch("Network dimensions must be positive", spec=str(self))
        if self.head == "value" and self.output_dim != 1:
            raise DimMismatch("Value head has a single output", output_dim=self.output_dim)

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        """(fan_in, fan_out) per layer"""
        sizes = [self.input_dim, *self.hidden_sizes, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_network_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_dims)

    @property
    def n_params(self) -> int:
        extra = self.output_dim if self.head == "gaussian" else 0
        return self.n_network_params + extra

    def to_dict(self) -> dict:
        return {'input_dim': self.input_dim, 'output_dim': self.output_dim,
                'hidden_sizes': list(self.hidden_sizes), 'head': self.head}

    @classmethod
    def from_dict(cls, data: dict) -> "MlpSpec":
        return cls(data['input_dim'], data['output_dim'], tuple(data['hidden_sizes']), data['head'])


@dataclass
class ParamVector:
    """
    Flat parameters with their network spec

    Layout: for every layer the weight matrix (fan_out x fan_in, row-major)
    followed by its bias; actors append one log-std per action dimension.
    """

    spec: MlpSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.spec.n_params,):
            raise DimMismatch("Parameter vector length does not match spec",
                              expected=self.spec.n_params, got=self.values.shape)

    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return _layers(self.spec, self.values)

    @property
    def log_std(self) -> Optional[np.ndarray]:
        if self.spec.head != "gaussian":
            return None
        return self.values[self.spec.n_network_params:]

    @classmethod
    def from_layers(cls, spec: MlpSpec, layers: Sequence[Tuple[np.ndarray, np.ndarray]],
                    log_std: Optional[np.ndarray] = None) -> "ParamVector":
        parts = []
        for weight, bias in layers:
            parts.append(np.asarray(weight, dtype=float).reshape(-1))
            parts.append(np.asarray(bias, dtype=float).reshape(-1))
        if spec.head == "gaussian":
            parts.append(np.asarray(log_std, dtype=float).reshape(-1))
        return cls(spec, np.concatenate(parts))

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(self.spec, np.array(values, dtype=float))

    def copy(self) -> "ParamVector":
        return ParamVector(self.spec, self.values.copy())

    def __len__(self) -> int:
        return len(self.values)


def _layers(spec: MlpSpec, values: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    layers, offset = [], 0
    for fan_in, fan_out in spec.layer_dims:
        weight = values[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        bias = values[offset:offset + fan_out]
        offset += fan_out
        layers.append((weight, bias))
    return layers


def _orthogonal(rng: np.random.Generator, fan_out: int, fan_in: int, gain: float) -> np.ndarray:
    rows, cols = max(fan_out, fan_in), min(fan_out, fan_in)
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    q = q * np.sign(np.diag(r))
    weight = q if fan_out >= fan_in else q.T
    return gain * weight[:fan_out, :fan_in]


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamVector:
    """
    Seeded orthogonal initialization

    Hidden layers use gain 1.0; the actor's output layer uses 0.01. Biases
    start at zero and log-stds at log(0.3).
    """
    layers = []
    dims = spec.layer_dims
    for index, (fan_in, fan_out) in enumerate(dims):
        last = index == len(dims) - 1
        gain = 0.01 if (last and spec.head == "gaussian") else 1.0
        layers.append((_orthogonal(rng, fan_out, fan_in, gain), np.zeros(fan_out)))
    log_std = np.full(spec.output_dim, LOG_STD_INIT) if spec.head == "gaussian" else None
    return ParamVector.from_layers(spec, layers, log_std)


# ==================== NETWORK PASSES ====================

def _as_batch(spec: MlpSpec, observations: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(observations, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimMismatch("Observation dimension does not match network input",
                          expected=spec.input_dim, got=x.shape[-1] if x.ndim else 0)
    return x, single


def _forward(spec: MlpSpec, values: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Batch forward pass; cache holds the input and every hidden activation"""
    layers = _layers(spec, values)
    cache = [x]
    h = x
    for index, (weight, bias) in enumerate(layers):
        z = h @ weight.T + bias
        if index < len(layers) - 1:
            h = np.tanh(z)
            cache.append(h)
        else:
            h = z
    return h, cache


def _backward(spec: MlpSpec, values: np.ndarray, cache: List[np.ndarray],
              grad_out: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product: gradient of sum(grad_out * output) w.r.t. network params"""
    layers = _layers(spec, values)
    grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    delta = grad_out
    for index in range(len(layers) - 1, -1, -1):
        weight, _ = layers[index]
        h_in = cache[index]
        grads[index] = (delta.T @ h_in, delta.sum(axis=0))
        if index > 0:
            delta = (delta @ weight) * (1.0 - h_in ** 2)
    flat = np.zeros(spec.n_params)
    offset = 0
    for (g_weight, g_bias) in grads:
        flat[offset:offset + g_weight.size] = g_weight.reshape(-1)
        offset += g_weight.size
        flat[offset:offset + g_bias.size] = g_bias
        offset += g_bias.size
    return flat


def _jvp(spec: MlpSpec, values: np.ndarray, cache: List[np.ndarray], tangent: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of the network output in direction tangent"""
    layers = _layers(spec, values)
    tangent_layers = _layers(spec, tangent)
    dh = np.zeros_like(cache[0])
    for index, ((weight, _), (d_weight, d_bias)) in enumerate(zip(layers, tangent_layers)):
        h_in = cache[index]
        dz = h_in @ d_weight.T + dh @ weight.T + d_bias
        if index < len(layers) - 1:
            dh = (1.0 - cache[index + 1] ** 2) * dz
        else:
            return dz
    return dh


def _log_std(theta: ParamVector) -> Tuple[np.ndarray, np.ndarray]:
    raw = theta.log_std
    clamped = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    mask = ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)).astype(float)
    return clamped, mask


def _check_finite(array: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"Non-finite values in {what}")


# ==================== POLICY AND VALUE ====================

@dataclass
class GaussianPolicyOutput:
    mean: np.ndarray
    log_std: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


def _require_head(theta: ParamVector, head: str) -> None:
    if theta.spec.head != head:
        raise DimMismatch(f"Operation needs a {head} network", head=theta.spec.head)


def actor_forward(theta: ParamVector, observations: np.ndarray) -> GaussianPolicyOutput:
    """Policy mean from the tanh MLP and the state-independent std"""
    _require_head(theta, "gaussian")
    x, single = _as_batch(theta.spec, observations)
    mean, _ = _forward(theta.spec, theta.values, x)
    log_std, _ = _log_std(theta)
    return GaussianPolicyOutput(mean=mean[0] if single else mean, log_std=log_std.copy())


def gaussian_log_density(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log density summed over the last axis"""
    z = (actions - mean) / np.exp(log_std)
    return -0.5 * np.sum(z ** 2 + 2.0 * log_std + LOG_2PI, axis=-1)


def log_prob(theta: ParamVector, observations: np.ndarray, actions: np.ndarray):
    """Log density of normalized actions; scalar for a single observation"""
    x, single = _as_batch(theta.spec, observations)
    a = np.asarray(actions, dtype=float).reshape(x.shape[0], -1)
    if a.shape[1] != theta.spec.output_dim:
        raise DimMismatch("Action dimension does not match policy output",
                          expected=theta.spec.output_dim, got=a.shape[1])
    out = actor_forward(theta, x)
    values = gaussian_log_density(a, out.mean, out.log_std)
    return float(values[0]) if single else values


def value_forward(phi: ParamVector, observations: np.ndarray):
    """Critic value; scalar for a single observation"""
    _require_head(phi, "value")
    x, single = _as_batch(phi.spec, observations)
    out, _ = _forward(phi.spec, phi.values, x)
    return float(out[0, 0]) if single else out[:, 0]


# ==================== LOSS FUNCTIONALS ====================

class LossFunctional:
    """Scalar batch functional of the parameters with an analytic gradient"""

    def value_and_grad(self, params: ParamVector, observations: np.ndarray) -> Tuple[float, np.ndarray]:
        raise NotImplementedError

    def value(self, params: ParamVector, observations: np.ndarray) -> float:
        return self.value_and_grad(params, observations)[0]


class ConstantLoss(LossFunctional):
    def __init__(self, constant: float = 0.0):
        self.constant = constant

    def value_and_grad(self, params, observations):
        return float(self.constant), np.zeros(params.spec.n_params)


class WeightedLogLikelihood(LossFunctional):
    """
    (1/denominator) * sum_n weight_n * log pi(a_n | x_n)

    With weights set to importance factors times advantages this is the
    policy-gradient surrogate whose gradient the trust-region step follows.
    """

    def __init__(self, actions: np.ndarray, weights: np.ndarray, denominator: Optional[float] = None):
        self.actions = np.asarray(actions, dtype=float)
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        self.denominator = float(denominator if denominator is not None else len(self.weights))

    def value_and_grad(self, params, observations):
        _require_head(params, "gaussian")
        x, _ = _as_batch(params.spec, observations)
        a = self.actions.reshape(x.shape[0], -1)
        mean, cache = _forward(params.spec, params.values, x)
        log_std, mask = _log_std(params)
        var = np.exp(2.0 * log_std)
        w = self.weights[:, None] / self.denominator

        value = float(np.sum(self.weights * gaussian_log_density(a, mean, log_std)) / self.denominator)
        grad = _backward(params.spec, params.values, cache, w * (a - mean) / var)
        z_sq = (a - mean) ** 2 / var
        grad[params.spec.n_network_params:] = np.sum(w * (z_sq - 1.0), axis=0) * mask
        return value, grad


class ValueRegressionLoss(LossFunctional):
    """Mean squared error between critic values and targets"""

    def __init__(self, targets: np.ndarray):
        self.targets = np.asarray(targets, dtype=float).reshape(-1)

    def value_and_grad(self, params, observations):
        _require_head(params, "value")
        x, _ = _as_batch(params.spec, observations)
        out, cache = _forward(params.spec, params.values, x)
        error = out[:, 0] - self.targets
        n = len(error)
        value = float(np.mean(error ** 2))
        grad = _backward(params.spec, params.values, cache, (2.0 * error / n)[:, None])
        return value, grad


class KlLoss(LossFunctional):
    """Batch-mean KL(old || new) with the old distribution held fixed"""

    def __init__(self, old_mean: np.ndarray, old_log_std: np.ndarray):
        self.old_mean = np.asarray(old_mean, dtype=float)
        self.old_log_std = np.asarray(old_log_std, dtype=float)

    def value_and_grad(self, params, observations):
        _require_head(params, "gaussian")
        x, _ = _as_batch(params.spec, observations)
        mean, cache = _forward(params.spec, params.values, x)
        log_std, mask = _log_std(params)
        n = x.shape[0]
        var_new = np.exp(2.0 * log_std)
        var_old = np.exp(2.0 * self.old_log_std)
        diff = mean - self.old_mean
        per_sample = np.sum(log_std - self.old_log_std + (var_old + diff ** 2) / (2.0 * var_new) - 0.5,
                            axis=-1)
        value = float(np.mean(per_sample))
        grad = _backward(params.spec, params.values, cache, diff / var_new / n)
        grad[params.spec.n_network_params:] = np.mean(1.0 - (var_old + diff ** 2) / var_new, axis=0) * mask
        return value, grad


class LinearCombination(LossFunctional):
    """sum_i c_i * L_i"""

    def __init__(self, terms: Sequence[Tuple[float, LossFunctional]]):
        self.terms = list(terms)

    def value_and_grad(self, params, observations):
        total = 0.0
        grad = np.zeros(params.spec.n_params)
        for coefficient, loss in self.terms:
            value, g = loss.value_and_grad(params, observations)
            total += coefficient * value
            grad += coefficient * g
        return total, grad


def grad(params: ParamVector, loss: LossFunctional, observations: np.ndarray) -> ParamVector:
    """Reverse-mode gradient of a batch functional"""
    _, g = loss.value_and_grad(params, observations)
    _check_finite(g, "gradient")
    return params.with_values(g)


# ==================== TRUST-REGION GEOMETRY ====================

def mean_kl(theta_old: ParamVector, theta_new: ParamVector, observations: np.ndarray) -> float:
    """Batch mean of the closed-form diagonal Gaussian KL(old || new)"""
    if theta_old.spec != theta_new.spec:
        raise DimMismatch("KL needs two parameter vectors of the same spec")
    old = actor_forward(theta_old, np.atleast_2d(observations))
    return KlLoss(old.mean, old.log_std).value(theta_new, np.atleast_2d(observations))


def fisher_vector_product(theta: ParamVector, observations: np.ndarray, v: np.ndarray,
                          damping: float = 0.0) -> np.ndarray:
    """
    Hessian of the mean KL at theta applied to v, plus damping * v

    Uses the Gauss-Newton form, exact at the expansion point: the mean block
    contributes J^T (J v / sigma^2) / N and each unclamped log-std contributes 2.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != theta.values.shape:
        raise DimMismatch("Direction length does not match parameters",
                          expected=theta.values.shape, got=v.shape)
    spec = theta.spec
    x, _ = _as_batch(spec, observations)
    _, cache = _forward(spec, theta.values, x)
    log_std, mask = _log_std(theta)
    var = np.exp(2.0 * log_std)

    jv = _jvp(spec, theta.values, cache, v)
    result = _backward(spec, theta.values, cache, jv / var / x.shape[0])
    n_net = spec.n_network_params
    result[n_net:] = 2.0 * v[n_net:] * mask
    result += damping * v
    _check_finite(result, "Fisher-vector product")
    return result

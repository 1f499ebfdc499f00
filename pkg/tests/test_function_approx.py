"""Tests for the MLP passes, Gaussian head, KL and Fisher-vector products."""

import math

import numpy as np
import pytest

from modules.core.errors import DimMismatch
from modules.learning.function_approx import (
    KlLoss,
    LinearCombination,
    MlpSpec,
    ParamVector,
    ValueRegressionLoss,
    WeightedLogLikelihood,
    actor_forward,
    fisher_vector_product,
    gaussian_log_density,
    grad,
    init_params,
    log_prob,
    mean_kl,
)

STEP = 1e-6
DRAWS = 64


def numeric_gradient(f, values, step=STEP):
    out = np.zeros_like(values)
    for i in range(len(values)):
        plus, minus = values.copy(), values.copy()
        plus[i] += step
        minus[i] -= step
        out[i] = (f(plus) - f(minus)) / (2.0 * step)
    return out


def random_actor(rng, spec):
    values = 0.5 * rng.standard_normal(spec.n_params)
    values[spec.n_network_params:] = rng.uniform(-1.0, 0.5, spec.output_dim)
    return ParamVector(spec, values)


def test_param_layout():
    spec = MlpSpec(3, 2, (5,), "gaussian")
    assert spec.n_network_params == 3 * 5 + 5 + 5 * 2 + 2
    assert spec.n_params == spec.n_network_params + 2
    theta = init_params(spec, np.random.default_rng(0))
    np.testing.assert_allclose(theta.log_std, [math.log(0.3)] * 2)
    rebuilt = ParamVector.from_layers(spec, theta.layers(), theta.log_std)
    np.testing.assert_array_equal(rebuilt.values, theta.values)
    assert MlpSpec.from_dict(spec.to_dict()) == spec


def test_init_is_seeded_and_orthogonal():
    spec = MlpSpec(4, 1, (6, 6), "value")
    first = init_params(spec, np.random.default_rng(5))
    second = init_params(spec, np.random.default_rng(5))
    np.testing.assert_array_equal(first.values, second.values)
    weight, bias = first.layers()[1]
    np.testing.assert_allclose(weight @ weight.T, np.eye(6), atol=1e-10)
    assert not bias.any()


def test_log_density_matches_closed_form():
    rng = np.random.default_rng(1)
    a, m, s = rng.standard_normal(3), rng.standard_normal(3), rng.uniform(-1, 1, 3)
    expected = sum(-0.5 * ((a[i] - m[i]) / math.exp(s[i])) ** 2 - s[i] - 0.5 * math.log(2 * math.pi)
                   for i in range(3))
    assert gaussian_log_density(a, m, s) == pytest.approx(expected)


def test_weighted_log_likelihood_gradient():
    rng = np.random.default_rng(11)
    for _ in range(DRAWS):
        spec = MlpSpec(3, 2, (5,), "gaussian")
        theta = random_actor(rng, spec)
        obs = rng.standard_normal((7, 3))
        loss = WeightedLogLikelihood(rng.standard_normal((7, 2)), rng.standard_normal(7), denominator=9.0)
        _, analytic = loss.value_and_grad(theta, obs)
        numeric = numeric_gradient(lambda v: loss.value(theta.with_values(v), obs), theta.values)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_value_regression_gradient():
    rng = np.random.default_rng(12)
    for _ in range(DRAWS):
        spec = MlpSpec(4, 1, (6, 3), "value")
        phi = ParamVector(spec, 0.5 * rng.standard_normal(spec.n_params))
        obs = rng.standard_normal((8, 4))
        loss = ValueRegressionLoss(rng.standard_normal(8))
        _, analytic = loss.value_and_grad(phi, obs)
        numeric = numeric_gradient(lambda v: loss.value(phi.with_values(v), obs), phi.values)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_kl_gradient_and_log_prob_gradient():
    rng = np.random.default_rng(13)
    for _ in range(DRAWS):
        spec = MlpSpec(2, 2, (4,), "gaussian")
        theta = random_actor(rng, spec)
        obs = rng.standard_normal((5, 2))
        old = actor_forward(random_actor(rng, spec), obs)
        kl = KlLoss(old.mean, old.log_std)
        _, analytic = kl.value_and_grad(theta, obs)
        numeric = numeric_gradient(lambda v: kl.value(theta.with_values(v), obs), theta.values)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)

        action = rng.standard_normal(2)
        single = WeightedLogLikelihood(action[None, :], np.ones(1))
        numeric = numeric_gradient(lambda v: log_prob(theta.with_values(v), obs[0], action), theta.values)
        np.testing.assert_allclose(grad(theta, single, obs[:1]).values, numeric, rtol=1e-4, atol=1e-7)


def test_linear_combination_sums_terms():
    rng = np.random.default_rng(3)
    spec = MlpSpec(2, 1, (3,), "value")
    phi = ParamVector(spec, rng.standard_normal(spec.n_params))
    obs = rng.standard_normal((4, 2))
    a, b = ValueRegressionLoss(np.zeros(4)), ValueRegressionLoss(np.ones(4))
    value, g = LinearCombination([(2.0, a), (-1.0, b)]).value_and_grad(phi, obs)
    assert value == pytest.approx(2.0 * a.value(phi, obs) - b.value(phi, obs))
    np.testing.assert_allclose(g, 2.0 * a.value_and_grad(phi, obs)[1] - b.value_and_grad(phi, obs)[1])


def test_kl_of_identical_policies_is_zero():
    rng = np.random.default_rng(4)
    spec = MlpSpec(3, 2, (5,), "gaussian")
    theta = random_actor(rng, spec)
    assert mean_kl(theta, theta, rng.standard_normal((6, 3))) == pytest.approx(0.0, abs=1e-14)


def test_kl_between_two_widths_by_hand():
    rng = np.random.default_rng(6)
    spec = MlpSpec(3, 4, (5,), "gaussian")
    narrow = random_actor(rng, spec)
    narrow.values[spec.n_network_params:] = 0.0
    wide = ParamVector(spec, narrow.values.copy())
    wide.values[spec.n_network_params:] = math.log(2.0)
    expected = spec.output_dim * (math.log(2.0) + 1.0 / 8.0 - 0.5)
    assert mean_kl(narrow, wide, rng.standard_normal((7, 3))) == pytest.approx(expected, rel=1e-12)
    reverse = spec.output_dim * (-math.log(2.0) + 4.0 / 2.0 - 0.5)
    assert mean_kl(wide, narrow, rng.standard_normal((7, 3))) == pytest.approx(reverse, rel=1e-12)


def test_kl_agrees_with_sampled_log_ratio():
    rng = np.random.default_rng(17)
    spec = MlpSpec(3, 2, (6,), "gaussian")
    old = random_actor(rng, spec)
    new = ParamVector(spec, old.values + 0.3 * rng.standard_normal(spec.n_params))
    obs = rng.standard_normal((5, 3))
    samples = 40000

    out = actor_forward(old, obs)
    repeated = np.repeat(obs, samples, axis=0)
    means = np.repeat(out.mean, samples, axis=0)
    actions = means + np.exp(out.log_std) * rng.standard_normal(means.shape)
    log_ratio = log_prob(old, repeated, actions) - log_prob(new, repeated, actions)

    estimate = float(log_ratio.mean())
    stderr = float(log_ratio.std()) / math.sqrt(len(log_ratio))
    assert abs(mean_kl(old, new, obs) - estimate) < 4.0 * stderr


def test_fisher_vector_product_matches_kl_hessian():
    rng = np.random.default_rng(21)
    for _ in range(16):
        spec = MlpSpec(3, 2, (5,), "gaussian")
        theta = random_actor(rng, spec)
        obs = rng.standard_normal((6, 3))
        v = rng.standard_normal(spec.n_params)
        old = actor_forward(theta, obs)
        kl = KlLoss(old.mean, old.log_std)
        h = 1e-5
        plus = kl.value_and_grad(theta.with_values(theta.values + h * v), obs)[1]
        minus = kl.value_and_grad(theta.with_values(theta.values - h * v), obs)[1]
        numeric = (plus - minus) / (2.0 * h)
        np.testing.assert_allclose(fisher_vector_product(theta, obs, v), numeric, rtol=1e-4, atol=1e-7)
        np.testing.assert_allclose(fisher_vector_product(theta, obs, v, damping=0.1),
                                   fisher_vector_product(theta, obs, v) + 0.1 * v)


def test_dimension_mismatches():
    spec = MlpSpec(3, 2, (5,), "gaussian")
    theta = init_params(spec, np.random.default_rng(0))
    with pytest.raises(DimMismatch):
        log_prob(theta, np.zeros(4), np.zeros(2))
    with pytest.raises(DimMismatch):
        log_prob(theta, np.zeros(3), np.zeros(3))
    with pytest.raises(DimMismatch):
        fisher_vector_product(theta, np.zeros((2, 3)), np.zeros(spec.n_params + 1))
    with pytest.raises(DimMismatch):
        ParamVector(spec, np.zeros(3))
    with pytest.raises(DimMismatch):
        MlpSpec(3, 2, (5,), "value")

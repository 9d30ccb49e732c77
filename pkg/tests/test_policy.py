import numpy as np
import pytest

from maskrl.policy import (
    MLP,
    DiagonalGaussianPolicy,
    ValueNet,
    gaussian_log_prob,
)

from oracles import finite_difference_gradient


def test_mlp_forward_shapes():
    mlp = MLP([3, 8, 8, 2], rng=np.random.default_rng(0))
    out = mlp.forward(np.random.default_rng(1).normal(size=(5, 3)))
    assert out.shape == (5, 2)


def test_mlp_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    for activation in ("relu", "tanh"):
        mlp = MLP([3, 6, 4, 2], activation=activation, rng=np.random.default_rng(3))
        x = rng.normal(size=(7, 3))
        w = rng.normal(size=(7, 2))  # fixed linear weights on the output

        def loss(flat):
            saved = mlp.flat_params()
            mlp.set_flat_params(flat)
            val = float((mlp.forward(x) * w).sum())
            mlp.set_flat_params(saved)
            return val

        mlp.zero_grads()
        mlp.forward(x, cache=True)
        mlp.backward(w)
        got = mlp.flat_grads()
        want = finite_difference_gradient(loss, mlp.flat_params(), step=1e-6)
        denom = np.maximum(np.abs(want), 1e-6)
        assert (np.abs(got - want) / denom).max() < 1e-5


def test_mlp_backward_accumulates():
    mlp = MLP([2, 4, 1], rng=np.random.default_rng(4))
    x = np.random.default_rng(5).normal(size=(3, 2))
    mlp.zero_grads()
    mlp.forward(x, cache=True)
    mlp.backward(np.ones((3, 1)))
    once = mlp.flat_grads()
    mlp.forward(x, cache=True)
    mlp.backward(np.ones((3, 1)))
    assert np.allclose(mlp.flat_grads(), 2.0 * once)


def test_flat_param_round_trip():
    mlp = MLP([3, 5, 2], rng=np.random.default_rng(6))
    flat = mlp.flat_params()
    mlp.set_flat_params(flat * 0.5)
    assert np.allclose(mlp.flat_params(), flat * 0.5)
    with pytest.raises(ValueError):
        mlp.set_flat_params(flat[:-1])


def test_policy_log_prob_matches_scipy():
    from scipy import stats

    rng = np.random.default_rng(7)
    mean = rng.normal(size=3)
    log_std = rng.normal(size=3) * 0.4
    x = rng.normal(size=3)
    got = float(gaussian_log_prob(mean, log_std, x)[0])
    want = stats.multivariate_normal(
        mean=mean, cov=np.diag(np.exp(2 * log_std))
    ).logpdf(x)
    assert got == pytest.approx(want, rel=1e-12)


def test_policy_entropy_closed_form_vs_monte_carlo():
    rng = np.random.default_rng(8)
    policy = DiagonalGaussianPolicy(2, 3, seed=0, init_log_std=-0.4)
    n = 100000
    mean = np.zeros(3)
    samples = mean + policy.std * rng.standard_normal((n, 3))
    mc_entropy = -gaussian_log_prob(mean, policy.log_std, samples).mean()
    assert abs(mc_entropy - policy.entropy()) / policy.entropy() < 0.01


def test_policy_deterministic_init():
    p1 = DiagonalGaussianPolicy(4, 2, seed=42)
    p2 = DiagonalGaussianPolicy(4, 2, seed=42)
    assert np.array_equal(p1.flat_params(), p2.flat_params())
    p3 = DiagonalGaussianPolicy(4, 2, seed=43)
    assert not np.array_equal(p1.flat_params(), p3.flat_params())


def test_value_net_backward():
    rng = np.random.default_rng(9)
    net = ValueNet(3, hidden_size=8, seed=1)
    x = rng.normal(size=(6, 3))
    target = rng.normal(size=6)

    def loss(flat):
        saved = net.flat_params()
        net.set_flat_params(flat)
        val = float(((net.value(x) - target) ** 2).mean())
        net.set_flat_params(saved)
        return val

    net.zero_grads()
    v = net.value(x, cache=True)
    net.backward(2.0 * (v - target) / 6.0)
    got = net.flat_grads()
    want = finite_difference_gradient(loss, net.flat_params(), step=1e-6)
    assert np.abs(got - want).max() < 1e-6

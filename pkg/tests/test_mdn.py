import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divcolor import functional as F
from divcolor.autograd import Tensor
from divcolor.errors import DimensionError, UsageError
from divcolor.mdn import (
    GmmParams,
    MdnConfig,
    MixtureDensityNetwork,
    mdn_forward,
    mdn_loss_exact,
    mdn_loss_min,
    nearest_component,
    predict,
    sample_topk,
    train_mdn,
)

from oracles import argmin_loop, mixture_nll_direct


def _random_params(rng, m, d, spread=1.0):
    logits = rng.standard_normal(m)
    pi = np.exp(logits) / np.exp(logits).sum()
    return pi, rng.standard_normal((m, d)) * spread


def test_single_gaussian_closed_form():
    z, mu = np.array([0.3, -0.2, 0.5]), np.array([[0.1, 0.1, 0.1]])
    sq = ((z - mu[0]) ** 2).sum()
    expected = 1.5 * math.log(2 * math.pi * 0.1) + sq / 0.2
    assert mdn_loss_exact(GmmParams(np.ones(1), mu), z).item() == pytest.approx(expected, abs=1e-12)
    assert mdn_loss_min(GmmParams(np.ones(1), mu), z).item() == pytest.approx(sq / 0.2, abs=1e-12)


def test_duplicate_components_collapse_to_one():
    z, mu = np.array([0.4, 0.2]), np.array([[0.0, 0.5]])
    one = mdn_loss_exact(GmmParams(np.ones(1), mu), z).item()
    two = mdn_loss_exact(GmmParams(np.full(2, 0.5), np.concatenate([mu, mu])), z).item()
    assert two == pytest.approx(one, abs=1e-14)


def test_dominant_component_at_its_mean():
    pi = np.array([0.2, 0.5, 0.3])
    mu = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    got = mdn_loss_exact(GmmParams(pi, mu), mu[1]).item()
    assert got == pytest.approx(-math.log(0.5) + math.log(2 * math.pi * 0.1), abs=1e-6)
    assert got == pytest.approx(mixture_nll_direct(pi, mu, 0.1, mu[1]), abs=1e-10)


def test_min_loss_worked_example():
    params = GmmParams(np.full(2, 0.5), np.array([[0.0, 0.0], [10.0, 10.0]]))
    z = np.array([0.1, 0.0])
    assert nearest_component(params, z)[0] == 0
    assert mdn_loss_min(params, z).item() == pytest.approx(math.log(2) + 0.05, abs=1e-14)


def test_argmin_matches_brute_force_on_1000_cases():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m, d = rng.integers(1, 9), rng.integers(1, 6)
        pi, mu = _random_params(rng, m, d)
        z = rng.standard_normal(d)
        assert nearest_component(GmmParams(pi, mu), z)[0] == argmin_loop(mu, z)


def test_ties_go_to_lowest_index():
    mu = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    assert nearest_component(GmmParams(np.full(3, 1 / 3), mu), np.zeros(2))[0] == 0


def test_min_loss_is_zero_gradient_on_unselected_means():
    rng = np.random.default_rng(1)
    pi, mu = _random_params(rng, 5, 3)
    mu_t = Tensor(mu, True)
    z = rng.standard_normal(3)
    params = GmmParams(Tensor(pi), mu_t)
    mdn_loss_min(params, z).backward()
    m = argmin_loop(mu, z)
    others = np.delete(mu_t.grad, m, axis=0)
    assert (others == 0).all()
    np.testing.assert_allclose(mu_t.grad[m], (mu[m] - z) / 0.1, rtol=1e-12)


@pytest.mark.parametrize("sigma_sq", [0.01, 0.1, 0.15])
def test_min_bounds_exact_within_log_m(sigma_sq):
    # the bound needs d/2 * log(2 pi sigma_sq) <= log M, true for sigma_sq <= 1/(2 pi)
    rng = np.random.default_rng(2)
    for _ in range(1000):
        m, d = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        pi, mu = _random_params(rng, m, d)
        z = rng.standard_normal(d)
        p = GmmParams(pi, mu, sigma_sq)
        assert mdn_loss_min(p, z).item() >= mdn_loss_exact(p, z).item() - math.log(m) - 1e-12


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**16), m=st.integers(1, 8), d=st.integers(1, 6))
def test_losses_invariant_under_component_permutation(seed, m, d):
    rng = np.random.default_rng(seed)
    pi, mu = _random_params(rng, m, d)
    z = rng.standard_normal(d)
    perm = rng.permutation(m)
    a, b = GmmParams(pi, mu), GmmParams(pi[perm], mu[perm])
    assert mdn_loss_exact(a, z).item() == pytest.approx(mdn_loss_exact(b, z).item(), abs=1e-12)
    assert mdn_loss_min(a, z).item() == pytest.approx(mdn_loss_min(b, z).item(), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**16), m=st.integers(1, 8), d=st.integers(1, 4))
def test_log_sum_exp_matches_direct_summation(seed, m, d):
    rng = np.random.default_rng(seed)
    pi, mu = _random_params(rng, m, d, 0.3)
    z = rng.standard_normal(d) * 0.3
    direct = mixture_nll_direct(pi, mu, 0.1, z)
    assert mdn_loss_exact(GmmParams(pi, mu), z).item() == pytest.approx(direct, abs=1e-10)


def test_exact_loss_stays_finite_far_from_all_means():
    params = GmmParams(np.full(2, 0.5), np.array([[100.0, 0.0], [0.0, 100.0]]))
    assert np.isfinite(mdn_loss_exact(params, np.array([-100.0, -100.0])).item())


def test_batched_losses_average_items():
    rng = np.random.default_rng(3)
    pis, mus, zs = [], [], []
    for _ in range(4):
        pi, mu = _random_params(rng, 3, 2)
        pis.append(pi), mus.append(mu), zs.append(rng.standard_normal(2))
    batch = GmmParams(np.array(pis), np.array(mus))
    for loss in (mdn_loss_exact, mdn_loss_min):
        singles = np.mean([loss(GmmParams(p, m), z).item() for p, m, z in zip(pis, mus, zs)])
        assert loss(batch, np.array(zs)).item() == pytest.approx(singles, abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        mdn_loss_min(GmmParams(np.ones(1), np.zeros((1, 3))), np.zeros(2))


def test_topk_examples():
    mu = np.arange(6.0).reshape(3, 2)
    got = sample_topk(GmmParams(np.array([0.5, 0.1, 0.4]), mu), k=2)
    np.testing.assert_array_equal(got, [mu[0], mu[2]])
    uniform = sample_topk(GmmParams(np.full(3, 1 / 3), mu), k=3)
    np.testing.assert_array_equal(uniform, mu)


def test_topk_matches_sort_oracle():
    rng = np.random.default_rng(4)
    for _ in range(100):
        m = int(rng.integers(1, 10))
        pi = rng.integers(1, 4, m).astype(float)  # integer weights force ties
        pi /= pi.sum()
        mu = rng.standard_normal((m, 3))
        k = int(rng.integers(1, m + 1))
        order = sorted(range(m), key=lambda i: (-pi[i], i))[:k]
        np.testing.assert_array_equal(sample_topk(GmmParams(pi, mu), k), mu[order])


def test_topk_rejects_k_above_m():
    with pytest.raises(UsageError):
        sample_topk(GmmParams(np.full(2, 0.5), np.zeros((2, 2))), k=3)


def _small_config(**kw):
    base = dict(field_size=8, d=4, components=3, grey_widths=(4, 4, 4), hidden=16)
    base.update(kw)
    return MdnConfig(**base)


def test_forward_shapes_and_simplex():
    cfg = MdnConfig(field_size=16, d=8, components=8, grey_widths=(4, 4, 4), hidden=16)
    net = MixtureDensityNetwork(cfg, np.random.default_rng(0))
    params = predict(net, np.random.default_rng(1).standard_normal((3, 16, 16)))
    assert params.pi.shape == (3, 8) and params.mu.shape == (3, 8, 8)
    assert np.abs(params.pi.data.sum(axis=1) - 1).max() < 1e-9
    assert (params.pi.data > 0).all()


def test_zero_logits_give_uniform_weights():
    cfg = _small_config()
    net = MixtureDensityNetwork(cfg, np.random.default_rng(0))
    net.head.weight.data[:] = 0
    net.head.bias.data[:] = 0
    params = predict(net, np.zeros((1, 8, 8)))
    np.testing.assert_allclose(params.pi.data, np.full((1, 3), 1 / 3), atol=1e-15)


def test_softmax_closed_form():
    m = 8
    logits = np.zeros((1, m))
    logits[0, 0] = 1.0
    pi = F.softmax(Tensor(logits), axis=1).data[0]
    assert pi[0] == pytest.approx(math.e / (math.e + m - 1), abs=1e-15)
    assert pi[1] == pytest.approx(1 / (math.e + m - 1), abs=1e-15)


def test_forward_rejects_wrong_geometry():
    net = MixtureDensityNetwork(_small_config(), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        mdn_forward(net, np.zeros((1, 16, 16)))


def test_single_pair_regression_converges():
    # random init so the mean is not seeded at the target by k-means++
    cfg = _small_config(components=1, lr=1e-3, init_means="random")
    grey = np.random.default_rng(5).standard_normal((1, 8, 8))
    z = np.array([[0.4, -0.3, 0.2, 0.1]])
    net, history = train_mdn(grey, z, cfg, steps=600, seed=0)
    mu = predict(net, grey).mu.data[0, 0]
    assert np.abs(mu - z[0]).max() < 1e-3
    assert history.losses[-1] < history.losses[0]


def test_training_is_reproducible():
    cfg = _small_config()
    rng = np.random.default_rng(6)
    grey, z = rng.standard_normal((10, 8, 8)), rng.standard_normal((10, 4))
    a, _ = train_mdn(grey, z, cfg, epochs=3, seed=11)
    b, _ = train_mdn(grey, z, cfg, epochs=3, seed=11)
    pa, pb = predict(a, grey), predict(b, grey)
    assert np.abs(pa.mu.data - pb.mu.data).max() < 1e-9
    assert np.abs(pa.pi.data - pb.pi.data).max() < 1e-9


def test_training_requires_one_of_epochs_or_steps():
    cfg = _small_config()
    grey, z = np.zeros((2, 8, 8)), np.zeros((2, 4))
    with pytest.raises(UsageError):
        train_mdn(grey, z, cfg)
    with pytest.raises(UsageError):
        train_mdn(grey, z, cfg, epochs=1, steps=1)
    with pytest.raises(UsageError):
        train_mdn(grey[:0], z[:0], cfg, epochs=1)


def test_dead_components_are_warned_not_raised(caplog):
    cfg = _small_config(components=3, init_means="random")
    grey = np.zeros((4, 8, 8))
    z = np.zeros((4, 4))
    _, history = train_mdn(grey, z, cfg, epochs=1, seed=0)
    assert history.dead[0]
    assert any("never selected" in r.message for r in caplog.records)


def test_sigma_sq_must_be_positive():
    with pytest.raises(UsageError):
        MdnConfig(sigma_sq=0)
    with pytest.raises(ValueError):
        GmmParams(np.ones(1), np.zeros((1, 2)), sigma_sq=-1)

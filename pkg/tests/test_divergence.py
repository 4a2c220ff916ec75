import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gca.divergence import (gaussian_cross_entropy, gaussian_entropy, kl_gaussian,
                            mc_kl_oracle, min_pairwise_novelty, variational_bound)
from gca.gmm import GmmModel
from gca.spd import NotSPDError

from conftest import random_spd


def _mixture(rng, k, d, spread=3.0):
    return GmmModel(rng.dirichlet(np.ones(k)), spread * rng.standard_normal((k, d)),
                    np.array([random_spd(rng, d, scale=0.5, cond=5) for _ in range(k)]))


def test_kl_examples():
    one = np.eye(1)
    assert kl_gaussian([0.0], one, [0.0], one) == 0.0
    assert math.isclose(kl_gaussian([0.0], one, [1.0], one), 0.5, rel_tol=1e-14)
    v = kl_gaussian([0.0], one, [0.0], 4 * one)
    assert math.isclose(v, 0.5 * (0.25 + math.log(4) - 1), rel_tol=1e-14)
    assert abs(v - 0.318147) < 1e-6


def test_kl_matches_monte_carlo():
    # the 0.318147 example against sampling
    p = GmmModel(np.ones(1), np.zeros((1, 1)), np.ones((1, 1, 1)))
    q = GmmModel(np.ones(1), np.zeros((1, 1)), 4 * np.ones((1, 1, 1)))
    est, se = mc_kl_oracle(p, q, 100_000, seed=0)
    assert abs(est - 0.318147) < 3 * se


def test_kl_zero_only_for_identical(rng):
    cov = random_spd(rng, 3)
    mu = rng.standard_normal(3)
    assert abs(kl_gaussian(mu, cov, mu, cov)) <= 1e-12
    assert kl_gaussian(mu, cov, mu + 1e-3, cov) > 0


@given(seed=st.integers(0, 2**31))
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    v = kl_gaussian(rng.standard_normal(d), random_spd(rng, d, cond=100),
                    rng.standard_normal(d), random_spd(rng, d, cond=100))
    assert v >= -1e-12


def test_kl_is_ce_minus_entropy():
    rng = np.random.default_rng(7)
    for _ in range(100):
        d = int(rng.integers(1, 6))
        ma, mb = rng.standard_normal(d), rng.standard_normal(d)
        ca, cb = random_spd(rng, d), random_spd(rng, d)
        lhs = kl_gaussian(ma, ca, mb, cb)
        rhs = gaussian_cross_entropy(ma, ca, mb, cb) - gaussian_entropy(ca)
        assert abs(lhs - rhs) <= 1e-10


def test_cross_entropy_examples():
    ce = gaussian_cross_entropy([0.0], np.eye(1), [0.0], np.eye(1))
    assert math.isclose(ce, 0.5 * (math.log(2 * math.pi) + 1), rel_tol=1e-14)
    vals = [gaussian_cross_entropy(np.zeros(2), np.eye(2), np.zeros(2), s * np.eye(2))
            for s in (10.0, 100.0, 1000.0)]
    assert vals[0] < vals[1] < vals[2]
    # dominant term: half log-det
    assert math.isclose(vals[2] - vals[1], math.log(10), rel_tol=1e-2)


def test_non_spd_names_the_matrix():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotSPDError, match="cov_b"):
        kl_gaussian(np.zeros(2), np.eye(2), np.zeros(2), bad)
    with pytest.raises(NotSPDError, match="cov_a"):
        kl_gaussian(np.zeros(2), bad, np.zeros(2), np.eye(2))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        kl_gaussian(np.zeros(2), np.eye(2), np.zeros(3), np.eye(3))


def test_closed_form_against_sampling_50_pairs():
    rng = np.random.default_rng(11)
    for i in range(50):
        d = int(rng.integers(1, 4))
        a = GmmModel(np.ones(1), rng.standard_normal((1, d)), random_spd(rng, d)[None])
        b = GmmModel(np.ones(1), rng.standard_normal((1, d)), random_spd(rng, d)[None])
        est, se = mc_kl_oracle(a, b, 20_000, seed=i)
        exact = kl_gaussian(a.means[0], a.covariances[0], b.means[0], b.covariances[0])
        assert abs(est - exact) <= 3 * se, (i, est, exact, se)


def test_bound_zero_for_padded_copy(rng):
    p = _mixture(rng, 3, 2)
    q = GmmModel(np.append(p.weights, 0.0), np.vstack([p.means, [[9.0, 9.0]]]),
                 np.concatenate([p.covariances, np.eye(2)[None]]))
    st_ = variational_bound(p, q)
    assert abs(st_.bound_value) <= 1e-9


def test_bound_tight_for_single_gaussians(rng):
    ca, cb = random_spd(rng, 3), random_spd(rng, 3)
    ma, mb = rng.standard_normal(3), rng.standard_normal(3)
    p = GmmModel(np.ones(1), ma[None], ca[None])
    q = GmmModel(np.array([1.0, 0.0]), np.vstack([mb, mb + 5]), np.stack([cb, np.eye(3)]))
    assert math.isclose(variational_bound(p, q).bound_value, kl_gaussian(ma, ca, mb, cb),
                        rel_tol=1e-10)


def test_bound_upper_bounds_monte_carlo_50_pairs():
    rng = np.random.default_rng(23)
    for i in range(50):
        d = int(rng.integers(1, 4))
        p = _mixture(rng, int(rng.integers(1, 5)), d)
        q = _mixture(rng, int(rng.integers(1, 5)), d)
        b = variational_bound(p, q)
        est, se = mc_kl_oracle(p, q, 20_000, seed=i)
        assert b.bound_value >= est - 3 * se, (i, b.bound_value, est, se)


@given(seed=st.integers(0, 2**31))
@settings(max_examples=30)
def test_bound_marginals_and_monotone(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    p = _mixture(rng, int(rng.integers(1, 5)), d)
    q = _mixture(rng, int(rng.integers(2, 6)), d)
    b = variational_bound(p, q)
    assert np.allclose(b.phi.sum(axis=1), p.weights, atol=1e-9, rtol=0)
    assert np.allclose(b.psi.sum(axis=0), q.weights, atol=1e-9, rtol=0)
    assert np.all(b.phi >= 0) and np.all(b.psi >= 0)
    assert b.bound_value >= -1e-9
    trace = np.array(b.value_trace)
    assert np.all(np.diff(trace) <= 1e-9 * np.maximum(1.0, np.abs(trace[:-1])))


def test_bound_handles_zero_weight_in_p(rng):
    q = _mixture(rng, 3, 2)
    p = GmmModel(np.array([0.0, 1.0]), q.means[:2], q.covariances[:2])
    b = variational_bound(p, q)
    assert np.all(b.phi[0] == 0)
    assert np.isfinite(b.bound_value)
    assert np.allclose(b.psi.sum(axis=0), q.weights, atol=1e-9)


def test_bound_warm_start_and_flag(rng):
    p, q = _mixture(rng, 2, 2), _mixture(rng, 3, 2)
    cold = variational_bound(p, q)
    warm = variational_bound(p, q, init=cold)
    assert warm.iterations <= cold.iterations
    assert abs(warm.bound_value - cold.bound_value) <= 1e-8
    short = variational_bound(p, q, tol=0.0, max_iter=2)
    assert not short.converged and short.iterations == 2


def test_mc_oracle_examples():
    p = GmmModel(np.ones(1), np.zeros((1, 1)), np.ones((1, 1, 1)))
    est, se = mc_kl_oracle(p, p, 10_000)
    assert abs(est) <= 3 * se + 1e-15
    vals = []
    for shift in (0.5, 1.0, 2.0):
        q = GmmModel(np.ones(1), np.array([[shift]]), np.ones((1, 1, 1)))
        est, se = mc_kl_oracle(p, q, 50_000, seed=1)
        vals.append(est)
        if shift == 1.0:
            assert abs(est - 0.5) < 3 * se
    assert vals[0] < vals[1] < vals[2]


def test_min_pairwise_novelty():
    m = GmmModel(np.array([0.5, 0.5]), np.array([[0.0, 0.0], [4.0, 0.0]]),
                 np.stack([np.eye(2), np.eye(2)]))
    v, k = min_pairwise_novelty(m, m.means[1], m.covariances[1])
    assert v == 0.0 and k == 1
    v, k = min_pairwise_novelty(m, np.array([14.0, 0.0]), np.eye(2))
    assert math.isclose(v, 50.0, rel_tol=1e-12) and k == 1
    v, k = min_pairwise_novelty(m, np.array([2.0, 0.0]), np.eye(2))
    assert k == 0 and math.isclose(v, 2.0, rel_tol=1e-12)


def test_novelty_direction_is_component_first():
    m = GmmModel(np.ones(1), np.zeros((1, 1)), np.ones((1, 1, 1)))
    v, _ = min_pairwise_novelty(m, np.zeros(1), 4 * np.eye(1))
    assert math.isclose(v, kl_gaussian([0.0], np.eye(1), [0.0], 4 * np.eye(1)))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cohesion_rl.policy import (
    next_value_feature,
    policy_feature,
    policy_prob,
    policy_prob_grad,
    policy_probs,
    sample_action,
    value_feature,
)

finite = st.floats(-20, 20, allow_nan=False)


def test_value_feature_examples():
    s = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(value_feature(s, 0), [1, 1, 2, 3, 0, 0, 0, 0])
    np.testing.assert_array_equal(value_feature(s, 1), [1, 1, 2, 3, 1, 1, 2, 3])
    assert value_feature(s, 1).shape == (8,)


def test_value_feature_rejects_bad_action():
    with pytest.raises(ValueError):
        value_feature(np.zeros(3), 2)


def test_policy_feature_zero_for_no_action():
    s = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(policy_feature(s, 0), np.zeros(4))
    np.testing.assert_array_equal(policy_feature(s, 1), [0.3, -1.0, 2.0, 1.0])


def test_uniform_at_zero_theta():
    for s in np.random.default_rng(0).normal(size=(20, 3)):
        np.testing.assert_allclose(policy_prob(np.zeros(4), s), [0.5, 0.5])


def test_negative_exponent_sign():
    # theta . phi(s, 1) large and positive -> action 1 almost never taken
    s = np.array([1.0, 1.0, 1.0])
    assert policy_prob(np.full(4, 200.0), s)[1] < 1e-100
    assert policy_prob(np.full(4, -200.0), s)[1] == pytest.approx(1.0)


def test_extreme_parameters_stay_finite():
    p = policy_prob(np.full(4, 1e6), np.ones(3))
    assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0)


@settings(max_examples=200, deadline=None)
@given(arrays(float, 4, elements=finite), arrays(float, 3, elements=finite))
def test_normalization(theta, s):
    assert abs(policy_prob(theta, s).sum() - 1.0) < 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(float, 4, elements=finite), arrays(float, 3, elements=finite), st.floats(-50, 50))
def test_shift_invariance(theta, s, c):
    # adding c to both logits is equivalent to a constant offset in the exponent
    phi = np.stack([policy_feature(s, a) for a in (0, 1)])
    logits = -phi @ theta
    shifted = np.exp(logits + c - np.max(logits + c))
    np.testing.assert_allclose(shifted / shifted.sum(), policy_prob(theta, s), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 4, elements=st.floats(-3, 3)), arrays(float, 3, elements=st.floats(-3, 3)))
def test_next_value_feature_is_convex_combination(theta, s):
    y = next_value_feature(theta, s)
    lo = np.minimum(value_feature(s, 0), value_feature(s, 1))
    hi = np.maximum(value_feature(s, 0), value_feature(s, 1))
    assert np.all(y >= lo - 1e-12) and np.all(y <= hi + 1e-12)
    assert y[0] == 1.0


def test_next_value_feature_limits():
    s = np.array([0.5, -0.2, 1.5])
    np.testing.assert_allclose(next_value_feature(np.zeros(4), s),
                               0.5 * value_feature(s, 0) + 0.5 * value_feature(s, 1))
    # pi(1|s) = 1 exactly once the exponent underflows
    theta = np.array([0.0, 0.0, 0.0, -1e4])
    np.testing.assert_array_equal(next_value_feature(theta, s), value_feature(s, 1))


def test_prob_gradient_matches_central_differences():
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(30):
        theta = rng.normal(size=4)
        s = rng.normal(size=3)
        analytic = policy_prob_grad(theta, s)
        numeric = np.empty_like(analytic)
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            numeric[:, k] = (policy_probs(theta + e, s) - policy_probs(theta - e, s)) / (2 * h)
        err = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)
        assert err < 1e-6


def test_sample_action_frequency_and_replay():
    rng = np.random.default_rng(11)
    draws = [sample_action(np.zeros(4), np.ones(3), rng) for _ in range(10_000)]
    assert 0.48 <= np.mean(draws) <= 0.52
    a1 = [sample_action(np.zeros(4), np.ones(3), np.random.default_rng(5)) for _ in range(3)]
    assert len(set(a1)) == 1
    assert sample_action(np.array([0, 0, 0, -1e3]), np.ones(3), rng) == 1


def test_batched_theta_per_user():
    rng = np.random.default_rng(0)
    Theta = rng.normal(size=(5, 4))
    S = rng.normal(size=(5, 7, 3))
    batched = policy_probs(Theta[:, None, :], S)
    for n in range(5):
        for i in range(7):
            np.testing.assert_allclose(batched[n, i], policy_prob(Theta[n], S[n, i]))

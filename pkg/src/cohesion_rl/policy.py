"""Value/policy feature maps and the softmax policy.

Value feature:  x(s, a) = [1, s, a, a*s]      (length u = 2p + 2)
Policy feature: phi(s, a) = [a*s, a]          (length m = p + 1)
Policy:         pi(a | s) = exp(-theta . phi(s, a)) / sum_a' exp(-theta . phi(s, a'))

Functions broadcast over leading axes of ``s`` so whole trajectories can be
processed at once.
"""

from __future__ import annotations

import numpy as np

ACTIONS = (0, 1)


def value_dim(p: int) -> int:
    return 2 * p + 2


def policy_dim(p: int) -> int:
    return p + 1


def value_feature(s, a) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError("actions must be 0 or 1")
    a = np.broadcast_to(a, s.shape[:-1])[..., None]
    ones = np.ones(s.shape[:-1] + (1,))
    return np.concatenate([ones, s, a, a * s], axis=-1)


def policy_feature(s, a) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    a = np.broadcast_to(np.asarray(a, dtype=float), s.shape[:-1])[..., None]
    return np.concatenate([a * s, a], axis=-1)


def _policy_features(s, actions) -> np.ndarray:
    """phi for every action, stacked on a new axis -2: shape (..., A, m)."""
    return np.stack([policy_feature(s, a) for a in actions], axis=-2)


def policy_probs(theta, s, actions=ACTIONS) -> np.ndarray:
    """Action probabilities, shape ``s.shape[:-1] + (len(actions),)``.

    ``theta`` may carry the same leading axes as ``s`` (one row per user).
    """
    theta = np.asarray(theta, dtype=float)
    phi = _policy_features(s, actions)
    logits = -np.einsum("...am,...m->...a", phi, theta)
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def policy_prob(theta, s) -> np.ndarray:
    """(pi(0|s), pi(1|s)) for a single state or a batch."""
    return policy_probs(theta, s)


def prob_one(theta, s) -> np.ndarray:
    """pi(1|s) for the binary action set."""
    return policy_probs(theta, s)[..., 1]


def policy_prob_grad(theta, s, actions=ACTIONS) -> np.ndarray:
    """d pi(a|s) / d theta, shape ``(..., A, m)``.

    For the negative-exponent softmax: d pi_a = -pi_a (phi_a - sum_b pi_b phi_b).
    """
    phi = _policy_features(s, actions)
    pi = policy_probs(theta, s, actions)
    mean_phi = np.einsum("...a,...am->...m", pi, phi)
    return -pi[..., None] * (phi - mean_phi[..., None, :])


def sample_action(theta, s, rng: np.random.Generator) -> int:
    """Bernoulli draw from the policy; consumes exactly one uniform."""
    return int(rng.random() < prob_one(theta, s))


def next_value_feature(theta, s_next) -> np.ndarray:
    """Policy-averaged value feature y(s') = sum_a x(s', a) pi(a | s')."""
    pi = policy_probs(theta, s_next)
    x0 = value_feature(s_next, 0)
    # written as x0 + pi1 (x1 - x0) so action-free coordinates pass through exactly
    return x0 + pi[..., 1:2] * (value_feature(s_next, 1) - x0)

"""Graph-regularised actor: joint policy improvement for all users.

Objective (maximised over Theta, m x N):

    J(Theta) = sum_n mean_{s in D_n} sum_a Q(s, a; w_n) pi_{theta_n}(a | s)
               - mu3/2 sum_{i,j} c_ij ||theta_i - theta_j||^2
               - zeta3/2 sum_n ||theta_n||^2

The double sum over ordered pairs equals 2 Tr(Theta L Theta^T).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .policy import ACTIONS, policy_prob_grad, policy_probs, value_feature

logger = logging.getLogger(__name__)


def stack_states(states) -> tuple[np.ndarray, np.ndarray]:
    """Pad per-user state arrays to (N, t_max, p) with averaging weights.

    ``weights[n, i]`` is 1/t_n on real rows and 0 on padding.
    """
    if isinstance(states, np.ndarray) and states.ndim == 3:
        N, t, _ = states.shape
        return states, np.full((N, t), 1.0 / t)
    arrs = [np.asarray(s, dtype=float) for s in states]
    t_max = max(a.shape[0] for a in arrs)
    p = arrs[0].shape[1]
    S = np.zeros((len(arrs), t_max, p))
    wts = np.zeros((len(arrs), t_max))
    for n, a in enumerate(arrs):
        S[n, : len(a)] = a
        wts[n, : len(a)] = 1.0 / len(a)
    return S, wts


def _q_values(W: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Q(s_i, a; w_n) for every user, state and action: shape (N, t, A)."""
    X = np.stack([value_feature(S, a) for a in ACTIONS], axis=2)  # (N, t, A, u)
    return np.einsum("ntau,un->nta", X, W)


def _penalty(Theta, L, mu3, zeta3) -> float:
    pen = 0.5 * zeta3 * float(np.sum(Theta**2))
    if L is not None and mu3:
        pen += mu3 * float(np.einsum("mi,ij,mj->", Theta, L, Theta))
    return pen


def actor_objective(Theta, W, states, L, mu3: float, zeta3: float) -> float:
    Theta = np.asarray(Theta, dtype=float)
    S, wts = stack_states(states)
    Q = _q_values(np.asarray(W, dtype=float), S)
    pi = policy_probs(Theta.T[:, None, :], S)  # (N, t, A)
    data = float(np.sum(wts * np.sum(Q * pi, axis=-1)))
    return data - _penalty(Theta, L, mu3, zeta3)


def actor_gradient(Theta, W, states, L, mu3: float, zeta3: float) -> np.ndarray:
    """Analytic gradient of :func:`actor_objective`, shape m x N."""
    Theta = np.asarray(Theta, dtype=float)
    S, wts = stack_states(states)
    Q = _q_values(np.asarray(W, dtype=float), S)
    dpi = policy_prob_grad(Theta.T[:, None, :], S)  # (N, t, A, m)
    grad = np.einsum("nt,nta,ntam->mn", wts, Q, dpi)
    grad -= zeta3 * Theta
    if L is not None and mu3:
        grad -= mu3 * Theta @ (L + L.T)
    return grad


@dataclass
class ActorState:
    Theta: np.ndarray
    mu3: float = 0.0
    zeta3: float = 0.0
    max_iter: int = 200
    gtol: float = 1e-6

    def __post_init__(self):
        self.Theta = np.asarray(self.Theta, dtype=float)
        if self.mu3 < 0 or self.zeta3 < 0:
            raise ValueError("mu3 and zeta3 must be non-negative")


@dataclass
class AscentResult:
    x: np.ndarray
    fun: float
    n_iter: int
    converged: bool
    history: list


def bfgs_ascent(f, grad, x0, max_iter=200, gtol=1e-6, c1=1e-4, shrink=0.5,
                max_backtracks=60) -> AscentResult:
    """Maximise ``f`` by BFGS with an Armijo backtracking line search.

    Never returns a point with a lower value than ``x0``. Trial points with a
    non-finite value are treated as failed and the step is halved.
    """
    x = np.asarray(x0, dtype=float).copy()
    fx = f(x)
    if not np.isfinite(fx):
        raise FloatingPointError("actor objective is not finite at the starting point")
    g = grad(x)
    n = x.size
    H = None  # inverse Hessian of -f; identity scaled after the first step
    history = [fx]
    converged = False
    it = 0
    while it < max_iter:
        if np.max(np.abs(g)) < gtol:
            converged = True
            break
        # ascent direction
        d = g / max(np.linalg.norm(g), 1.0) if H is None else H @ g
        slope = float(g @ d)
        if slope <= 0:  # lost positive-definiteness; restart from gradient
            H = None
            d = g / max(np.linalg.norm(g), 1.0)
            slope = float(g @ d)
        step = 1.0
        for _ in range(max_backtracks):
            x_new = x + step * d
            f_new = f(x_new)
            if np.isfinite(f_new) and f_new >= fx + c1 * step * slope:
                break
            step *= shrink
        else:
            logger.debug("line search failed at iteration %d", it)
            break
        g_new = grad(x_new)
        s = x_new - x
        y = g - g_new  # gradient change of the minimised function -f
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if H is None:
                H = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            coef = rho * rho * float(y @ Hy) + rho
            H += np.outer(s, coef * s - rho * Hy) - np.outer(rho * Hy, s)
        x, fx, g = x_new, f_new, g_new
        history.append(fx)
        it += 1
    else:
        converged = np.max(np.abs(g)) < gtol
    return AscentResult(x, fx, it, bool(converged), history)


def actor_update(state: ActorState, W, states, L) -> tuple[np.ndarray, AscentResult]:
    """Warm-started joint ascent from ``state.Theta``; returns (Theta, result)."""
    Theta0 = state.Theta
    shape = Theta0.shape
    S, wts = stack_states(states)
    L = None if L is None else np.asarray(L, dtype=float)
    coupled = L is not None and state.mu3 > 0
    LL = L + L.T if coupled else None
    # Theta-free pieces, hoisted out of the optimiser loop. For the binary
    # action set pi(1|s) = sigmoid(-theta . [s, 1]) and sum_a Q pi = Q0 + dQ pi1.
    Q = _q_values(np.asarray(W, dtype=float), S)
    base = float(np.sum(wts * Q[..., 0]))
    wdq = wts * (Q[..., 1] - Q[..., 0])  # (N, t)
    psi = np.concatenate([S, np.ones(S.shape[:-1] + (1,))], axis=-1)  # (N, t, m)

    def pi1(Th):
        return expit(-np.einsum("ntm,mn->nt", psi, Th))

    def f(v):
        Th = v.reshape(shape)
        val = base + float(np.sum(wdq * pi1(Th))) - 0.5 * state.zeta3 * float(v @ v)
        if coupled:
            val -= state.mu3 * float(np.sum(Th * (Th @ L)))
        return val

    def g(v):
        Th = v.reshape(shape)
        p1 = pi1(Th)
        gr = -np.einsum("nt,ntm->mn", wdq * p1 * (1.0 - p1), psi) - state.zeta3 * Th
        if coupled:
            gr -= state.mu3 * (Th @ LL)
        return gr.ravel()

    res = bfgs_ascent(f, g, Theta0.ravel(), max_iter=state.max_iter, gtol=state.gtol)
    return res.x.reshape(shape), res

"""Long-run average reward of learned policies."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .policy import prob_one
from .sim import UserModel, UserNoise, initial_state, reward, stream, transition


@dataclass(frozen=True)
class EvalConfig:
    T_eval: int = 5000
    burn_in: int = 1000

    def __post_init__(self):
        if not self.T_eval > self.burn_in >= 0:
            raise ValueError("need T_eval > burn_in >= 0")


def simulate_rewards(users: Sequence[UserModel], Theta, cfg: EvalConfig, seed: int,
                     sigma0=None) -> np.ndarray:
    """Reward paths (N, T_eval) of every user following its own policy.

    Uses the evaluation streams of ``seed``, disjoint from the training ones.
    """
    Theta = np.atleast_2d(np.asarray(Theta, dtype=float))
    N = len(users)
    if Theta.shape[1] != N:
        raise ValueError(f"Theta has {Theta.shape[1]} columns for {N} users")
    p = Theta.shape[0] - 1
    sigma0 = np.eye(p) if sigma0 is None else np.asarray(sigma0)
    betas = np.stack([u.beta for u in users])
    noise = [UserNoise.draw(u, seed, cfg.T_eval, p, prefix="eval-") for u in users]
    xi = np.stack([z.xi for z in noise], axis=1)
    rho = np.stack([z.rho for z in noise], axis=1)
    act_u = np.stack([z.action_u for z in noise], axis=1)
    s = np.stack([initial_state(sigma0, stream(seed, u.user_id, "eval-init-state")) for u in users])
    th = Theta.T
    out = np.empty((cfg.T_eval, N))
    for t in range(cfg.T_eval):
        a = (act_u[t] < prob_one(th, s)).astype(int)
        s = transition(betas, s, a, xi[t])
        out[t] = reward(betas, s, a, rho[t])
    return out.T


def average_after_burn_in(rewards: np.ndarray, burn_in: int) -> np.ndarray:
    """Mean over steps burn_in+1 .. T (the last T - burn_in rewards)."""
    return np.asarray(rewards)[..., burn_in:].mean(axis=-1)


def long_run_avg_reward(user: UserModel, theta, cfg: EvalConfig = EvalConfig(), seed: int = 0,
                        sigma0=None) -> float:
    r = simulate_rewards([user], np.asarray(theta, dtype=float)[:, None], cfg, seed, sigma0)
    return float(average_after_burn_in(r, cfg.burn_in)[0])


def elrar(users: Sequence[UserModel], Theta, cfg: EvalConfig = EvalConfig(), seed: int = 0,
          sigma0=None) -> tuple[float, np.ndarray]:
    """Population mean of the per-user long-run average rewards, and the per-user vector."""
    etas = average_after_burn_in(simulate_rewards(users, Theta, cfg, seed, sigma0), cfg.burn_in)
    return float(etas.mean()), etas


def write_etas(path, run_seed: int, users: Sequence[UserModel], etas, append: bool = False) -> None:
    """Per-user eta rows (run_seed, user_id, eta)."""
    new = not append
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["run_seed", "user_id", "eta"])
        for u, e in zip(users, etas):
            w.writerow([run_seed, u.user_id, repr(float(e))])

"""Generative linear-Gaussian MDP for simulated step-count intervention.

Each user is a 14-coefficient dynamics vector ``beta``. States evolve as

    s1' = b1 s1 + xi1
    s2' = b2 s2 + b3 a + xi2
    s3' = b4 s3 + b5 s3 a + b6 a + xi3
    sj' = b7 sj + xij                  (j > 3)

and the reward of a step is read off the post-transition state:

    r = b14 * (b8 + a (b9 + b10 s1' + b11 s2') + b12 s1' - b13 s3' + rho)

All randomness is drawn from per-(user, purpose) streams derived from one
master seed, so results do not depend on the order users are simulated in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

N_BETA = 14

#: The three hand-designed group prototypes used in the experiments.
BETA_BASIC = np.array(
    [
        [0.40, 0.25, 0.35, 0.65, 0.10, 0.50, 0.22, 2.00, 0.15, 0.20, 0.32, 0.10, 0.45, 800.0],
        [0.35, 0.30, 0.30, 0.60, 0.05, 0.65, 0.28, 2.60, 0.35, 0.45, 0.45, 0.15, 0.50, 650.0],
        [0.20, 0.50, 0.20, 0.62, 0.06, 0.52, 0.27, 3.00, 0.15, 0.15, 0.50, 0.16, 0.70, 450.0],
    ]
)

# spawn-key tags; the integer values are part of the reproducibility contract
PURPOSES = {
    "beta": 0,
    "init-state": 1,
    "state-noise": 2,
    "reward-noise": 3,
    "action": 4,
    "eval-init-state": 5,
    "eval-state-noise": 6,
    "eval-reward-noise": 7,
    "eval-action": 8,
}


class ConfigurationError(ValueError):
    """Invalid simulator or experiment configuration."""


def stream(seed: int, user: int, purpose: str) -> np.random.Generator:
    """Independent generator for one (user, purpose) pair under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(user), PURPOSES[purpose]))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class UserModel:
    beta: np.ndarray
    sigma_s: float = 0.5
    sigma_r: float = 1.0
    user_id: int = 0

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        if beta.shape != (N_BETA,) or not np.all(np.isfinite(beta)):
            raise ConfigurationError(f"beta must be {N_BETA} finite values, got shape {beta.shape}")
        if self.sigma_s < 0 or self.sigma_r < 0:
            raise ConfigurationError("noise scales must be non-negative")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "beta": self.beta.tolist(),
            "sigma_s": self.sigma_s,
            "sigma_r": self.sigma_r,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UserModel":
        return cls(np.asarray(d["beta"]), d["sigma_s"], d["sigma_r"], d["user_id"])


@dataclass(frozen=True)
class PopulationSpec:
    beta_basic: np.ndarray = field(default_factory=lambda: BETA_BASIC.copy())
    n_per_group: int = 15
    sigma_b: float = 0.05
    sigma0: np.ndarray = field(default_factory=lambda: np.eye(3))
    sigma_s: float = 0.5
    sigma_r: float = 1.0

    def __post_init__(self):
        bb = np.atleast_2d(np.asarray(self.beta_basic, dtype=float))
        object.__setattr__(self, "beta_basic", bb)
        object.__setattr__(self, "sigma0", np.atleast_2d(np.asarray(self.sigma0, dtype=float)))
        self.validate()

    @property
    def n_groups(self) -> int:
        return self.beta_basic.shape[0]

    @property
    def n_users(self) -> int:
        return self.n_groups * self.n_per_group

    @property
    def p(self) -> int:
        return self.sigma0.shape[0]

    def validate(self):
        if self.beta_basic.shape[0] < 1 or self.beta_basic.shape[1] != N_BETA:
            raise ConfigurationError("beta_basic must be V x 14 with V >= 1")
        if self.n_per_group < 1:
            raise ConfigurationError("n_per_group must be >= 1")
        if self.sigma_b < 0:
            raise ConfigurationError("sigma_b must be non-negative")
        check_covariance(self.sigma0)


def check_covariance(sigma0: np.ndarray) -> np.ndarray:
    sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    if sigma0.ndim != 2 or sigma0.shape[0] != sigma0.shape[1]:
        raise ConfigurationError("covariance must be square")
    if not np.allclose(sigma0, sigma0.T, atol=1e-12):
        raise ConfigurationError("covariance must be symmetric")
    if np.linalg.eigvalsh(sigma0).min() < -1e-10:
        raise ConfigurationError("covariance must be positive semi-definite")
    return sigma0


def generate_population(spec: PopulationSpec, seed: int) -> list[UserModel]:
    """``n_per_group`` perturbed copies of each prototype, grouped contiguously."""
    users = []
    for v in range(spec.n_groups):
        for k in range(spec.n_per_group):
            uid = v * spec.n_per_group + k
            delta = stream(seed, uid, "beta").standard_normal(N_BETA) * spec.sigma_b
            users.append(UserModel(spec.beta_basic[v] + delta, spec.sigma_s, spec.sigma_r, uid))
    return users


def initial_state(sigma0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw s0 ~ N(0, sigma0). A zero covariance yields the zero state."""
    sigma0 = check_covariance(sigma0)
    p = sigma0.shape[0]
    # eigh-based factor: works for singular PSD matrices where cholesky fails
    vals, vecs = np.linalg.eigh(sigma0)
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return factor @ rng.standard_normal(p)


def _check_actions(a):
    a = np.asarray(a)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"actions must be 0 or 1, got {a!r}")
    return a.astype(float)


def transition(beta: np.ndarray, s: np.ndarray, a, xi: np.ndarray) -> np.ndarray:
    """Next state for given noise. Broadcasts over leading user axes.

    ``beta`` is (..., 14), ``s`` and ``xi`` are (..., p), ``a`` is (...).
    """
    beta = np.asarray(beta, dtype=float)
    s = np.asarray(s, dtype=float)
    a = _check_actions(a)
    b = lambda i: beta[..., i - 1]  # noqa: E731  1-based like the model
    out = np.empty(np.broadcast_shapes(s.shape, np.shape(xi)))
    out[..., 0] = b(1) * s[..., 0]
    out[..., 1] = b(2) * s[..., 1] + b(3) * a
    out[..., 2] = b(4) * s[..., 2] + b(5) * s[..., 2] * a + b(6) * a
    if s.shape[-1] > 3:
        out[..., 3:] = b(7)[..., None] * s[..., 3:]
    return out + xi


def reward(beta: np.ndarray, s_next: np.ndarray, a, rho) -> np.ndarray:
    """Reward of a step given the post-transition state and reward noise."""
    beta = np.asarray(beta, dtype=float)
    s_next = np.asarray(s_next, dtype=float)
    a = _check_actions(a)
    b = lambda i: beta[..., i - 1]  # noqa: E731
    s1, s2, s3 = s_next[..., 0], s_next[..., 1], s_next[..., 2]
    inner = (
        b(8)
        + a * (b(9) + b(10) * s1 + b(11) * s2)
        + b(12) * s1
        - b(13) * s3
        + rho
    )
    return b(14) * inner


def step(user: UserModel, s: np.ndarray, a: int, state_rng: np.random.Generator,
         reward_rng: np.random.Generator | None = None) -> tuple[np.ndarray, float]:
    """Advance one user one step. Returns ``(s_next, r)``.

    State noise is drawn from ``state_rng`` and reward noise from
    ``reward_rng`` (defaults to ``state_rng``).
    """
    if a not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {a!r}")
    s = np.asarray(s, dtype=float)
    reward_rng = state_rng if reward_rng is None else reward_rng
    xi = state_rng.standard_normal(s.shape[-1]) * user.sigma_s
    rho = reward_rng.standard_normal() * user.sigma_r
    s_next = transition(user.beta, s, a, xi)
    return s_next, float(reward(user.beta, s_next, a, rho))


@dataclass(frozen=True)
class Tuple:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray


@dataclass
class Trajectory:
    """Tuples of one user stored column-wise; ``len()`` is the tuple count."""

    user_id: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.next_states = np.asarray(self.next_states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=int)
        self.rewards = np.asarray(self.rewards, dtype=float)
        n = len(self.actions)
        if not (self.states.shape[0] == self.next_states.shape[0] == self.rewards.shape[0] == n):
            raise ValueError("trajectory arrays have inconsistent lengths")
        _check_actions(self.actions)

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[Tuple]:
        for i in range(len(self)):
            yield Tuple(self.states[i], int(self.actions[i]), float(self.rewards[i]), self.next_states[i])

    @classmethod
    def from_tuples(cls, user_id: int, tuples: Sequence[Tuple]) -> "Trajectory":
        return cls(
            user_id,
            np.array([tp.s for tp in tuples]),
            np.array([tp.a for tp in tuples]),
            np.array([tp.r for tp in tuples]),
            np.array([tp.s_next for tp in tuples]),
        )

    def is_chained(self) -> bool:
        return bool(np.array_equal(self.next_states[:-1], self.states[1:]))

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "next_states": self.next_states.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(d["user_id"], d["states"], d["actions"], d["rewards"], d["next_states"])


def draw_warm_start(user: UserModel, T0: int, seed: int, sigma0=None) -> Trajectory:
    """``T0`` tuples under the coin-flip policy mu(1|s) = 0.5.

    Uses the same per-user streams as the online runner, so the result equals
    the first ``T0`` tuples of any online run with the same seed.
    """
    if T0 < 1:
        raise ConfigurationError("T0 must be >= 1")
    sigma0 = np.eye(3) if sigma0 is None else sigma0
    noise = UserNoise.draw(user, seed, T0, np.shape(sigma0)[0])
    s = initial_state(sigma0, stream(seed, user.user_id, "init-state"))
    states, actions, rewards, nexts = [], [], [], []
    for t in range(T0):
        a = int(noise.action_u[t] < 0.5)
        s_next = transition(user.beta, s, a, noise.xi[t])
        r = float(reward(user.beta, s_next, a, noise.rho[t]))
        states.append(s), actions.append(a), rewards.append(r), nexts.append(s_next)
        s = s_next
    return Trajectory(user.user_id, np.array(states), np.array(actions), np.array(rewards), np.array(nexts))


@dataclass
class UserNoise:
    """Pre-drawn noise for ``T`` steps of one user (row t is step t)."""

    xi: np.ndarray  # (T, p)
    rho: np.ndarray  # (T,)
    action_u: np.ndarray  # (T,) uniforms; a = 1 iff u < pi(1|s)

    @classmethod
    def draw(cls, user: UserModel, seed: int, T: int, p: int, prefix: str = "") -> "UserNoise":
        uid = user.user_id
        xi = stream(seed, uid, prefix + "state-noise").standard_normal((T, p)) * user.sigma_s
        rho = stream(seed, uid, prefix + "reward-noise").standard_normal(T) * user.sigma_r
        u = stream(seed, uid, prefix + "action").random(T)
        return cls(xi, rho, u)


def write_jsonl(path, records: Sequence) -> None:
    """One ``to_dict()`` JSON object per line."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")


def read_jsonl(path, kind):
    with open(path) as fh:
        return [kind.from_dict(json.loads(line)) for line in fh if line.strip()]

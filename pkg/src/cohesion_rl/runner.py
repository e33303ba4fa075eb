"""Online actor-critic loop shared by the three methods.

Time-major: every step all users act, then (after the warm start) one joint
critic solve and one joint actor update are made from all data so far.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import critic as cr
from .actor import ActorState, actor_update
from .graph import CohesionGraph, build_graph, wst_feature
from .policy import policy_dim, prob_one
from .sim import (
    BETA_BASIC,
    ConfigurationError,
    PopulationSpec,
    Trajectory,
    UserNoise,
    generate_population,
    initial_state,
    reward,
    stream,
    transition,
    write_jsonl,
)

logger = logging.getLogger(__name__)

METHODS = ("separate", "cohesion1", "cohesion2")


@dataclass
class ExperimentConfig:
    method: str = "cohesion2"
    T: int = 80
    T0: int = 10
    gamma: float = 0.8
    mu1: float = 0.1
    mu2: float | None = None  # default 0.01 * mu1
    mu3: float | None = None  # default mu1
    zeta1: float | None = None  # default chosen from mu1, see resolved()
    zeta2: float | None = None
    zeta3: float | None = None
    zeta_a: float = 0.1
    zeta_c: float = 0.1
    K: int = 8
    p: int = 3
    n_per_group: int = 15
    sigma_b: float = 0.05
    sigma_s: float = 0.5
    sigma_r: float = 1.0
    beta_basic: list = field(default_factory=lambda: BETA_BASIC.tolist())
    sigma0: list | None = None  # default identity
    seed: int = 0
    # below this cohesion weight the ridge weights fall back to zeta_strong
    weak_cohesion: float = 1e-4
    zeta_strong: float = 0.1
    zeta_weak: float = 1e-6
    actor_max_iter: int = 200
    actor_gtol: float = 1e-6

    def resolved(self) -> "ExperimentConfig":
        """Copy with every defaulted weight filled in."""
        c = dataclasses.replace(self)
        if c.mu2 is None:
            c.mu2 = 0.01 * c.mu1
        if c.mu3 is None:
            c.mu3 = c.mu1
        z = c.zeta_strong if c.mu1 <= c.weak_cohesion else c.zeta_weak
        c.zeta1 = z if c.zeta1 is None else c.zeta1
        c.zeta2 = z if c.zeta2 is None else c.zeta2
        c.zeta3 = z if c.zeta3 is None else c.zeta3
        if c.sigma0 is None:
            c.sigma0 = np.eye(c.p).tolist()
        c.validate()
        return c

    def validate(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}")
        if not self.T > self.T0 >= 1:
            raise ConfigurationError("need T > T0 >= 1")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("gamma must lie in [0, 1)")
        weights = [self.mu1, self.mu2, self.mu3, self.zeta1, self.zeta2, self.zeta3, self.zeta_a, self.zeta_c]
        if any(w is not None and w < 0 for w in weights):
            raise ConfigurationError("regularisation weights must be non-negative")
        if self.method != "separate" and self.mu1 == 0 and not self.zeta1:
            raise ConfigurationError("cohesion critic needs mu1 > 0 or zeta1 > 0")

    def population_spec(self) -> PopulationSpec:
        sigma0 = np.eye(self.p) if self.sigma0 is None else np.asarray(self.sigma0)
        return PopulationSpec(np.asarray(self.beta_basic), self.n_per_group, self.sigma_b,
                              sigma0, self.sigma_s, self.sigma_r)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


class RunError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"update at step {step} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class RunResult:
    config: ExperimentConfig
    users: list
    Theta: np.ndarray
    W: np.ndarray | None
    graph: CohesionGraph | None
    trajectories: list
    n_updates: int
    wall_time_s: float

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(self.config.to_json())
        write_jsonl(out / "population.jsonl", self.users)
        write_jsonl(out / "trajectories.jsonl", self.trajectories)
        if self.graph is not None:
            self.graph.to_edge_list(out / "graph.txt")
        np.savetxt(out / "theta.csv", self.Theta, delimiter=",", fmt="%.17g")
        if self.W is not None:
            np.savetxt(out / "w.csv", self.W, delimiter=",", fmt="%.17g")
        return out


def _critic(cfg: ExperimentConfig, designs, L):
    if cfg.method == "separate":
        return cr.critic_update_separate(designs, cfg.gamma, cfg.zeta_c)
    ops = cr.assemble_block_operators(designs)
    R = cr.reward_matrix(designs)
    if cfg.method == "cohesion1":
        return cr.critic_update_alg1(ops, L, R, cfg.gamma, cfg.mu1, cfg.zeta1, cfg.mu2, cfg.zeta2)
    return cr.critic_update_alg2(ops, L, R, cfg.gamma, cfg.mu1, cfg.zeta1)


def run_online(config: ExperimentConfig) -> RunResult:
    """Warm start, one-time graph learning, then per-step critic/actor updates."""
    cfg = config.resolved()
    t_start = time.perf_counter()
    users = generate_population(cfg.population_spec(), cfg.seed)
    N, p, T, T0 = len(users), cfg.p, cfg.T, cfg.T0
    sigma0 = np.asarray(cfg.sigma0)
    betas = np.stack([u.beta for u in users])
    noise = [UserNoise.draw(u, cfg.seed, T, p) for u in users]
    xi = np.stack([z.xi for z in noise], axis=1)  # (T, N, p)
    rho = np.stack([z.rho for z in noise], axis=1)  # (T, N)
    act_u = np.stack([z.action_u for z in noise], axis=1)

    states = np.empty((N, T, p))
    nexts = np.empty((N, T, p))
    actions = np.empty((N, T), dtype=int)
    rewards = np.empty((N, T))
    s = np.stack([initial_state(sigma0, stream(cfg.seed, u.user_id, "init-state")) for u in users])

    Theta = np.zeros((policy_dim(p), N))
    W = None
    graph = None
    L = None
    separate = cfg.method == "separate"
    actor = ActorState(
        Theta,
        mu3=0.0 if separate else cfg.mu3,
        zeta3=cfg.zeta_a if separate else cfg.zeta3,
        max_iter=cfg.actor_max_iter,
        gtol=cfg.actor_gtol,
    )
    n_updates = 0
    for t in range(T):  # 0-based; step t + 1 in 1-based terms
        p1 = np.full(N, 0.5) if t < T0 else prob_one(Theta.T, s)
        a = (act_u[t] < p1).astype(int)
        s_next = transition(betas, s, a, xi[t])
        r = reward(betas, s_next, a, rho[t])
        states[:, t], actions[:, t], rewards[:, t], nexts[:, t] = s, a, r, s_next
        s = s_next
        step = t + 1
        if step == T0 and not separate:
            feats = [wst_feature(_traj(n, states, actions, rewards, nexts, T0), T0) for n in range(N)]
            graph = build_graph(feats, cfg.K)
            L = graph.L
        if step > T0:
            try:
                designs = [
                    cr.build_design(states[n, :step], actions[n, :step], rewards[n, :step],
                                    nexts[n, :step], Theta[:, n])
                    for n in range(N)
                ]
                W = _critic(cfg, designs, L)
                actor.Theta = Theta
                Theta, res = actor_update(actor, W, states[:, :step], L)
            except (np.linalg.LinAlgError, FloatingPointError) as exc:
                raise RunError(step, exc) from exc
            n_updates += 1
            logger.debug("step %d: actor iters=%d converged=%s J=%.3f", step, res.n_iter, res.converged, res.fun)

    trajectories = [_traj(n, states, actions, rewards, nexts, T) for n in range(N)]
    for tr, u in zip(trajectories, users):
        tr.user_id = u.user_id
    return RunResult(cfg, users, Theta, W, graph, trajectories, n_updates, time.perf_counter() - t_start)


def _traj(n, states, actions, rewards, nexts, upto) -> Trajectory:
    return Trajectory(n, states[n, :upto], actions[n, :upto], rewards[n, :upto], nexts[n, :upto])


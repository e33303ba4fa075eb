"""Acceptance criteria 1-10, each printed as one PASS/FAIL line.

Criteria 7-10 run the experiment sweeps at desk scale (8 seeds per cell) and
take roughly half an hour on one core. Sweep results are cached per module so
criterion 10 reuses the cells of 7-9.
"""

import time

import numpy as np
import pytest

from cohesion_rl.actor import actor_gradient, actor_objective
from cohesion_rl.cli import SweepSpec, aggregate, run_sweep
from cohesion_rl.critic import (
    assemble_block_operators,
    check_spd,
    critic_update_alg1,
    critic_update_alg2,
    graph_kron,
    lstdq_separate,
    projection_operator,
    reward_matrix,
)
from cohesion_rl.graph import build_graph, laplacian
from cohesion_rl.policy import policy_prob
from cohesion_rl.runner import ExperimentConfig, run_online
from oracles import (
    brute_force_knn_graph,
    central_difference,
    dense_alg1,
    dense_alg2,
    random_designs,
    random_laplacian,
    rel,
)

SEEDS = 8
GAMMAS = (0.0, 0.2, 0.4, 0.6, 0.8, 0.95)


def report(capsys, n, ok, detail, t0):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail}; {time.perf_counter() - t0:.1f}s)")


# --- property / oracle suite --------------------------------------------------

def test_criterion_1_reduction_identity(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(50):
        rng = np.random.default_rng(10_000 + k)
        N, u, t = int(rng.integers(1, 8)), int(rng.integers(2, 9)), int(rng.integers(3, 30))
        d = random_designs(rng, N, u, t)
        gamma = float(rng.uniform(0, 0.95))
        W = critic_update_alg2(assemble_block_operators(d), random_laplacian(rng, N), reward_matrix(d),
                               gamma, 0.0, 0.1)
        for n in range(N):
            worst = max(worst, rel(W[:, n], lstdq_separate(d[n].X, d[n].Y, d[n].r, gamma, 0.1)))
    base = dict(T=50, T0=10, seed=0)
    sep = run_online(ExperimentConfig(method="separate", zeta_a=0.1, zeta_c=0.1, **base))
    coh = run_online(ExperimentConfig(method="cohesion2", mu1=0.0, mu2=0.0, mu3=0.0,
                                      zeta1=0.1, zeta2=0.1, zeta3=0.1, **base))
    theta_err = float(np.max(np.abs(sep.Theta - coh.Theta)))
    ok = worst < 1e-10 and theta_err < 1e-8 and time.perf_counter() - t0 < 60
    report(capsys, 1, ok, f"max rel err {worst:.1e} over 50 instances, end-to-end max |dTheta| {theta_err:.1e}", t0)
    assert worst < 1e-10
    assert theta_err < 1e-8
    assert time.perf_counter() - t0 < 60


def test_criterion_2_dense_oracle(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(20):
        rng = np.random.default_rng(20_000 + k)
        N, u, t = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 7))
        d = random_designs(rng, N, u, t)
        L = random_laplacian(rng, N)
        gamma = float(rng.uniform(0, 0.95))
        mu1, zeta1, mu2, zeta2 = rng.choice([0.01, 0.1, 1.0], size=4)
        ops, R = assemble_block_operators(d), reward_matrix(d)
        worst = max(worst,
                    rel(critic_update_alg1(ops, L, R, gamma, mu1, zeta1, mu2, zeta2),
                        dense_alg1(d, L, gamma, mu1, zeta1, mu2, zeta2)),
                    rel(critic_update_alg2(ops, L, R, gamma, mu1, zeta1), dense_alg2(d, L, gamma, mu1, zeta1)))
    report(capsys, 2, worst < 1e-8, f"max rel err {worst:.1e} over 20 instances", t0)
    assert worst < 1e-8


def test_criterion_3_spd_factorization(capsys):
    t0 = time.perf_counter()
    failures = 0
    min_eig = np.inf
    for k in range(100):
        rng = np.random.default_rng(30_000 + k)
        N, u = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        zeta2 = (0.0, 0.1)[k % 2]
        d = random_designs(rng, N, u, int(rng.integers(u, 12)))
        L = random_laplacian(rng, N)
        P = projection_operator(assemble_block_operators(d), L, float(rng.uniform(0, 0.95)),
                                float(rng.choice([0.0, 0.1, 1.0])), 0.1)
        if zeta2 == 0:
            assert np.linalg.matrix_rank(P.toarray()) == N * u
        B = (P.T @ P + graph_kron(L, 0.5, zeta2, u)).toarray()
        assert np.max(np.abs(B - B.T)) < 1e-10
        ok, lam = check_spd(P, L, 0.5, zeta2, u)
        failures += not ok
        min_eig = min(min_eig, lam)
    report(capsys, 3, failures == 0, f"{failures} failures in 100, smallest eigenvalue {min_eig:.2e}", t0)
    assert failures == 0


def test_criterion_4_kronecker_spectrum(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(2, 6):
        path = np.diag(np.ones(n - 1), 1)
        for C in (path + path.T, 1 - np.eye(n)):
            L = laplacian(C)
            lam = np.linalg.eigvalsh(L)
            for u in (1, 2, 3):
                for mu, zeta in ((1.0, 0.0), (0.3, 0.1), (5.0, 2.0)):
                    expected = np.sort(np.repeat(mu * lam + zeta, u))
                    got = np.sort(np.linalg.eigvalsh(graph_kron(L, mu, zeta, u).toarray()))
                    worst = max(worst, float(np.max(np.abs(got - expected))))
    report(capsys, 4, worst < 1e-8, f"max eigenvalue error {worst:.1e}", t0)
    assert worst < 1e-8


def test_criterion_5_actor_gradient(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(50):
        rng = np.random.default_rng(50_000 + k)
        N, t = int(rng.integers(1, 6)), int(rng.integers(2, 10))
        Theta = rng.normal(size=(4, N))
        W = rng.normal(size=(8, N)) * 10
        S = rng.normal(size=(N, t, 3))
        L = random_laplacian(rng, N)
        mu3, zeta3 = rng.uniform(0, 2, size=2)
        G = actor_gradient(Theta, W, S, L, mu3, zeta3)
        num = central_difference(lambda T: actor_objective(T, W, S, L, mu3, zeta3), Theta, h=1e-5)
        worst = max(worst, float(np.max(np.abs(G - num)) / max(np.max(np.abs(num)), 1e-8)))
    ok = worst < 1e-5 and time.perf_counter() - t0 < 60
    report(capsys, 5, ok, f"max rel err {worst:.1e} over 50 instances", t0)
    assert worst < 1e-5


def test_criterion_6_normalization_and_knn(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(60_000)
    norm_err = 0.0
    for _ in range(2000):
        theta = rng.normal(size=4) * rng.choice([1, 10, 100])
        s = rng.normal(size=3) * rng.choice([1, 10])
        norm_err = max(norm_err, abs(policy_prob(theta, s).sum() - 1))
    mismatches = 0
    for k in range(100):
        N = int(rng.integers(2, 11))
        K = int(rng.integers(1, N))
        V = rng.integers(0, 3, size=(N, 4)).astype(float) if k % 2 else rng.normal(size=(N, 4))
        mismatches += not np.array_equal(build_graph(V, K).C, brute_force_knn_graph(V, K))
    ok = norm_err <= 1e-12 and mismatches == 0
    report(capsys, 6, ok, f"max |sum pi - 1| {norm_err:.1e}, {mismatches}/100 KNN mismatches", t0)
    assert norm_err <= 1e-12
    assert mismatches == 0


# --- desk-scale experiments -------------------------------------------------

@pytest.fixture(scope="module")
def sweeps():
    cache = {}

    def get(name, **kw):
        if name not in cache:
            t0 = time.perf_counter()
            rows, errors = run_sweep(SweepSpec(seeds=SEEDS, **kw))
            assert not errors, errors[0]
            cache[name] = (rows, time.perf_counter() - t0)
        return cache[name]

    return get


def mean_of(agg, method, gammas, value):
    return float(np.mean([agg[(method, g, value)][0] for g in gammas]))


def table1_cells(sweeps):
    return sweeps("t1", setting="s1", values=(50,), gammas=(0.8,))


def s2_cells(sweeps):
    return sweeps("s2", setting="s2", values=(5, 20), gammas=GAMMAS, methods=("separate", "cohesion2"))


def s3_cells(sweeps):
    sep, t_sep = sweeps("s3-sep", setting="s3", gammas=(0.8,), methods=("separate",))
    coh, t_coh = sweeps("s3-coh", setting="s3", values=(0.01, 0.1, 1.0), gammas=(0.8,),
                        methods=("cohesion1", "cohesion2"))
    return sep + coh, t_sep + t_coh


@pytest.mark.slow
def test_criterion_7_ordering(capsys, sweeps):
    t0 = time.perf_counter()
    rows, elapsed = table1_cells(sweeps)
    agg = aggregate(rows)
    sep, c1, c2 = (agg[(m, 0.8, 50)][0] for m in ("separate", "cohesion1", "cohesion2"))
    ok = c2 >= c1 > sep and c2 - sep >= 80 and elapsed < 15 * 60
    report(capsys, 7, ok, f"separate {sep:.1f}, cohesion1 {c1:.1f}, cohesion2 {c2:.1f}, gap {c2 - sep:.1f}", t0)
    assert c2 >= c1
    assert c1 > sep
    assert c2 - sep >= 80
    assert elapsed < 15 * 60


@pytest.mark.slow
def test_criterion_8_warm_start_trend(capsys, sweeps):
    t0 = time.perf_counter()
    rows, elapsed = s2_cells(sweeps)
    agg = aggregate(rows)
    sep5, sep20 = mean_of(agg, "separate", GAMMAS, 5), mean_of(agg, "separate", GAMMAS, 20)
    adv5 = mean_of(agg, "cohesion2", GAMMAS, 5) - sep5
    adv20 = mean_of(agg, "cohesion2", GAMMAS, 20) - sep20
    ok = sep20 - sep5 >= 100 and adv20 <= 0.5 * adv5 and elapsed < 30 * 60
    report(capsys, 8, ok, f"gamma-averaged separate {sep5:.1f} -> {sep20:.1f} (+{sep20 - sep5:.1f}), "
                          f"advantage {adv5:.1f} -> {adv20:.1f}", t0)
    assert sep20 - sep5 >= 100
    assert adv20 <= 0.5 * adv5
    assert elapsed < 30 * 60


@pytest.mark.slow
def test_criterion_9_cohesion_weight_flatness(capsys, sweeps):
    t0 = time.perf_counter()
    rows, elapsed = s3_cells(sweeps)
    sep_by_seed = {}
    for r in rows:
        if r["method"] == "separate":
            sep_by_seed.setdefault(r["seed"], set()).add(r["elrar"])
    flat = all(len(v) == 1 for v in sep_by_seed.values()) and len(sep_by_seed) == SEEDS
    agg = aggregate(rows)
    sep = agg[("separate", 0.8, 0.1)][0]
    margins = {(m, v): agg[(m, 0.8, v)][0] - sep for m in ("cohesion1", "cohesion2") for v in (0.01, 0.1, 1.0)}
    worst = min(margins.values())
    ok = flat and worst > 0 and elapsed < 30 * 60
    report(capsys, 9, ok, f"separate bit-equal across mu1: {flat}, smallest cohesion margin {worst:.1f}", t0)
    assert flat
    assert worst > 0
    assert elapsed < 30 * 60


@pytest.mark.slow
def test_criterion_10_magnitude(capsys, sweeps):
    t0 = time.perf_counter()
    means = []
    for rows, _ in (table1_cells(sweeps), s2_cells(sweeps), s3_cells(sweeps)):
        means += [m for m, _, _ in aggregate(rows).values()]
    lo, hi = min(means), max(means)
    ok = 900 <= lo and hi <= 1900
    report(capsys, 10, ok, f"{len(means)} reported cell means in [{lo:.1f}, {hi:.1f}]", t0)
    assert 900 <= lo
    assert hi <= 1900

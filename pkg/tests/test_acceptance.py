"""Acceptance gate: ten criteria, one printed PASS/FAIL line each.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are also
repeated in the terminal summary. Criteria 8 and 10 share one sweep fixture and
take the bulk of the time (two desk-scale sweeps).
"""

import dataclasses
import math
import os
import time

import numpy as np
import pytest
from scipy.special import expit

from conftest import CONFIGS, record
from engagement_rl.config import parse_config
from engagement_rl.estimation import (
    AdherenceEstimator,
    ConfidenceConfig,
    DynamicsEstimator,
    mu_radius,
    theta_radius,
)
from engagement_rl.experiments import Truth, run_ablation, run_trajectory, sysid_rate_bench
from engagement_rl.model import (
    DEFAULT_BOUNDS,
    NoiseSpec,
    PatientParams,
    RewardSpec,
    initial_state,
    simulate_batch,
    step,
)
from engagement_rl.planning import (
    BellmanContext,
    build_grid,
    build_noise_quadrature,
    value_bound,
)
from engagement_rl.policies import UcbBold, UcbBoldConfig, epoch_count_bound

pytestmark = pytest.mark.slow

B2 = DEFAULT_BOUNDS.with_treatments(2)
QUAD = build_noise_quadrature(NoiseSpec())


def loglog_slope(T, y):
    return float(np.polyfit(np.log(T), np.log(y), 1)[0])


# 1 ---------------------------------------------------------------------------

def test_c1_boundedness():
    t0 = time.perf_counter()
    bd = DEFAULT_BOUNDS
    M, K, T = bd.M, 10_000, 500
    C = bd.c_x
    rng = np.random.default_rng(1)
    worst_x, worst_z = 0.0, 0.0
    for half, noise in enumerate((NoiseSpec(1.0, bd.w_bar), NoiseSpec(25.0, bd.w_bar))):
        k = K // 2
        a = rng.uniform(0, bd.a_bar, k)
        b = rng.uniform(-bd.b_bar, bd.b_bar, (k, M))
        c = rng.uniform(-bd.c_bar, bd.c_bar, (k, M))
        mu = rng.uniform(-bd.mu_bar, bd.mu_bar, (k, M))
        # a quarter sit on the corners of the box that push the state outward
        corner = rng.random(k) < 0.25
        sign = np.where(rng.random(k) < 0.5, -1.0, 1.0)
        a[corner] = bd.a_bar
        b[corner] = sign[corner, None] * bd.b_bar
        c[corner] = sign[corner, None] * bd.c_bar
        kind = rng.integers(0, 4, k)  # uniform, fixed, threshold, outward push
        fixed = rng.integers(0, M + 1, k)
        thr = rng.uniform(-C / 2, C / 2, k)
        lo_hi = rng.integers(0, M + 1, (k, 2))
        push = np.where(sign > 0, 1, M)

        def rule(t, x):
            u = rng.integers(0, M + 1, k)
            u = np.where(kind == 1, fixed, u)
            u = np.where(kind == 2, np.where(x > thr, lo_hi[:, 1], lo_hi[:, 0]), u)
            return np.where(kind == 3, push, u)

        x0 = rng.uniform(-C, C, k)
        xs, ds, us = simulate_batch(a, b, c, mu, noise, rule, rng, x0=x0, T=T)
        z2 = xs[:, :-1] ** 2 + (us > 0) + (ds > 0)
        worst_x = max(worst_x, np.abs(xs).max())
        worst_z = max(worst_z, z2.max())
    dt = time.perf_counter() - t0
    ok = worst_x <= C and worst_z <= C * C + 2 and dt < 60
    assert record(1, ok, f"max|x|={worst_x:.3f} <= C_x={C:g}, max||z||^2={worst_z:.1f} <= "
                         f"{C * C + 2:g}, {K} trajectories x T={T} in {dt:.1f}s (< 60s)")


# 2 ---------------------------------------------------------------------------

def test_c2_identification_rate():
    cfg = parse_config(os.path.join(CONFIGS, "sysid.cfg"))
    assert cfg.sysid.reps == 50 and tuple(cfg.sysid.checkpoints) == (256, 1024, 4096, 16384)
    t0 = time.perf_counter()
    rep = sysid_rate_bench(cfg.sysid, cfg.noise, cfg.bounds, cfg.seed)
    dt = time.perf_counter() - t0
    th, mu = rep["theta_slope"], rep["mu_slope"]
    ok = -0.65 <= th <= -0.35 and -0.65 <= mu <= -0.35 and dt < 600
    assert record(2, ok, f"theta slope {th:.3f}, mu slope {mu:.3f} (need [-0.65, -0.35]), "
                         f"{dt:.0f}s (< 600s)")


# 3 ---------------------------------------------------------------------------

def coverage_run(params, cfg, T, rng):
    """Whether theta* and mu* stayed in their confidence sets at every t <= T."""
    M = params.M
    dyn = DynamicsEstimator(M, cfg.lambda1, cfg.bounds)
    adh = AdherenceEstimator(M, cfg.lambda2, cfg.bounds.mu_bar)
    theta = params.theta
    th_ok = mu_ok = True
    mu_r = [mu_radius(cfg, adh, i) for i in range(1, M + 1)]
    x = initial_state(params, rng)
    for _ in range(T):
        u = int(rng.integers(M + 1))
        d, x_next, _ = step(params, x, u, rng)
        dyn.update_sparse(x, u, d, x_next)
        if th_ok and not dyn.covers(theta, theta_radius(cfg, dyn.t)):
            th_ok = False
        if u:
            adh.update(u, x, d == u)
            adh.solve(u, warm=adh.mu_hat[u - 1])
            mu_r[u - 1] = mu_radius(cfg, adh, u)
            if mu_ok and abs(adh.mu_hat[u - 1] - params.mu[u - 1]) > mu_r[u - 1]:
                mu_ok = False
        x = x_next
    return th_ok, mu_ok


def test_c3_coverage():
    t0 = time.perf_counter()
    params = PatientParams(0.5, [-0.8, 0.6], [1.2, -0.5], [-0.3, 0.4])
    cfg = ConfidenceConfig(0.1, 1.0, 1.0, 1.0, B2)
    n, T = 500, 2000
    res = np.array([coverage_run(params, cfg, T, np.random.default_rng([3, r]))
                    for r in range(n)])
    dt = time.perf_counter() - t0
    floor = 0.90 - 3 * math.sqrt(0.9 * 0.1 / n)
    cov_th, cov_mu = res.mean(axis=0)
    ok = cov_th >= floor and cov_mu >= floor and dt < 600
    assert record(3, ok, f"coverage theta {cov_th:.3f}, mu {cov_mu:.3f} (need >= {floor:.3f}), "
                         f"{n} runs x T={T} in {dt:.0f}s (< 600s)")


# 4 ---------------------------------------------------------------------------

def test_c4_value_iteration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    grid = build_grid(B2.c_x)
    worst = -np.inf
    bound_ok = True
    for j in range(100):
        spec = RewardSpec((1.0, float(rng.uniform(0.5, 2.0))), beta=float(rng.uniform(0, 1)),
                          beta0=float(rng.normal()), gamma=float(rng.uniform(0.0, 0.98)))
        a = rng.uniform(0, B2.a_bar)
        b, c, mu = (rng.uniform(-s, s, 2) for s in (B2.b_bar, B2.c_bar, B2.mu_bar))
        bonus = rng.uniform(0, 1, (3, grid.n))
        ctx = BellmanContext(a, b, c, mu, spec, grid, QUAD, bonus)
        mode = ("optimal", "policy", "optimistic")[j % 3]
        pol = rng.integers(0, 3, grid.n) if mode == "policy" else None
        J1, J2 = rng.normal(scale=10, size=(2, grid.n))
        d_out = np.abs(ctx.apply(J1, mode, pol).values - ctx.apply(J2, mode, pol).values).max()
        worst = max(worst, d_out / np.abs(J1 - J2).max() - spec.gamma)
        if j % 10 == 0:
            J = ctx.value_iteration("optimal", tol=1e-8)
            bound_ok &= bool(np.abs(J.values).max() <= value_bound(spec))

    # rollout oracle on a single-treatment system
    bd1 = DEFAULT_BOUNDS.with_treatments(1)
    g1 = build_grid(bd1.c_x)
    p = PatientParams(0.6, [-1.2], [2.0], [-0.5])
    spec = RewardSpec((1.0,), beta=0.5, beta0=0.0, gamma=0.8)
    ctx = BellmanContext.from_params(p, spec, g1, QUAD)
    J = ctx.value_iteration("optimal", tol=1e-9)
    C_J = value_bound(spec)
    H = math.ceil(math.log(1e-4) / math.log(spec.gamma))
    n = 2000
    gaps = []
    for x0 in (-6.0, -2.0, 0.0, 3.0, 8.0):
        ret = np.zeros(n)

        def greedy(t, x):
            return J.policy[g1.nearest(x)]

        xs, ds, us = simulate_batch(np.full(n, p.a), np.tile(p.b, (n, 1)), np.tile(p.c, (n, 1)),
                                    np.tile(p.mu, (n, 1)), p.noise, greedy, rng,
                                    x0=np.full(n, x0), T=H)
        r = -spec.beta * expit(spec.beta0 - xs[:, :-1]) + spec.rho[0] * (ds == 1)
        ret = r @ spec.gamma ** np.arange(H)
        se = ret.std(ddof=1) / math.sqrt(n)
        gaps.append((abs(ret.mean() - J(x0)), 3 * se + 0.05 * C_J))
    dt = time.perf_counter() - t0
    rollout_ok = all(g <= tol for g, tol in gaps)
    ok = worst <= 1e-9 and bound_ok and rollout_ok and dt < 300
    err = max(g / tol for g, tol in gaps)
    assert record(4, ok, f"max(contraction - gamma)={worst:.2e} (<= 1e-9), ||J*|| bound "
                         f"{'held' if bound_ok else 'VIOLATED'}, rollout error/allowance max "
                         f"{err:.2f} (<= 1) over {len(gaps)} start states, {dt:.0f}s (< 300s)")


# 5 ---------------------------------------------------------------------------

def optimism_run(params, spec, truth, T, rng):
    pol = UcbBold(B2, spec, params.noise, truth.grid, truth.quad, UcbBoldConfig(),
                  scales=(1.0, 1.0), keep_history=True)
    x = initial_state(params, rng)
    for _ in range(T):
        u = pol.act(x, rng)
        d, x_next, _ = step(params, x, u, rng)
        pol.observe(x, u, d, x_next)
        x = x_next
    covered = True
    margin = np.inf
    for s in pol.history:
        e = s.theta - params.theta
        covered &= bool(math.sqrt(e @ s.V @ e) <= s.alpha_theta)
        covered &= bool(np.all(np.abs(s.mu - params.mu) <= s.alpha_mu))
        margin = min(margin, float((s.J.values - truth.J_star.values).min()))
    return covered, margin, pol.epoch


def test_c5_optimism():
    t0 = time.perf_counter()
    params = PatientParams(0.4, [-0.8, -1.4], [1.4, 1.0], [-0.4, -0.8])
    spec = RewardSpec((1.0, 1.5), gamma=0.8)
    truth = Truth(params, spec, build_grid(B2.c_x), QUAD)
    runs = [optimism_run(params, spec, truth, 500, np.random.default_rng([5, r]))
            for r in range(100)]
    dt = time.perf_counter() - t0
    kept = [m for cov, m, _ in runs if cov]
    slack = -0.05 * truth.C_J
    ok = bool(kept) and min(kept) >= slack and dt < 600
    worst = min(kept) if kept else float("nan")
    assert record(5, ok, f"{len(kept)}/100 runs covered; min over epochs and nodes of "
                         f"J~ - J* = {worst:.3f} (need >= {slack:.3f}), {dt:.0f}s (< 600s)")


# 6 and 7 ---------------------------------------------------------------------

REGRET_T = (250, 1000, 4000)


@pytest.fixture(scope="module")
def regret_runs():
    a = float(expit(-0.4))
    params = PatientParams(a, [-0.8, -1.4, 0.0], [1.4, 1.0, 2 * (1 - a)], [-0.4, -0.8, 0.0])
    spec = RewardSpec((1.0, 1.0, 0.0), gamma=0.8)
    grid = build_grid(DEFAULT_BOUNDS.c_x)
    truth = Truth(params, spec, grid, QUAD)
    t0 = time.perf_counter()
    out = []
    for rep in range(25):
        pol = UcbBold(DEFAULT_BOUNDS, spec, params.noise, grid, QUAD)
        logdet0 = pol.dyn.logdet()
        s = run_trajectory(truth, pol, REGRET_T[-1], np.random.default_rng([6, rep]))
        bound = epoch_count_bound(pol.dyn.logdet(), logdet0, REGRET_T[-1], DEFAULT_BOUNDS.M)
        out.append((s.cumulative[[t - 1 for t in REGRET_T]], pol.epoch, bound))
    return out, time.perf_counter() - t0


def test_c6_sublinear_regret(regret_runs):
    runs, dt = regret_runs
    R = np.array([r for r, _, _ in runs])
    med = np.median(R, axis=0)
    slope = loglog_slope(REGRET_T, med)
    per_step = R.mean(axis=0) / np.array(REGRET_T)
    ratio = per_step[-1] / per_step[0]
    ok = slope <= 0.8 and ratio < 0.5 and dt < 1200
    assert record(6, ok, f"median regret {np.round(med, 2).tolist()} at T={list(REGRET_T)}, "
                         f"slope {slope:.3f} (<= 0.8), per-step ratio {ratio:.3f} (< 0.5), "
                         f"{dt:.0f}s (< 1200s)")


def test_c7_epoch_bound(regret_runs):
    runs, _ = regret_runs
    over = [(e, b) for _, e, b in runs if e > b]
    epochs = [e for _, e, _ in runs]
    bounds = [b for _, _, b in runs]
    ok = not over
    assert record(7, ok, f"epochs {min(epochs)}-{max(epochs)} vs bound "
                         f"{min(bounds):.0f}-{max(bounds):.0f} over T={REGRET_T[-1]}, "
                         f"{len(over)} violations")


# 8, 9 and 10 -----------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_sweeps(tmp_path_factory):
    cfg = parse_config(os.path.join(CONFIGS, "desk_acceptance.cfg"), "desk")
    cfg = dataclasses.replace(cfg, workers=os.cpu_count() or 1)
    assert cfg.seed == 2024
    first = tmp_path_factory.mktemp("desk_a")
    t0 = time.perf_counter()
    res = run_ablation(cfg, str(first))
    dt = time.perf_counter() - t0
    return cfg, res, first, dt, tmp_path_factory


def test_c8_ordering(desk_sweeps):
    cfg, res, _, dt, _ = desk_sweeps
    per_cell = res["table"].per_cell
    assert len(per_cell) == 4
    bad, parts = [], []
    for cell, algs in sorted(per_cell.items()):
        ucb = algs["UCB-BOLD"][0.5]
        rivals = {a: algs[a][0.5] for a in ("GLM-Bandit", "Fixed1", "Fixed2")}
        worst = min(rivals, key=rivals.get)
        factor = rivals[worst] / ucb if ucb > 0 else math.inf
        short = cell.split("|gamma")[0]
        parts.append(f"{short}: UCB {ucb:.3f}, best rival {worst} {rivals[worst]:.3f} "
                     f"(x{factor:.2f})")
        if not factor >= 1.2:
            bad.append(short)
    ok = not bad and not res["summary"]["failed"] and dt < 7200
    detail = "; ".join(parts) + f"; {dt:.0f}s (< 7200s)"
    if bad:
        detail += f"; gap < 1.2x in {bad}"
    assert record(8, ok, detail)


def test_c9_random_normalization(desk_sweeps):
    _, res, _, _, _ = desk_sweeps
    means = [algs["Random"][1.0] for algs in res["table"].per_cell.values()]
    avg = float(np.mean(means))
    ok = abs(avg - 1.0) <= 0.15
    assert record(9, ok, f"Random mean normalized regret {avg:.3f} (per cell "
                         f"{np.round(means, 3).tolist()}), need 1.0 +- 0.15")


def test_c10_determinism(desk_sweeps):
    cfg, _, first, _, factory = desk_sweeps
    second = factory.mktemp("desk_b")
    run_ablation(cfg, str(second))
    same = {n: (first / n).read_bytes() == (second / n).read_bytes()
            for n in ("runs.csv", "cvar.csv")}
    ok = all(same.values())
    assert record(10, ok, "rerun with seed 2024: " +
                  ", ".join(f"{n} {'identical' if s else 'DIFFERS'}" for n, s in same.items()))

import math

import numpy as np
import pytest

from engagement_rl import planning
from engagement_rl.model import (
    DEFAULT_BOUNDS,
    NoiseSpec,
    PatientParams,
    RewardSpec,
    expected_reward,
    reward,
    step,
)
from engagement_rl.planning import build_grid, build_noise_quadrature, solve_optimal
from engagement_rl.policies import (
    ExploratoryConfig,
    FixedPolicy,
    GlmBandit,
    GlmBanditConfig,
    LfaQ,
    OptimalPolicy,
    RandomPolicy,
    RkExploratory,
    TcQ,
    UcbBold,
    UcbBoldConfig,
    epoch_count_bound,
    epoch_trigger,
    epsilon_schedule,
)

B2 = DEFAULT_BOUNDS.with_treatments(2)
GRID = build_grid(B2.c_x)
QUAD = build_noise_quadrature(NoiseSpec())
TRUE = PatientParams(0.4, [-0.8, -1.4], [1.4, 1.0], [-0.4, -0.8])


def test_trigger_examples():
    assert epoch_trigger(math.log(3.1), math.log(2.0), [0, 0], [0, 0], 0.5, 0.5)
    assert not epoch_trigger(math.log(2.9), math.log(2.0), [0, 0], [0, 0], 0.5, 0.5)
    assert epoch_trigger(0.0, 0.0, [7, 0], [4, 0], 0.5, 0.5)
    assert not epoch_trigger(0.0, 0.0, [6, 0], [4, 0], 0.5, 0.5)
    # a never-pulled arm fires on its first pull
    assert epoch_trigger(0.0, 0.0, [0, 1], [0, 0], 0.5, 0.5)


def test_fixed_random_optimal():
    rng = np.random.default_rng(0)
    f = FixedPolicy(2, GRID)
    assert all(f.act(x, rng) == 2 for x in np.linspace(-20, 20, 9))
    assert np.all(f.grid_policy() == 2)
    r = RandomPolicy(3, GRID)
    n = 10**5
    counts = np.bincount([r.act(0.0, rng) for _ in range(n)], minlength=4)
    sd = math.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) < 3 * sd)
    assert np.allclose(r.grid_policy().sum(axis=1), 1.0)


def test_optimal_myopic_single_arm():
    p = PatientParams(0.5, [-1.0], [1.0], [0.5])
    spec = RewardSpec((1.0,), beta=0.0, gamma=0.0)
    _, J = solve_optimal(p, spec, GRID, QUAD)
    pol = OptimalPolicy(J)
    assert all(pol.act(x, None) == 1 for x in GRID.points)


def test_rk_wrapper():
    rng = np.random.default_rng(1)
    base = FixedPolicy(0, GRID)
    pol = RkExploratory(base, ExploratoryConfig(1.0, 1), 2)
    for _ in range(100):
        pol.act(0.0, rng)
    assert all(pol.explored)
    pol = RkExploratory(base, ExploratoryConfig(0.3, 10), 2)
    acts = [pol.act(0.0, rng) for _ in range(10**4)]
    flags = np.array(pol.explored).reshape(-1, 10)
    assert np.all(flags.sum(axis=1) == 3)
    # exploratory steps are uniform; the rest delegate to the base
    acts = np.array(acts).reshape(-1, 10)
    assert np.all(acts[~flags] == 0)
    assert set(np.unique(acts[flags])) == {0, 1, 2}
    with pytest.raises(ValueError):
        ExploratoryConfig(0.0, 5)


def test_epsilon_schedule():
    assert epsilon_schedule(1, 1.5) == 1.0
    assert epsilon_schedule(4, 1.5) == pytest.approx(0.125)


def test_lfa_features():
    pol = LfaQ(1, 0.8, 20.0, GRID, n_centers=2)
    assert pol.width == pytest.approx(1.6)
    assert np.allclose(pol.features(-20.0), [1.0, math.exp(-4 / (2 * 1.6 ** 2))])
    assert pol.features(-20.0)[1] == pytest.approx(0.457833, abs=1e-6)
    assert np.allclose(pol.features(-500.0), pol.features(-20.0))  # clipped


def test_lfa_zero_rewards_keep_zero_weights():
    rng = np.random.default_rng(2)
    pol = LfaQ(2, 0.8, 20.0, GRID)
    x = 0.0
    for _ in range(200):
        u = pol.act(x, rng)
        x_next = rng.normal()
        pol.observe(x, u, 0, x_next, 0.0)
        x = x_next
    assert np.all(pol.W == 0)


def test_lfa_td_update():
    pol = LfaQ(1, 0.5, 10.0, GRID, alpha=0.3)
    pol.W[:] = [[0.1, 0.2, 0.0, 0.3, 0.0, 0.1], [0.0, 0.5, 0.4, 0.0, 0.2, 0.0]]
    W0 = pol.W.copy()
    phi, phi2 = pol.features(2.0), pol.features(-3.0)
    td = 1.0 + 0.5 * np.max(W0 @ phi2) - W0[1] @ phi
    pol.observe(2.0, 1, 1, -3.0, 1.0)
    assert np.allclose(pol.W[1], W0[1] + 0.3 * td * phi)
    assert np.array_equal(pol.W[0], W0[0])


def test_tc_bins():
    pts = np.linspace(-20, 20, 400, endpoint=False)
    for width, interior in ((40.0, 1), (20.0, 2)):
        pol = TcQ(2, 0.8, -20, 20, GRID, bin_width=width, n_tilings=8)
        b = pol.bins(pts)
        # the unshifted tiling splits the range into whole bins
        assert len(np.unique(b[:, 0])) == interior
        assert all(len(np.unique(b[:, k])) <= interior + 1 for k in range(8))


def test_tc_single_state_and_update_identity():
    pol = TcQ(2, 0.8, -20, 20, GRID, bin_width=80.0, n_tilings=1)
    assert len(np.unique(pol.bins(GRID.points))) == 1
    pol = TcQ(2, 0.8, -20, 20, GRID, bin_width=40.0, n_tilings=64, alpha=0.5)
    rng = np.random.default_rng(3)
    pol.Q[:] = rng.normal(size=pol.Q.shape)
    x, x2, u, r = 3.0, -7.0, 2, 0.7
    q_before = pol.q(x)[u]
    td = r + 0.8 * pol.q(x2).max() - q_before
    pol.observe(x, u, 0, x2, r)
    assert pol.q(x)[u] - q_before == pytest.approx(0.5 * td, abs=1e-12)


def make_ucb(spec, cfg=UcbBoldConfig(), **kw):
    return UcbBold(B2, spec, NoiseSpec(), GRID, QUAD, cfg, **kw)


def test_ucb_reduces_to_optimal_without_bonus():
    spec = RewardSpec((1.0, 1.5), gamma=0.8)
    pol = make_ucb(spec)
    pol.set_snapshot(TRUE.theta, TRUE.mu, 0.0, np.zeros(2))
    _, J = solve_optimal(TRUE, spec, GRID, QUAD, tol=1e-6)
    assert np.array_equal(pol.grid_policy(), J.policy)
    assert pol.act(1.3) == pol.act(1.3) == OptimalPolicy(J).act(1.3, None)


def test_ucb_myopic_reduction():
    spec = RewardSpec((1.0, 1.5), beta=0.4, beta0=0.5, gamma=0.0)
    pol = make_ucb(spec)
    pol.set_snapshot(TRUE.theta, TRUE.mu, 0.0, np.zeros(2))
    R = np.array([expected_reward(spec, TRUE.mu, GRID.points, u) for u in range(3)])
    assert np.array_equal(pol.grid_policy(), R.argmax(axis=0))


def run_ucb(pol, T, seed):
    rng = np.random.default_rng(seed)
    x = 0.0
    for _ in range(T):
        u = pol.act(x, rng)
        d, x_next, _ = step(TRUE, x, u, rng)
        pol.observe(x, u, d, x_next, reward(pol.reward, x, u, d))
        x = x_next


def test_ucb_epoch_bound_and_replay():
    spec = RewardSpec((1.0, 1.5), gamma=0.8)
    pol = make_ucb(spec, keep_history=True)
    logdet0 = pol.dyn.logdet()
    T = 2000
    run_ucb(pol, T, 4)
    assert 1 < pol.epoch <= epoch_count_bound(pol.dyn.logdet(), logdet0, T, 2)
    assert len(pol.history) == pol.epoch
    # replaying a snapshot reproduces that epoch's action map
    snap = pol.history[len(pol.history) // 2]
    prev = pol.history[len(pol.history) // 2 - 1]
    fresh = make_ucb(spec, scales=pol.scales)
    fresh.J = prev.J
    fresh.set_snapshot(snap.theta, snap.mu, snap.alpha_theta, snap.alpha_mu, V=snap.V)
    assert np.array_equal(fresh.grid_policy(), snap.J.policy)


def test_ucb_scales_fixed_after_start():
    spec = RewardSpec((1.0, 1.5), gamma=0.8)
    pol = make_ucb(spec)
    s0 = pol.scales
    th, mu = pol.bonus_parts()
    assert (s0[0] * th).max() == pytest.approx(spec.rho_bar / 2)
    assert (s0[1] * mu).max() == pytest.approx(spec.rho_bar / 2)
    run_ucb(pol, 200, 5)
    assert pol.epoch > 1 and pol.scales == s0
    raw = make_ucb(spec, UcbBoldConfig(calibrate=False))
    assert raw.scales == (1.0, 1.0)


def test_glm_never_plans(monkeypatch):
    def boom(*a, **k):
        raise AssertionError("GLM-Bandit ran value iteration")

    monkeypatch.setattr(planning.BellmanContext, "value_iteration", boom)
    monkeypatch.setattr(planning.BellmanContext, "__init__", boom)
    pol = GlmBandit(B2, RewardSpec((1.0, 1.5)), NoiseSpec(), GRID)
    rng = np.random.default_rng(6)
    x = 0.0
    changes = 0
    for _ in range(300):
        u = pol.act(x, rng)
        d, x_next, _ = step(TRUE, x, u, rng)
        changes += pol.observe(x, u, d, x_next)
        x = x_next
    assert changes == pol.epoch - 1


def test_glm_examples():
    spec = RewardSpec((1.0, 2.0))
    pol = GlmBandit(B2, spec, NoiseSpec(), GRID)
    pol.mu_tilde = np.array([2.5, 2.5])
    assert pol.act(15.0) == 2
    pol = GlmBandit(B2, RewardSpec((0.0, 0.0)), NoiseSpec(), GRID)
    assert pol.act(0.0) == 0 and np.all(pol.grid_policy() == 0)


def test_glm_matches_clipped_optimism_formula():
    spec = RewardSpec((1.0, 1.6), beta=0.3, beta0=-1.0)
    pol = GlmBandit(B2, spec, NoiseSpec(), GRID, GlmBanditConfig(), scale_mu=1.0)
    rng = np.random.default_rng(7)
    x = 0.0
    for _ in range(150):
        u = pol.act(x, rng)
        d, x_next, _ = step(TRUE, x, u, rng)
        pol.observe(x, u, d, x_next)
        x = x_next
    mu_opt = np.clip(pol.adh.mu_hat + pol.alpha_mu, -2.5, 2.5)
    xs = GRID.points
    sig = lambda v: 1 / (1 + np.exp(-v))
    vals = np.array([-0.3 * sig(-1.0 - xs)]
                    + [spec.rho[i] * sig(xs + mu_opt[i]) - 0.3 * sig(-1.0 - xs) for i in range(2)])
    assert np.array_equal(pol.grid_policy(), vals.argmax(axis=0))

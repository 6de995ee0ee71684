"""Decision algorithms: UCB-BOLD, GLM-Bandit, two Q-learners, fixed/random/optimal
baselines and the (r, k)-exploratory wrapper.

Every policy exposes ``act(x, rng) -> action`` and
``observe(x, u, d, x_next, r) -> bool``; the boolean reports that the enacted
policy changed (new epoch), which the regret runner uses to re-evaluate it.
``grid_policy()`` returns the current greedy action per grid node, or an
(n, M+1) probability matrix for stochastic policies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimation import (
    AdherenceEstimator,
    ConfidenceConfig,
    DynamicsEstimator,
    mu_radius,
    mu_radius_from_H,
    theta_radius,
)
from .model import ModelBounds, NoiseSpec, RewardSpec, expected_reward
from .planning import (
    BellmanContext,
    NoiseQuadrature,
    StateGrid,
    ValueFunction,
    bonus_components,
    calibrate_bonus_scales,
    lipschitz_L1,
    uniform_policy,
)


class Policy:
    name = "policy"
    # "epoch": re-evaluate when observe() reports a change; "cadence": every k steps
    evaluation = "epoch"

    def act(self, x: float, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def observe(self, x, u, d, x_next, r) -> bool:
        return False

    def grid_policy(self):
        raise NotImplementedError


class FixedPolicy(Policy):
    def __init__(self, action: int, grid: StateGrid):
        self.action = action
        self.grid = grid
        self.name = f"Fixed{action}"

    def act(self, x, rng):
        return self.action

    def grid_policy(self):
        return np.full(self.grid.n, self.action, dtype=np.int64)


class RandomPolicy(Policy):
    name = "Random"

    def __init__(self, M: int, grid: StateGrid):
        self.U = M + 1
        self.grid = grid

    def act(self, x, rng):
        return int(rng.integers(self.U))

    def grid_policy(self):
        return uniform_policy(self.grid.n, self.U)


class OptimalPolicy(Policy):
    name = "Optimal"

    def __init__(self, J_star: ValueFunction):
        self.J = J_star

    def act(self, x, rng):
        return self.J.action(x)

    def grid_policy(self):
        return self.J.policy


@dataclass(frozen=True)
class ExploratoryConfig:
    r: float
    k: int

    def __post_init__(self):
        if not 0.0 < self.r <= 1.0 or self.k < 1:
            raise ValueError("need r in (0, 1] and k >= 1")

    @property
    def per_block(self) -> int:
        return math.ceil(self.r * self.k - 1e-12)


class RkExploratory(Policy):
    """Forces ceil(r*k) uniformly random actions at pre-drawn positions of each k-block."""

    def __init__(self, base: Policy, cfg: ExploratoryConfig, M: int):
        self.base = base
        self.cfg = cfg
        self.U = M + 1
        self.name = f"rk({base.name})"
        self.evaluation = base.evaluation
        self.t = 0
        self._explore = np.zeros(cfg.k, dtype=bool)
        self.explored = []  # per-step flag, kept for auditing the block guarantee

    def act(self, x, rng):
        pos = self.t % self.cfg.k
        if pos == 0:
            self._explore[:] = False
            self._explore[rng.choice(self.cfg.k, self.cfg.per_block, replace=False)] = True
        self.t += 1
        flag = bool(self._explore[pos])
        self.explored.append(flag)
        if flag:
            return int(rng.integers(self.U))
        return self.base.act(x, rng)

    def observe(self, x, u, d, x_next, r):
        return self.base.observe(x, u, d, x_next, r)

    def grid_policy(self):
        return self.base.grid_policy()


@dataclass(frozen=True)
class UcbBoldConfig:
    delta: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    C_d: float = 0.5
    C_N: float = 0.5
    calibrate: bool = True
    vi_tol: float = 1e-6


@dataclass
class EpochSnapshot:
    epoch: int
    t: int
    V: np.ndarray
    theta: np.ndarray
    mu: np.ndarray
    alpha_theta: float
    alpha_mu: np.ndarray
    N: np.ndarray
    J: ValueFunction | None = None


class UcbBold(Policy):
    """Epoch-based optimistic planner.

    Within an epoch the policy is the greedy map of value iteration on the
    surrogate system (estimated parameters plus exploration bonus). A new epoch
    starts when det(V) grows by (1 + C_d) or any action count by (1 + C_N).
    """

    name = "UCB-BOLD"
    evaluation = "epoch"

    def __init__(self, bounds: ModelBounds, reward: RewardSpec, noise: NoiseSpec,
                 grid: StateGrid, quad: NoiseQuadrature, cfg: UcbBoldConfig = UcbBoldConfig(),
                 scales: tuple[float, float] | None = None, keep_history: bool = False):
        self.bounds = bounds
        self.reward = reward
        self.grid = grid
        self.quad = quad
        self.cfg = cfg
        self.M = bounds.M
        self.conf = ConfidenceConfig(cfg.delta, noise.sigma_s, cfg.lambda1, cfg.lambda2,
                                     bounds).halved()
        self.L1 = lipschitz_L1(reward, bounds)
        self.dyn = DynamicsEstimator(self.M, cfg.lambda1, bounds)
        self.adh = AdherenceEstimator(self.M, cfg.lambda2, bounds.mu_bar)
        self.N = np.zeros(self.M, dtype=np.int64)
        self.epoch = 0
        self.keep_history = keep_history
        self.history: list[EpochSnapshot] = []
        self.J: ValueFunction | None = None
        self._scales = scales
        # epoch 1: ridge/prior-at-zero estimates with no data
        theta0 = self.dyn.project(self.dyn.solve_rls())
        mu0 = np.zeros(self.M)
        self._new_epoch(theta0, mu0)

    @property
    def scales(self) -> tuple[float, float]:
        return self._scales

    def _radii(self):
        a_th = theta_radius(self.conf, self.dyn.t + 1)
        a_mu = np.array([mu_radius(self.conf, self.adh, i) for i in range(1, self.M + 1)])
        return a_th, a_mu

    def _new_epoch(self, theta, mu, alpha_theta=None, alpha_mu=None):
        if alpha_theta is None:
            alpha_theta, alpha_mu = self._radii()
        self.epoch += 1
        self.snap = EpochSnapshot(self.epoch, self.dyn.t, self.dyn.V.copy(), np.asarray(theta),
                                  np.asarray(mu, dtype=float), float(alpha_theta),
                                  np.asarray(alpha_mu, dtype=float), self.N.copy())
        self._logdet_k = self.dyn.logdet()
        self._plan()

    def bonus_parts(self):
        s = self.snap
        return bonus_components(self.grid.points, s.mu, s.alpha_theta, s.alpha_mu, s.V, self.L1,
                                self.reward.gamma, self.reward.rho_bar, self.bounds.c_bar,
                                self.bounds.mu_bar)

    def _plan(self):
        th_part, mu_part = self.bonus_parts()
        if self._scales is None:
            # fixed once from the t=0 bonus; raw constants when calibration is off
            self._scales = (calibrate_bonus_scales(th_part, mu_part, self.reward.rho_bar)
                            if self.cfg.calibrate else (1.0, 1.0))
        bonus = self._scales[0] * th_part + self._scales[1] * mu_part
        self.ctx = BellmanContext.from_theta(self.snap.theta, self.snap.mu, self.reward,
                                             self.grid, self.quad, bonus)
        J0 = None if self.J is None else self.J.values
        self.J = self.ctx.value_iteration("optimistic", tol=self.cfg.vi_tol, J0=J0)
        self.snap.J = self.J
        if self.keep_history:
            self.history.append(self.snap)

    def set_snapshot(self, theta, mu, alpha_theta, alpha_mu, V=None):
        """Replan from an externally supplied snapshot (testing and replay)."""
        V = self.dyn.V if V is None else np.asarray(V, dtype=float)
        self.snap = EpochSnapshot(self.epoch, self.dyn.t, V.copy(),
                                  np.asarray(theta, dtype=float), np.asarray(mu, dtype=float),
                                  float(alpha_theta), np.asarray(alpha_mu, dtype=float),
                                  self.N.copy())
        self._plan()

    def act(self, x, rng=None):
        return self.J.action(x)

    def trigger(self) -> bool:
        return epoch_trigger(self.dyn.logdet(), self._logdet_k, self.N, self.snap.N,
                             self.cfg.C_d, self.cfg.C_N)

    def observe(self, x, u, d, x_next, r=None) -> bool:
        self.dyn.update_sparse(x, u, d, x_next)
        if u:
            self.adh.update(u, x, d == u)
            self.N[u - 1] += 1
        if not self.trigger():
            return False
        theta = self.dyn.project(self.dyn.solve_rls())
        mu = self.adh.solve_all()
        self._new_epoch(theta, mu)
        return True

    def grid_policy(self):
        return self.J.policy


def epoch_trigger(logdet_t: float, logdet_k: float, N, N_k, C_d: float, C_N: float) -> bool:
    """det(V_t) > (1 + C_d) det(V_k), compared in log space, or any N_i > (1 + C_N) N_i^(k)."""
    if logdet_t > math.log1p(C_d) + logdet_k:
        return True
    return bool(np.any(np.asarray(N) > (1 + C_N) * np.asarray(N_k)))


def epoch_count_bound(logdet_T: float, logdet_0: float, T: int, M: int,
                      C_d: float = 0.5, C_N: float = 0.5) -> float:
    """Counting bound on epochs: determinant growth plus per-arm count growth."""
    det_part = (2 * M + 1) * max(logdet_T - logdet_0, 0.0) / math.log1p(C_d)
    count_part = M * (1 + math.log(max(T, 1)) / math.log1p(C_N))
    return det_part + count_part + 1


@dataclass(frozen=True)
class GlmBanditConfig:
    delta: float = 0.1
    lambda2: float = 1.0
    C_N: float = 0.5
    calibrate: bool = True


class GlmBandit(Policy):
    """Myopic optimistic bandit on the adherence shifts only; never plans."""

    name = "GLM-Bandit"
    evaluation = "epoch"

    def __init__(self, bounds: ModelBounds, reward: RewardSpec, noise: NoiseSpec,
                 grid: StateGrid, cfg: GlmBanditConfig = GlmBanditConfig(),
                 scale_mu: float | None = None):
        self.bounds = bounds
        self.reward = reward
        self.grid = grid
        self.cfg = cfg
        self.M = bounds.M
        self.conf = ConfidenceConfig(cfg.delta, noise.sigma_s, 1.0, cfg.lambda2,
                                     bounds).halved()
        self.adh = AdherenceEstimator(self.M, cfg.lambda2, bounds.mu_bar)
        self.N = np.zeros(self.M, dtype=np.int64)
        self.N_k = self.N.copy()
        self.epoch = 0
        if scale_mu is None:
            scale_mu = 1.0
            if cfg.calibrate:
                # myopic analogue of the mu bonus part, calibrated on the grid at t=0
                alpha0 = np.full(self.M, mu_radius_from_H(self.conf, cfg.lambda2))
                _, mu_part = bonus_components(grid.points, np.zeros(self.M), 0.0, alpha0,
                                              np.eye(2 * self.M + 1), 0.0, 0.0,
                                              reward.rho_bar, bounds.c_bar, bounds.mu_bar)
                scale_mu = calibrate_bonus_scales(np.zeros(1), mu_part, reward.rho_bar)[1]
        self.scale_mu = scale_mu
        self._new_epoch()

    def _new_epoch(self):
        self.epoch += 1
        mu_hat = self.adh.solve_all()
        self.alpha_mu = np.array([mu_radius(self.conf, self.adh, i)
                                  for i in range(1, self.M + 1)])
        mb = self.bounds.mu_bar
        self.mu_tilde = np.clip(mu_hat + self.scale_mu * self.alpha_mu, -mb, mb)
        self.N_k = self.N.copy()

    def _values(self, x):
        return np.array([expected_reward(self.reward, self.mu_tilde, x, u)
                         for u in range(self.M + 1)])

    def act(self, x, rng=None):
        return int(np.argmax(self._values(x)))

    def observe(self, x, u, d, x_next, r=None) -> bool:
        if u:
            self.adh.update(u, x, d == u)
            self.N[u - 1] += 1
        if np.any(self.N > (1 + self.cfg.C_N) * self.N_k):
            self._new_epoch()
            return True
        return False

    def grid_policy(self):
        return self._values(self.grid.points).argmax(axis=0)


def epsilon_schedule(t: int, decay: float) -> float:
    return float(t) ** (-decay)


class LfaQ(Policy):
    """Epsilon-greedy Q-learning with Gaussian RBF features on the rescaled state."""

    name = "LFA-Q"
    evaluation = "cadence"

    def __init__(self, M: int, gamma: float, grid_bound: float, grid: StateGrid,
                 n_centers: int = 6, alpha: float = 0.3, eps_decay: float = 1.5,
                 init: float = 0.0):
        self.U = M + 1
        self.gamma = gamma
        self.C_g = grid_bound
        self.grid = grid
        self.alpha = alpha
        self.eps_decay = eps_decay
        self.centers = np.linspace(-1.0, 1.0, n_centers)
        self.width = 0.8 * (self.centers[1] - self.centers[0])
        self.W = np.full((self.U, n_centers), float(init))
        self.t = 1

    def features(self, x):
        xt = np.clip(np.asarray(x, dtype=float) / self.C_g, -1.0, 1.0)
        return np.exp(-(xt[..., None] - self.centers) ** 2 / (2 * self.width ** 2))

    def act(self, x, rng):
        if rng.random() < epsilon_schedule(self.t, self.eps_decay):
            return int(rng.integers(self.U))
        return int(np.argmax(self.W @ self.features(x)))

    def observe(self, x, u, d, x_next, r) -> bool:
        phi = self.features(x)
        td = r + self.gamma * np.max(self.W @ self.features(x_next)) - self.W[u] @ phi
        self.W[u] += self.alpha * td * phi
        self.t += 1
        return False

    def grid_policy(self):
        return (self.features(self.grid.points) @ self.W.T).argmax(axis=1)


class TcQ(Policy):
    """Epsilon-greedy Q-learning on n_t offset tilings of the state range."""

    name = "TC-Q"
    evaluation = "cadence"

    def __init__(self, M: int, gamma: float, lo: float, hi: float, grid: StateGrid,
                 bin_width: float = 40.0, n_tilings: int = 64, alpha: float = 0.5,
                 eps_decay: float = 1.5, init: float = 0.0):
        self.U = M + 1
        self.gamma = gamma
        self.lo, self.hi = lo, hi
        self.grid = grid
        self.w = bin_width
        self.n_t = n_tilings
        self.alpha = alpha
        self.eps_decay = eps_decay
        self.offsets = np.arange(n_tilings) * bin_width / n_tilings
        self.n_bins = int(math.floor((hi - lo) / bin_width)) + 2
        self.Q = np.full((n_tilings, self.n_bins, self.U), float(init) / n_tilings)
        self._k = np.arange(n_tilings)
        self.t = 1

    def bins(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        b = np.floor((x[..., None] - self.lo + self.offsets) / self.w).astype(np.int64)
        return np.minimum(b, self.n_bins - 1)

    def q(self, x):
        return self.Q[self._k, self.bins(x)].sum(axis=-2)

    def act(self, x, rng):
        if rng.random() < epsilon_schedule(self.t, self.eps_decay):
            return int(rng.integers(self.U))
        return int(np.argmax(self.q(x)))

    def observe(self, x, u, d, x_next, r) -> bool:
        b = self.bins(x)
        td = r + self.gamma * self.q(x_next).max() - self.q(x)[u]
        self.Q[self._k, b, u] += self.alpha / self.n_t * td
        self.t += 1
        return False

    def grid_policy(self):
        return self.q(self.grid.points).argmax(axis=1)

"""Discretized value iteration for the true, policy and optimistic Bellman operators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .model import ModelBounds, NoiseSpec, PatientParams, RewardSpec, sigmoid_prime


class NonConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class StateGrid:
    lo: float
    hi: float
    resolution: float
    points: np.ndarray

    @property
    def n(self) -> int:
        return len(self.points)

    def nearest(self, x):
        """Index of the closest node; exact midpoints go to the lower index."""
        pos = (np.asarray(x, dtype=float) - self.lo) / self.resolution
        idx = np.ceil(pos - 0.5).astype(np.int64)
        idx = np.clip(idx, 0, self.n - 1)
        return int(idx) if idx.ndim == 0 else idx


def build_grid(c_x: float, shrink: float = 1 / 3, resolution: float = 0.1) -> StateGrid:
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    half = c_x * shrink
    n = int(round(2 * half / resolution)) + 1
    points = -half + resolution * np.arange(n)
    points[-1] = half
    return StateGrid(-half, half, resolution, points)


@dataclass(frozen=True)
class NoiseQuadrature:
    offsets: np.ndarray
    weights: np.ndarray


def build_noise_quadrature(spec: NoiseSpec, n_nodes: int = 51) -> NoiseQuadrature:
    """Midpoint rule for the truncated Gaussian on ``n_nodes`` equal cells of [-w_bar, w_bar]."""
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise ValueError("n_nodes must be odd and at least 3")
    h = 2 * spec.w_bar / n_nodes
    j = np.arange(n_nodes)
    offsets = -spec.w_bar + h * (j + 0.5)
    offsets = 0.5 * (offsets - offsets[::-1])  # exact symmetry
    weights = norm.pdf(offsets, scale=spec.sigma_w)
    weights = 0.5 * (weights + weights[::-1])
    return NoiseQuadrature(offsets, weights / weights.sum())


@dataclass
class ValueFunction:
    grid: StateGrid
    values: np.ndarray
    policy: np.ndarray | None = None

    def __call__(self, x):
        v = np.interp(x, self.grid.points, self.values)
        return v if np.ndim(v) else float(v)

    def action(self, x) -> int:
        return int(self.policy[self.grid.nearest(x)])


def _expected_reward_table(reward: RewardSpec, mu, x: np.ndarray) -> np.ndarray:
    M = len(mu)
    base = -reward.beta * expit(reward.beta0 - x) if reward.beta else np.zeros_like(x)
    R = np.empty((M + 1, len(x)))
    R[0] = base
    for i in range(1, M + 1):
        R[i] = base + reward.rho[i - 1] * expit(x + mu[i - 1])
    return R


class BellmanContext:
    """Grid transition matrices and expected rewards for one parameterization.

    ``P[u]`` maps values on the grid to their expectation over the adherence
    outcome and the noise after taking ``u``; next states are linearly
    interpolated and clamped at the grid edges.
    """

    def __init__(self, a: float, b, c, mu, reward: RewardSpec, grid: StateGrid,
                 quad: NoiseQuadrature, bonus: np.ndarray | None = None):
        self.a = float(a)
        self.b = np.asarray(b, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.mu = np.asarray(mu, dtype=float)
        self.reward = reward
        self.gamma = reward.gamma
        self.grid = grid
        self.quad = quad
        self.M = len(self.b)
        self.U = self.M + 1
        x = grid.points
        self.R = _expected_reward_table(reward, self.mu, x)
        self.bonus = np.zeros_like(self.R) if bonus is None else np.asarray(bonus, float)
        self.P = self._transitions()
        self._P2 = self.P.reshape(self.U * grid.n, grid.n)

    @classmethod
    def from_params(cls, params: PatientParams, reward: RewardSpec, grid: StateGrid,
                    quad: NoiseQuadrature) -> "BellmanContext":
        return cls(params.a, params.b, params.c, params.mu, reward, grid, quad)

    @classmethod
    def from_theta(cls, theta, mu, reward, grid, quad, bonus=None) -> "BellmanContext":
        theta = np.asarray(theta, dtype=float)
        M = (len(theta) - 1) // 2
        return cls(theta[0], theta[1:M + 1], theta[M + 1:], mu, reward, grid, quad, bonus)

    def _transitions(self) -> np.ndarray:
        g = self.grid
        n = g.n
        x = g.points
        off, wq = self.quad.offsets, self.quad.weights
        P = np.zeros((self.U, n * n))
        rows = np.repeat(np.arange(n), len(off)) * n
        for u in range(self.U):
            if u == 0:
                branches = [(np.ones(n), self.a * x)]
            else:
                p = expit(x + self.mu[u - 1])
                mean = self.a * x + self.b[u - 1]
                branches = [(1 - p, mean), (p, mean + self.c[u - 1])]
            for prob, mean in branches:
                nxt = (mean[:, None] + off[None, :]).ravel()
                pos = np.clip((nxt - g.lo) / g.resolution, 0.0, n - 1.0)
                i0 = np.minimum(np.floor(pos).astype(np.int64), n - 2)
                frac = pos - i0
                w = (prob[:, None] * wq[None, :]).ravel()
                P[u] += np.bincount(rows + i0, w * (1 - frac), minlength=n * n)
                P[u] += np.bincount(rows + i0 + 1, w * frac, minlength=n * n)
        return P.reshape(self.U, n, n)

    def q_values(self, J: np.ndarray, optimistic: bool = False) -> np.ndarray:
        Q = self.R + self.gamma * (self._P2 @ J).reshape(self.U, self.grid.n)
        if optimistic:
            Q = Q + self.bonus
        return Q

    def apply(self, J, mode: str = "optimal", policy=None) -> ValueFunction:
        values = J.values if isinstance(J, ValueFunction) else np.asarray(J, dtype=float)
        Q = self.q_values(values, optimistic=(mode == "optimistic"))
        if mode == "policy":
            return ValueFunction(self.grid, _policy_average(Q, policy), _as_actions(policy))
        if mode not in ("optimal", "optimistic"):
            raise ValueError(f"unknown mode {mode!r}")
        # argmax keeps the first maximizer: lowest action index wins ties
        act = Q.argmax(axis=0)
        return ValueFunction(self.grid, Q[act, np.arange(self.grid.n)], act)

    def value_iteration(self, mode: str = "optimal", tol: float = 1e-6, policy=None,
                        J0: np.ndarray | None = None, max_iter: int = 100_000,
                        residuals: list | None = None) -> ValueFunction:
        J = np.zeros(self.grid.n) if J0 is None else np.array(J0, dtype=float)
        for _ in range(max_iter):
            out = self.apply(J, mode, policy)
            diff = float(np.max(np.abs(out.values - J)))
            if residuals is not None:
                residuals.append(diff)
            J = out.values
            if diff <= tol:
                # policy read off the converged values
                return self.apply(J, mode, policy) if mode != "policy" else out
        raise NonConvergenceError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")

    def evaluate(self, policy) -> ValueFunction:
        """Exact fixed point of the policy operator by a dense linear solve."""
        n = self.grid.n
        if np.ndim(policy) == 2:
            probs = np.asarray(policy, dtype=float)
            Ppi = np.einsum("nu,unm->nm", probs, self.P)
            Rpi = np.einsum("nu,un->n", probs, self.R)
        else:
            act = np.asarray(policy, dtype=np.int64)
            idx = np.arange(n)
            Ppi = self.P[act, idx, :]
            Rpi = self.R[act, idx]
        A = np.eye(n) - self.gamma * Ppi
        return ValueFunction(self.grid, np.linalg.solve(A, Rpi), _as_actions(policy))


def _as_actions(policy):
    if policy is None or np.ndim(policy) == 2:
        return None
    return np.asarray(policy, dtype=np.int64)


def _policy_average(Q: np.ndarray, policy) -> np.ndarray:
    if policy is None:
        raise ValueError("policy mode needs a policy")
    if np.ndim(policy) == 2:
        return np.einsum("nu,un->n", np.asarray(policy, dtype=float), Q)
    act = np.asarray(policy, dtype=np.int64)
    return Q[act, np.arange(Q.shape[1])]


def uniform_policy(n: int, U: int) -> np.ndarray:
    return np.full((n, U), 1.0 / U)


def value_bound(reward: RewardSpec, bonus_sup: float = 0.0) -> float:
    return (reward.beta + reward.rho_bar + bonus_sup) / (1.0 - reward.gamma)


def lipschitz_L1(spec: RewardSpec, bounds: ModelBounds) -> float:
    g = spec.gamma
    return (spec.beta + spec.rho_bar) / (4 * (1 - g * bounds.a_bar)) * (1 + 2 * g / (1 - g))


def kappa(x, mu_hat, mu_bar: float):
    """Capped bound on the sigmoid slope."""
    return np.minimum(0.25, math.exp(2 * mu_bar) * sigmoid_prime(np.asarray(x) + mu_hat))


def expected_feature_norm(x, u: int, mu_hat, V_inv: np.ndarray):
    """E over the adherence outcome of ||z||_{V^{-1}} with z = [x, u, d]."""
    x = np.asarray(x, dtype=float)
    M = (V_inv.shape[0] - 1) // 2
    q0 = x * x * V_inv[0, 0]
    if not u:
        return np.sqrt(q0)
    j = M + u
    miss = q0 + 2 * x * V_inv[0, u] + V_inv[u, u]
    hit = miss + 2 * x * V_inv[0, j] + 2 * V_inv[u, j] + V_inv[j, j]
    p = expit(x + mu_hat[u - 1])
    return (1 - p) * np.sqrt(np.maximum(miss, 0)) + p * np.sqrt(np.maximum(hit, 0))


def bonus_components(x, mu_hat, alpha_theta: float, alpha_mu, V: np.ndarray, L1: float,
                     gamma: float, rho_bar: float, c_bar: float, mu_bar: float):
    """Unscaled (theta_part, mu_part), each of shape (M+1, len(x))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    M = len(mu_hat)
    V_inv = np.linalg.inv(V)
    theta_part = np.empty((M + 1, len(x)))
    mu_part = np.zeros((M + 1, len(x)))
    for u in range(M + 1):
        theta_part[u] = gamma * L1 * alpha_theta * expected_feature_norm(x, u, mu_hat, V_inv)
        if u:
            mu_part[u] = ((rho_bar + gamma * L1 * c_bar) * kappa(x, mu_hat[u - 1], mu_bar)
                          * alpha_mu[u - 1])
    return theta_part, mu_part


def exploration_bonus(x: float, u: int, mu_hat, V: np.ndarray, alpha_theta: float, alpha_mu,
                      L1: float, gamma: float, rho_bar: float, c_bar: float, mu_bar: float,
                      scale_theta: float = 1.0, scale_mu: float = 1.0) -> float:
    th, mu = bonus_components([x], mu_hat, alpha_theta, alpha_mu, V, L1, gamma,
                              rho_bar, c_bar, mu_bar)
    return float(scale_theta * th[u, 0] + scale_mu * mu[u, 0])


def calibrate_bonus_scales(theta_part: np.ndarray, mu_part: np.ndarray,
                           rho_bar: float) -> tuple[float, float]:
    """Scales making the largest initial value of each bonus part equal rho_bar / 2."""
    scales = []
    for part in (theta_part, mu_part):
        peak = float(np.max(part))
        scales.append(rho_bar / 2 / peak if peak > 0 and rho_bar > 0 else 1.0)
    return scales[0], scales[1]


def solve_optimal(params: PatientParams, reward: RewardSpec, grid: StateGrid,
                  quad: NoiseQuadrature, tol: float = 1e-6):
    """True-parameter context and its optimal value function."""
    ctx = BellmanContext.from_params(params, reward, grid, quad)
    return ctx, ctx.value_iteration("optimal", tol=tol)

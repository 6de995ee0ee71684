"""Online estimators for the dynamics and adherence parameters, with confidence radii."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from .model import ModelBounds, compute_state_bound


class EstimationError(RuntimeError):
    pass


def project_box(V: np.ndarray, y: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                max_iter: int = 10_000, tol: float = 1e-10) -> np.ndarray:
    """argmin over lo <= theta <= hi of (theta - y)' V (theta - y), V positive definite.

    Primal active-set method: exact after finitely many working-set changes,
    which matters because V grows badly conditioned as data accumulates.
    """
    y = np.asarray(y, dtype=float)
    theta = np.clip(y, lo, hi)
    fixed = theta != y
    if not fixed.any():
        return theta
    scale = max(1.0, float(np.abs(np.diag(V)).max()))
    for _ in range(max_iter):
        free = ~fixed
        target = theta.copy()
        if free.any():
            Vff = V[np.ix_(free, free)]
            rhs = Vff @ y[free] - V[np.ix_(free, fixed)] @ (theta[fixed] - y[fixed])
            target[free] = np.linalg.solve(Vff, rhs)
        step = target - theta
        # longest feasible step toward the working-set minimizer
        alpha, block, block_val = 1.0, -1, 0.0
        for i in np.flatnonzero(free):
            if target[i] > hi[i] and step[i] > 0:
                a_i, bound = (hi[i] - theta[i]) / step[i], hi[i]
            elif target[i] < lo[i] and step[i] < 0:
                a_i, bound = (lo[i] - theta[i]) / step[i], lo[i]
            else:
                continue
            if a_i < alpha:
                alpha, block, block_val = a_i, i, bound
        theta = theta + alpha * step
        if block >= 0:
            theta[block] = block_val
            fixed[block] = True
            continue
        theta = np.clip(theta, lo, hi)
        # KKT: at a lower bound the gradient must be >= 0, at an upper bound <= 0
        g = V @ (theta - y)
        worst, worst_i = tol * scale, -1
        for i in np.flatnonzero(fixed):
            if lo[i] == hi[i]:
                continue
            viol = -g[i] if theta[i] == lo[i] else g[i]
            if viol > worst:
                worst, worst_i = viol, i
        if worst_i < 0:
            return theta
        fixed[worst_i] = False
    raise EstimationError("box projection did not converge")


def variational_residual(V, theta_hat, y, lo, hi) -> float:
    """max over the box of <V(theta_hat - y), theta_hat - theta>; <= 0 at the projection."""
    g = V @ (theta_hat - y)
    worst = np.where(g > 0, lo, hi)
    return float(g @ (theta_hat - worst))


class DynamicsEstimator:
    """Ridge regression of x_{t+1} on z_t = [x_t, u_t, d_t] with box projection."""

    def __init__(self, M: int, lambda1: float = 1.0, bounds: ModelBounds | None = None):
        if lambda1 <= 0:
            raise ValueError("lambda1 must be positive")
        self.M = M
        self.dim = 2 * M + 1
        self.lambda1 = lambda1
        self.bounds = bounds
        self.V = lambda1 * np.eye(self.dim)
        self.s = np.zeros(self.dim)
        self.t = 0

    def update(self, z, x_next: float) -> None:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ValueError(f"feature vector must have length {self.dim}")
        self.V += np.outer(z, z)
        self.s += z * x_next
        self.t += 1

    def update_sparse(self, x: float, u: int, d: int, x_next: float) -> None:
        """Same as ``update(feature_vector(x, u, d, M), x_next)`` without building z."""
        idx = [0]
        val = [x]
        if u:
            idx.append(u)
            val.append(1.0)
        if d:
            idx.append(self.M + d)
            val.append(1.0)
        idx = np.array(idx)
        val = np.array(val)
        self.V[np.ix_(idx, idx)] += np.outer(val, val)
        self.s[idx] += val * x_next
        self.t += 1

    def update_many(self, Z: np.ndarray, y: np.ndarray) -> None:
        Z = np.asarray(Z, dtype=float)
        self.V += Z.T @ Z
        self.s += Z.T @ np.asarray(y, dtype=float)
        self.t += len(Z)

    def logdet(self) -> float:
        sign, ld = np.linalg.slogdet(self.V)
        return ld

    def solve_rls(self) -> np.ndarray:
        try:
            return cho_solve(cho_factor(self.V), self.s)
        except np.linalg.LinAlgError as exc:
            raise EstimationError("second-moment matrix is not positive definite") from exc

    def project(self, theta_rls: np.ndarray, bounds: ModelBounds | None = None) -> np.ndarray:
        bounds = bounds or self.bounds
        lo, hi = bounds.theta_box()
        return project_box(self.V, theta_rls, lo, hi)

    def theta_hat(self) -> np.ndarray:
        return self.project(self.solve_rls())

    def covers(self, theta_true: np.ndarray, radius: float) -> bool:
        """Whether ||theta_hat - theta_true||_V <= radius.

        The projection is non-expansive toward any point of the box, so the cheap
        unprojected check is tried first and the projection computed only if it fails.
        """
        rls = self.solve_rls()
        e = rls - theta_true
        if e @ self.V @ e <= radius * radius:
            return True
        e = self.project(rls) - theta_true
        return bool(e @ self.V @ e <= radius * radius)


class AdherenceEstimator:
    """Per-treatment regularized logistic MLE of the sigmoid shift.

    Raw (x, d) pairs are kept because the information term must be re-evaluated
    at each new estimate. Treatments are indexed 1..M to match the action encoding.
    """

    def __init__(self, M: int, lambda2: float = 1.0, mu_bar: float = 2.5):
        if lambda2 < 0:
            raise ValueError("lambda2 must be nonnegative")
        self.M = M
        self.lambda2 = lambda2
        self.mu_bar = mu_bar
        self.N = np.zeros(M, dtype=np.int64)
        self.mu_hat = np.zeros(M)
        self._x = [np.empty(32) for _ in range(M)]
        self._d = [np.empty(32) for _ in range(M)]

    def update(self, i: int, x: float, adhered) -> None:
        k = i - 1
        n = self.N[k]
        if n == len(self._x[k]):
            self._x[k] = np.concatenate([self._x[k], np.empty(n)])
            self._d[k] = np.concatenate([self._d[k], np.empty(n)])
        self._x[k][n] = x
        self._d[k][n] = 1.0 if adhered else 0.0
        self.N[k] = n + 1

    def samples(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        n = self.N[i - 1]
        return self._x[i - 1][:n], self._d[i - 1][:n]

    def log_likelihood(self, i: int, mu: float) -> float:
        x, d = self.samples(i)
        v = x + mu
        # log sigma(v) = -log(1+e^{-v}); log(1-sigma(v)) = -log(1+e^{v})
        return float(-(d * np.logaddexp(0.0, -v) + (1 - d) * np.logaddexp(0.0, v)).sum())

    def score(self, i: int, mu: float) -> float:
        x, d = self.samples(i)
        return float(-self.lambda2 * mu + (d - expit(x + mu)).sum())

    def H(self, i: int, mu: float | None = None) -> float:
        mu = self.mu_hat[i - 1] if mu is None else mu
        x, _ = self.samples(i)
        p = expit(x + mu)
        return float(self.lambda2 + (p * (1 - p)).sum())

    def solve(self, i: int, warm: float | None = None, bracket: float = 50.0) -> float:
        """Safeguarded Newton on the score, then clip to [-mu_bar, mu_bar]."""
        x, d = self.samples(i)
        lam = self.lambda2
        n = len(x)
        tol = 1e-12 * (1.0 + n)

        def f(m):
            p = expit(x + m)
            return -lam * m + (d - p).sum(), -lam - (p * (1 - p)).sum()

        lo, hi = -bracket, bracket
        if n == 0:
            root = 0.0
        elif f(lo)[0] <= 0:
            root = lo
        elif f(hi)[0] >= 0:
            root = hi
        else:
            m = 0.0 if warm is None else min(max(warm, lo), hi)
            for _ in range(200):
                s, ds = f(m)
                if abs(s) <= tol:
                    break
                if s > 0:
                    lo = m
                else:
                    hi = m
                nxt = m - s / ds if ds < 0 else 0.5 * (lo + hi)
                if not lo < nxt < hi:
                    nxt = 0.5 * (lo + hi)
                if abs(nxt - m) <= 1e-15 * (1.0 + abs(m)):
                    m = nxt
                    break
                m = nxt
            root = m
        self.mu_hat[i - 1] = min(max(root, -self.mu_bar), self.mu_bar)
        return self.mu_hat[i - 1]

    def solve_all(self) -> np.ndarray:
        for i in range(1, self.M + 1):
            self.solve(i, warm=self.mu_hat[i - 1])
        return self.mu_hat.copy()


@dataclass(frozen=True)
class ConfidenceConfig:
    delta: float
    sigma_s: float
    lambda1: float
    lambda2: float
    bounds: ModelBounds

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("regularizers must be positive")

    def halved(self) -> "ConfidenceConfig":
        return replace(self, delta=self.delta / 2)


def theta_radius(cfg: ConfidenceConfig, t: float) -> float:
    """Self-normalized radius for the dynamics estimate at time index ``t``."""
    bd = cfg.bounds
    M = bd.M
    cx = compute_state_bound(bd)
    inner = 1.0 / cfg.delta + t * (cx * cx + 2.0) / (cfg.delta * cfg.lambda1)
    first = cfg.sigma_s * math.sqrt((2 * M + 1) * math.log(inner))
    second = math.sqrt(cfg.lambda1 * (bd.a_bar ** 2 + M * bd.b_bar ** 2 + M * bd.c_bar ** 2))
    return first + second


def mu_radius_from_H(cfg: ConfidenceConfig, H: float) -> float:
    bd = cfg.bounds
    lam = cfg.lambda2
    mb = bd.mu_bar
    sH = math.sqrt(H)
    sl = math.sqrt(lam)
    log_term = math.log(2 * bd.M * sH / (cfg.delta * sl))
    return (math.exp(3 * mb) / sH * (sl / 2 + 2 / sl * (mb + log_term))
            + math.exp(2 * mb) * lam * mb / H)


def mu_radius(cfg: ConfidenceConfig, est: AdherenceEstimator, i: int) -> float:
    return mu_radius_from_H(cfg, est.H(i))

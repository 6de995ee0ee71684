"""Ground-truth patient system: engagement state, stochastic adherence, rewards.

Actions are integer indices: 0 is the null action, ``i`` in ``1..M`` recommends
treatment ``i``. The adherence outcome ``d`` uses the same encoding, so ``d`` is
either 0 or equal to ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

NULL = 0


class InvalidBoundsError(ValueError):
    pass


def sigmoid(x):
    return expit(x)


def sigmoid_prime(x):
    s = expit(x)
    return s * (1.0 - s)


def _sig(v: float) -> float:
    # scalar logistic without numpy overhead, stable for large |v|
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


@dataclass(frozen=True)
class ModelBounds:
    a_bar: float
    b_bar: float
    c_bar: float
    w_bar: float
    mu_bar: float
    M: int

    def __post_init__(self):
        if not 0.0 <= self.a_bar < 1.0:
            raise InvalidBoundsError(f"a_bar must lie in [0, 1), got {self.a_bar}")
        for name in ("b_bar", "c_bar", "w_bar", "mu_bar"):
            if getattr(self, name) < 0:
                raise InvalidBoundsError(f"{name} must be nonnegative")
        if self.M < 1:
            raise InvalidBoundsError("M must be at least 1")

    @property
    def c_x(self) -> float:
        return compute_state_bound(self)

    @property
    def dim(self) -> int:
        return 2 * self.M + 1

    def with_treatments(self, M: int) -> "ModelBounds":
        return ModelBounds(self.a_bar, self.b_bar, self.c_bar, self.w_bar, self.mu_bar, M)

    def theta_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of the box holding theta = [a, b, c]."""
        M = self.M
        lo = np.concatenate([[0.0], np.full(M, -self.b_bar), np.full(M, -self.c_bar)])
        hi = np.concatenate([[self.a_bar], np.full(M, self.b_bar), np.full(M, self.c_bar)])
        return lo, hi


# Default constants used by the experiments.
DEFAULT_BOUNDS = ModelBounds(a_bar=0.85, b_bar=3.75, c_bar=2.75, w_bar=2.5, mu_bar=2.5, M=3)


@dataclass(frozen=True)
class NoiseSpec:
    sigma_w: float = 1.0
    w_bar: float = 2.5
    sigma_s: float | None = None

    def __post_init__(self):
        if self.sigma_w <= 0 or self.w_bar <= 0:
            raise ValueError("sigma_w and w_bar must be positive")
        if self.sigma_s is None:
            # truncating a sigma-Gaussian keeps it sigma-subgaussian
            object.__setattr__(self, "sigma_s", float(self.sigma_w))
        elif self.sigma_s <= 0:
            raise ValueError("sigma_s must be positive")


@dataclass
class PatientParams:
    a: float
    b: np.ndarray
    c: np.ndarray
    mu: np.ndarray
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        self.a = float(self.a)
        self.b = np.asarray(self.b, dtype=float).copy()
        self.c = np.asarray(self.c, dtype=float).copy()
        self.mu = np.asarray(self.mu, dtype=float).copy()
        if not (self.b.shape == self.c.shape == self.mu.shape and self.b.ndim == 1):
            raise ValueError("b, c and mu must be vectors of equal length")

    @property
    def M(self) -> int:
        return len(self.b)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([[self.a], self.b, self.c])

    def check(self, bounds: ModelBounds, tol: float = 1e-12) -> None:
        if not -tol <= self.a <= bounds.a_bar + tol:
            raise ValueError(f"a={self.a} outside [0, {bounds.a_bar}]")
        for name, bar in (("b", bounds.b_bar), ("c", bounds.c_bar), ("mu", bounds.mu_bar)):
            v = getattr(self, name)
            if np.any(np.abs(v) > bar + tol):
                raise ValueError(f"{name}={v} outside [-{bar}, {bar}]")

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b.tolist(), "c": self.c.tolist(),
                "mu": self.mu.tolist(),
                "noise": {"sigma_w": self.noise.sigma_w, "w_bar": self.noise.w_bar,
                          "sigma_s": self.noise.sigma_s}}

    @classmethod
    def from_dict(cls, d: dict) -> "PatientParams":
        return cls(d["a"], d["b"], d["c"], d["mu"], NoiseSpec(**d.get("noise", {})))


@dataclass(frozen=True)
class RewardSpec:
    rho: tuple
    beta: float = 0.0
    beta0: float = 0.0
    gamma: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if any(r < 0 for r in self.rho):
            raise ValueError("rho entries must be nonnegative")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def rho_bar(self) -> float:
        return max(self.rho) if self.rho else 0.0

    @property
    def M(self) -> int:
        return len(self.rho)


@dataclass(frozen=True)
class Transition:
    x: float
    u: int
    d: int
    x_next: float

    def z(self, M: int) -> np.ndarray:
        return feature_vector(self.x, self.u, self.d, M)


def feature_vector(x: float, u: int, d: int, M: int) -> np.ndarray:
    """z = [x, onehot(u), onehot(d)] of length 2M+1."""
    z = np.zeros(2 * M + 1)
    z[0] = x
    if u:
        z[u] = 1.0
    if d:
        z[M + d] = 1.0
    return z


def compute_state_bound(bounds: ModelBounds) -> float:
    if bounds.a_bar >= 1.0:
        raise InvalidBoundsError("a_bar must be < 1 for a finite state bound")
    return (bounds.b_bar + bounds.c_bar + bounds.w_bar) / (1.0 - bounds.a_bar)


def adherence_prob(x: float, mu_i: float, u_i: int) -> float:
    return float(u_i) * _sig(x + mu_i)


def adherence_bounds(bounds: ModelBounds) -> tuple[float, float]:
    edge = compute_state_bound(bounds) + bounds.mu_bar
    return _sig(-edge), _sig(edge)


def sample_noise(spec: NoiseSpec, rng: np.random.Generator, size=None):
    """Zero-mean Gaussian truncated to [-w_bar, w_bar], drawn by rejection."""
    if size is None:
        while True:
            w = rng.normal(0.0, spec.sigma_w)
            if abs(w) <= spec.w_bar:
                return w
    out = rng.normal(0.0, spec.sigma_w, size=size)
    bad = np.abs(out) > spec.w_bar
    while bad.any():
        out[bad] = rng.normal(0.0, spec.sigma_w, size=int(bad.sum()))
        bad = np.abs(out) > spec.w_bar
    return out


def truncated_noise_variance(spec: NoiseSpec) -> float:
    from scipy.stats import truncnorm

    k = spec.w_bar / spec.sigma_w
    return float(truncnorm(-k, k, scale=spec.sigma_w).var())


def initial_state(params: PatientParams, rng: np.random.Generator) -> float:
    # x_1 shares the noise distribution
    return sample_noise(params.noise, rng)


def step(params: PatientParams, x: float, u: int, rng: np.random.Generator,
         noise: float | None = None, adhered: bool | None = None):
    """Advance one day. Returns ``(d, x_next, w)``.

    ``noise`` and ``adhered`` pin the random draws (used for hand-checked cases).
    Draw order is fixed: adherence uniform first (only when u != 0), then noise.
    """
    d = NULL
    if u:
        if adhered is None:
            adhered = rng.random() < _sig(x + params.mu[u - 1])
        if adhered:
            d = u
    w = sample_noise(params.noise, rng) if noise is None else noise
    x_next = params.a * x + w
    if u:
        x_next += params.b[u - 1]
        if d:
            x_next += params.c[u - 1]
    return d, x_next, w


def reward(spec: RewardSpec, x: float, u: int, d: int) -> float:
    r = -spec.beta * _sig(spec.beta0 - x) if spec.beta else 0.0
    if d:
        r += spec.rho[d - 1]
    return r


def expected_reward(spec: RewardSpec, mu, x, u: int):
    """Reward averaged over the adherence outcome; vectorized in ``x``."""
    x = np.asarray(x, dtype=float)
    r = -spec.beta * expit(spec.beta0 - x) if spec.beta else np.zeros_like(x)
    if u:
        r = r + spec.rho[u - 1] * expit(x + mu[u - 1])
    return r if r.ndim else float(r)


def simulate_batch(a, b, c, mu, noise: NoiseSpec, actions, rng: np.random.Generator,
                   x0=None, T: int | None = None):
    """Run K independent trajectories in lock step.

    ``a`` is shape (K,), ``b``, ``c``, ``mu`` shape (K, M). ``actions`` is either a
    (K, T) integer array fixed in advance or a feedback rule ``actions(t, x) -> u``
    (then ``T`` is required). Returns states (K, T+1), adherence (K, T) and
    actions (K, T).
    """
    a = np.asarray(a, dtype=float)
    b, c, mu = (np.asarray(v, dtype=float) for v in (b, c, mu))
    K = len(a)
    if callable(actions):
        if T is None:
            raise ValueError("a feedback rule needs T")
        rule, actions = actions, np.zeros((K, T), dtype=np.int64)
    else:
        rule = None
        actions = np.asarray(actions)
        K, T = actions.shape
    rows = np.arange(K)
    # column 0 is the null action: zero effect, zero adherence probability
    b0 = np.hstack([np.zeros((K, 1)), b])
    c0 = np.hstack([np.zeros((K, 1)), c])
    mu0 = np.hstack([np.zeros((K, 1)), mu])
    xs = np.empty((K, T + 1))
    ds = np.zeros((K, T), dtype=np.int64)
    xs[:, 0] = sample_noise(noise, rng, size=K) if x0 is None else x0
    for t in range(T):
        x = xs[:, t]
        if rule is not None:
            actions[:, t] = rule(t, x)
        u = actions[:, t]
        p = np.where(u > 0, expit(x + mu0[rows, u]), 0.0)
        adh = rng.random(K) < p
        ds[:, t] = np.where(adh, u, 0)
        w = sample_noise(noise, rng, size=K)
        xs[:, t + 1] = a * x + b0[rows, u] + adh * c0[rows, u] + w
    return xs, ds, actions

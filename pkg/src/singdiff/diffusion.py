"""Variance-preserving forward process and reverse-time SDE/ODE integrators.

The forward kernel is X_t | X_0 ~ N(exp(-B(t)/2) X_0, (1 - exp(-B(t))) I)
with B(t) = beta_0 t + (beta_1 - beta_0) t^2 / 2, so the squared mean
coefficient and the variance sum to one at every t and the terminal prior
is the standard normal. Reverse integration walks a uniform time grid from
t = 1 down to t_min, evaluating the rate at the left (larger-t) endpoint
of each step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

SDE = "sde"
ODE = "ode"

DEFAULT_BETA_0 = 0.05
DEFAULT_BETA_1 = 20.0
DEFAULT_T_MIN = 1e-4


@dataclass(frozen=True)
class NoiseSchedule:
    beta_0: float = DEFAULT_BETA_0
    beta_1: float = DEFAULT_BETA_1

    def __post_init__(self):
        if not 0 < self.beta_0 < self.beta_1:
            raise ValueError(f"need 0 < beta_0 < beta_1, got ({self.beta_0}, {self.beta_1})")

    def beta(self, t):
        """Instantaneous noise rate beta(t)."""
        return self.beta_0 + (self.beta_1 - self.beta_0) * t

    def cumulative(self, t):
        """B(t) = integral of beta over [0, t]."""
        return self.beta_0 * t + (self.beta_1 - self.beta_0) * t * t / 2.0


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 200
    kind: str = SDE
    seed: int = 0
    t_min: float = DEFAULT_T_MIN

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.kind not in (SDE, ODE):
            raise ValueError(f"kind must be '{SDE}' or '{ODE}', got {self.kind!r}")
        if not 0 < self.t_min < 1:
            raise ValueError("t_min must lie in (0, 1)")


def noise_stats(t: float, sched: NoiseSchedule) -> tuple[float, float]:
    """Mean coefficient and variance of the perturbation kernel at time t."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    mean_coef = float(np.exp(-sched.cumulative(t) / 2.0))
    return mean_coef, 1.0 - mean_coef * mean_coef


def forward_sample(
    x0: np.ndarray, t: float, sched: NoiseSchedule, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw X_t = mean_coef * X_0 + sqrt(var) * eps; returns (X_t, eps)."""
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    mean_coef, var = noise_stats(t, sched)
    eps = rng.standard_normal(x0.shape)
    return mean_coef * x0 + np.sqrt(var) * eps, eps


def score_target(x0: np.ndarray, x_t: np.ndarray, t: float, sched: NoiseSchedule) -> np.ndarray:
    """Exact score of the perturbation kernel: -(X_t - mean_coef X_0) / var."""
    if x0.shape != x_t.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x_t.shape}")
    mean_coef, var = noise_stats(t, sched)
    if var == 0.0:
        raise ValueError("score target is undefined at t = 0")
    return -(x_t - mean_coef * x0) / var


def reverse_step(
    x: np.ndarray,
    score: np.ndarray,
    t: float,
    dt: float,
    sched: NoiseSchedule,
    kind: str = SDE,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One reverse step from t to t - dt given the guided score at (x, t)."""
    if not 0 < dt <= t:
        raise ValueError(f"need 0 < dt <= t, got dt={dt}, t={t}")
    beta_dt = sched.beta(t) * dt
    if kind == ODE:
        return x + (x + score) * (beta_dt / 2.0)
    if kind == SDE:
        if rng is None:
            raise ValueError("SDE steps need an RNG for the diffusion term")
        z = rng.standard_normal(x.shape)
        return x + (x / 2.0 + score) * beta_dt + np.sqrt(beta_dt) * z
    raise ValueError(f"unknown integrator kind {kind!r}")


def time_grid(n_steps: int, t_min: float = DEFAULT_T_MIN) -> np.ndarray:
    """Uniform reverse-time grid from 1 down to t_min, n_steps + 1 points."""
    return np.linspace(1.0, t_min, n_steps + 1)


ScoreFn = Callable[[np.ndarray, float], np.ndarray]


def integrate_reverse(
    x_init: np.ndarray,
    score_fn: ScoreFn,
    sched: NoiseSchedule,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run the reverse process from t = 1 to t_min starting at x_init."""
    x = np.array(x_init, dtype=np.float64, copy=True)
    grid = time_grid(config.n_steps, config.t_min)
    for i in range(config.n_steps):
        t = float(grid[i])
        dt = float(grid[i] - grid[i + 1])
        x = reverse_step(x, score_fn(x, t), t, dt, sched, config.kind, rng)
    return x


def sample_prior(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Standard-normal terminal prior draw."""
    return rng.standard_normal(shape)

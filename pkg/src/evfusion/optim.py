"""Adam optimizer over named numpy parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OptimizerSettings:
    """Adam hyperparameters plus the stopping rule.

    ``convergence_tol`` is the relative total-loss change over a 10-iteration
    lookback below which the descent stops. ``twist_step_size`` overrides
    ``step_size`` for twist parameters when both depth grids and a pose are
    optimized jointly (depth entries and rotation radians live on different
    scales).
    """

    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iterations: int = 2000
    convergence_tol: float = 1e-5
    twist_step_size: float | None = None

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.twist_step_size is not None and self.twist_step_size <= 0:
            raise ValueError("twist_step_size must be positive")


class Adam:
    """Plain Adam over a dict of parameter arrays with per-parameter step sizes."""

    def __init__(self, params: dict, step_sizes: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self.step_sizes = dict(step_sizes)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / b1c
            v_hat = self.v[k] / b2c
            self.params[k] -= self.step_sizes[k] * m_hat / (np.sqrt(v_hat) + self.eps)

    def rescale(self, name: str, factor: float) -> None:
        """Multiply a parameter by ``factor``, keeping moments consistent."""
        self.params[name] *= factor
        self.m[name] *= factor
        self.v[name] *= factor * factor


def converged(history: list, tol: float, lookback: int = 10) -> bool:
    """Relative loss change over the lookback window fell below ``tol``."""
    if len(history) < lookback + 1:
        return False
    past = history[-lookback - 1]
    return abs(history[-1] - past) < tol * max(abs(past), 1e-12)

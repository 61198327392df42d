"""Adam with a step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .tensor import Tensor


@dataclass
class OptimConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_factor: float = 0.1
    decay_interval: int = 400_000

    def __post_init__(self):
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ValueError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.decay_interval < 1:
            raise ValueError("decay_interval must be positive")


def learning_rate_at(config: OptimConfig, iteration: int) -> float:
    """lr0 * decay ** floor(iteration / interval); ``iteration`` counts completed steps."""
    return config.learning_rate * config.decay_factor ** (iteration // config.decay_interval)


class Adam:
    def __init__(self, params: Iterable[Tensor], config: OptimConfig):
        self.params = list(params)
        self.config = config
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.iteration = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        """Apply one bias-corrected update; returns the learning rate used."""
        cfg = self.config
        lr = learning_rate_at(cfg, self.iteration)
        self.iteration += 1
        t = self.iteration
        c1 = 1.0 - cfg.beta1**t
        c2 = 1.0 - cfg.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            if lr == 0.0:
                continue
            update = (lr * (m / c1)) / (np.sqrt(v / c2) + cfg.epsilon)
            p.data -= update.astype(p.dtype, copy=False)
        return lr

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam.m.{i}"] = m
            out[f"adam.v.{i}"] = v
        return out

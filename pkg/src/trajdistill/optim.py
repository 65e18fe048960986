"""Momentum-free adaptive optimizer: per-parameter RMS normalization."""

from __future__ import annotations

import numpy as np

from .engine import ParamStore


class RmsOptimizer:
    """p -= lr * g / (sqrt(ema(g^2)) + eps), one accumulator per entry."""

    def __init__(self, lr: float, beta: float = 0.99, eps: float = 1e-8):
        self.lr = lr
        self.beta = beta
        self.eps = eps
        self._accum: dict[str, np.ndarray] = {}

    def step(self, params: ParamStore, grads: ParamStore) -> None:
        for name in params:
            g = grads[name]
            acc = self._accum.get(name)
            if acc is None:
                acc = np.zeros_like(g)
            acc = self.beta * acc + (1.0 - self.beta) * g * g
            self._accum[name] = acc
            params[name] = params[name] - self.lr * g / (np.sqrt(acc) + self.eps)

"""Adam / SGD over named numpy parameters, plus the linear warm-up schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


def warmup_lr(base_lr: float, step: int, total_steps: int, warmup: float) -> float:
    """Linear ramp over the first ``ceil(warmup * total_steps)`` steps, constant after.

    ``step`` is zero-based, so the first update already uses ``base_lr / n_warm``.
    """
    n_warm = math.ceil(warmup * total_steps)
    if n_warm <= 0 or step >= n_warm:
        return base_lr
    return base_lr * (step + 1) / n_warm


@dataclass
class OptimizerState:
    """First/second moments keyed by parameter name, and the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kind: str = "adam"
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def apply(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        """One in-place descent step on every array in ``params``."""
        self.t += 1
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            if self.kind == "sgd":
                p -= lr * g
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

"""Adam with linear warmup and linear decay.

The optimizer works on plain dicts of numpy arrays (parameter name -> buffer)
so it can be exercised and gradient-checked independently of the tensor graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Per-run optimizer state: schedule constants plus per-parameter moments."""

    base_lr: float
    total_steps: int
    warmup_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be positive, got {self.total_steps}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")

    def learning_rate(self, step=None):
        """lr(t): linear 0 -> base_lr over the warmup steps, then linear decay to 0."""
        t = self.step if step is None else step
        warmup = self.warmup_fraction * self.total_steps
        if t < warmup:
            lr = self.base_lr * t / warmup
        else:
            lr = self.base_lr * (self.total_steps - t) / (self.total_steps - warmup)
        return max(lr, 0.0)


def adam_step(state, params, grads):
    """One Adam update; returns fresh parameter buffers, inputs untouched.

    Aborts on any non-finite gradient, naming the offending parameter.
    """
    lr = state.learning_rate()
    t = state.step + 1
    out = {}
    for name in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter '{name}' at step {state.step}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        out[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    state.step = t
    return out

"""Adam optimizer and the warm-up + cosine-restart learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TrainingError


@dataclass
class Schedule:
    peak_lr: float = 1e-3
    floor_lr: float = 1e-7
    warm_steps: int = 100
    cycle_steps: int = 1000

    def __post_init__(self):
        if not self.peak_lr > self.floor_lr > 0:
            raise TrainingError(f"need peak_lr > floor_lr > 0, got {self.peak_lr} / {self.floor_lr}")
        if self.warm_steps < 1 or self.cycle_steps < 1:
            raise TrainingError("warm_steps and cycle_steps must be >= 1")


def lr_at(step, schedule):
    """Linear warm-up floor -> peak over warm_steps, then per-cycle cosine
    decay peak -> floor, restarting every cycle_steps."""
    if step < 0:
        raise TrainingError(f"step must be >= 0, got {step}")
    s = schedule
    if step < s.warm_steps:
        return s.floor_lr + (s.peak_lr - s.floor_lr) * step / s.warm_steps
    pos = (step - s.warm_steps) % s.cycle_steps
    return s.floor_lr + 0.5 * (s.peak_lr - s.floor_lr) * (1.0 + math.cos(math.pi * pos / s.cycle_steps))


class Adam:
    """Standard Adam with bias correction; state keyed by parameter name."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads, lr):
        """Update ``params`` ({name: Tensor}) in place from ``grads``
        ({name: ndarray}) at learning rate ``lr``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = grads[name]
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.m[name] = m
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self):
        st = {"t": np.array([float(self.t)])}
        for k, arr in self.m.items():
            st[f"m.{k}"] = arr.copy()
        for k, arr in self.v.items():
            st[f"v.{k}"] = arr.copy()
        return st

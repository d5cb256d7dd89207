"""Adam with an optional linear-warmup + cosine-decay schedule."""

from __future__ import annotations

import math

import numpy as np


class WarmupCosine:
    """Linear warmup from 0 to ``base_lr``, then cosine decay to 0.

    Steps are 1-indexed: step 1 gets lr base_lr/warmup_steps, step
    ``warmup_steps`` gets the full base_lr, and the cosine phase spans the
    remaining ``total_steps - warmup_steps`` steps.
    """

    def __init__(self, base_lr, warmup_steps, total_steps):
        if total_steps < 1 or warmup_steps < 0 or warmup_steps > total_steps:
            raise ValueError(
                f"bad schedule: warmup_steps={warmup_steps}, total_steps={total_steps}")
        self.base_lr = float(base_lr)
        self.warmup_steps = int(warmup_steps)
        self.total_steps = int(total_steps)

    def lr_at(self, step):
        if step < 1:
            raise ValueError(f"schedule steps are 1-indexed, got {step}")
        if self.warmup_steps and step <= self.warmup_steps:
            return self.base_lr * step / self.warmup_steps
        span = self.total_steps - self.warmup_steps
        if span <= 0:
            return self.base_lr
        frac = min((step - self.warmup_steps) / span, 1.0)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


class Adam:
    """Standard Adam with bias correction; lr may come from a schedule.

    A parameter whose ``grad`` is None is treated as having a zero gradient,
    so a fresh optimizer stepped on zero gradients leaves params unchanged.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, schedule=None):
        self.params = list(params)
        if not self.params:
            raise ValueError("optimizer needs at least one parameter")
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.schedule = schedule
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        if len(self.m) != len(self.params):
            raise ValueError(
                f"optimizer state holds {len(self.m)} slots for {len(self.params)} params")
        self.t += 1
        lr = self.schedule.lr_at(self.t) if self.schedule is not None else self.lr
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(np.float32)

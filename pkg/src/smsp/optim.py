"""SGD updates and the cosine-annealed learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["LrSchedule", "cosine_lr", "sgd_step", "Sgd"]


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float
    total_steps: int
    min_lr: float = 0.0

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if not 0.0 <= self.min_lr <= self.initial_lr:
            raise ValueError("min_lr must lie in [0, initial_lr]")


def cosine_lr(schedule: LrSchedule, step: int) -> float:
    """Annealed rate at `step`; step 0 gives initial_lr, step total_steps gives min_lr."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    span = schedule.initial_lr - schedule.min_lr
    return schedule.min_lr + 0.5 * span * (1.0 + math.cos(math.pi * step / schedule.total_steps))


def sgd_step(params, lr: float) -> None:
    """One gradient step on trainable params; zeroes every gradient after."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    for p in params:
        if p.trainable:
            upd = p.data.astype(np.float64) - lr * p.grad
            p.data = upd.astype(p.data.dtype)
        p.grad.fill(0.0)


class Sgd:
    """Stateful SGD wrapper; momentum stays off unless configured."""

    def __init__(self, params, momentum: float = 0.0):
        self.params = list(params)
        self.momentum = float(momentum)
        self._velocity = (
            [np.zeros(p.data.shape, np.float64) for p in self.params] if momentum else None
        )

    def step(self, lr: float) -> None:
        if self._velocity is None:
            sgd_step(self.params, lr)
            return
        if lr <= 0:
            raise ValueError("lr must be positive")
        for p, v in zip(self.params, self._velocity):
            if p.trainable:
                v *= self.momentum
                v += p.grad
                p.data = (p.data.astype(np.float64) - lr * v).astype(p.data.dtype)
            p.grad.fill(0.0)

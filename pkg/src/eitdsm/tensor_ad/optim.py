"""Adam optimizer and a cosine one-cycle learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Tensor


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0


class Adam:
    """Bias-corrected Adam over a fixed list of parameter tensors.

    Parameters without a gradient are treated as having a zero gradient.
    """

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = OptimizerState(
            m=[np.zeros_like(p.data) for p in self.params],
            v=[np.zeros_like(p.data) for p in self.params],
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                bad = int(np.sum(~np.isfinite(g)))
                raise NonFiniteGradient(
                    f"non-finite gradient in {p.name or 'parameter'} {p.shape}: {bad} bad entries"
                )
            grads.append(g)
        st = self.state
        st.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for p, g, m, v in zip(self.params, grads, st.m, st.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, state: Adam, lr: float) -> None:
    """Functional alias: apply one Adam update using the params' ``.grad``."""
    state.step(lr)


@dataclass(frozen=True)
class LrSchedule:
    total_epochs: int
    lr_max: float = 1e-3
    warmup_epochs: float = 10
    start_factor: float = 1e-3
    end_factor: float = 1e-3

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if not 0 < self.warmup_epochs <= self.total_epochs:
            raise ValueError("warmup_epochs must lie in (0, total_epochs]")


def _cos_ramp(a: float, b: float, t: float) -> float:
    return b + (a - b) * 0.5 * (1.0 + math.cos(math.pi * t))


def lr_at(schedule: LrSchedule, epoch_fraction: float) -> float:
    """Learning rate at ``epoch_fraction`` in [0, 1] of the whole run."""
    t = min(max(float(epoch_fraction), 0.0), 1.0)
    peak = schedule.warmup_epochs / schedule.total_epochs
    lo_start = schedule.start_factor * schedule.lr_max
    lo_end = schedule.end_factor * schedule.lr_max
    if t <= peak:
        return _cos_ramp(lo_start, schedule.lr_max, t / peak)
    return _cos_ramp(schedule.lr_max, lo_end, (t - peak) / (1.0 - peak))

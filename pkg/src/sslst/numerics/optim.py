"""Adam, global-norm clipping and learning-rate schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            {k: v.copy() for k, v in self.first.items()},
            {k: v.copy() for k, v in self.second.items()},
            self.step, self.beta1, self.beta2, self.eps,
        )


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: OptimizerState, lr: float) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    new_state = state.copy()
    new_state.step = state.step + 1
    t = new_state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    updated = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            updated[name] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = new_state.first.get(name)
        v = new_state.second.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        elif m.shape != p.shape:
            raise ValueError(f"adam_step: moment for {name!r} has shape {m.shape}, parameter {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_state.first[name] = m
        new_state.second[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        updated[name] = (p - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
    return updated, new_state


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm is None or total <= max_norm or total == 0.0:
        return dict(grads), total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


class Adam:
    """Stateful wrapper that writes :func:`adam_step` results back into parameter tensors."""

    def __init__(self, params: Mapping[str, Tensor], clip_norm: float | None = None):
        self.params = params
        self.state = OptimizerState()
        self.clip_norm = clip_norm
        self.last_grad_norm = 0.0

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        if self.clip_norm is not None:
            grads, self.last_grad_norm = clip_by_global_norm(grads, self.clip_norm)
        arrays = {k: t.data for k, t in self.params.items() if t.requires_grad}
        updated, self.state = adam_step(arrays, grads, self.state, lr)
        for name, value in updated.items():
            self.params[name].data = value


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule.

    ``fixed`` returns ``peak`` forever.  ``polynomial`` warms up linearly from 0
    to ``peak`` over ``warmup`` steps, then decays linearly to ``end`` at
    ``total`` steps and stays there.
    """

    kind: str = "fixed"
    peak: float = 1e-3
    warmup: int = 0
    total: int = 0
    end: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fixed", "polynomial"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "polynomial" and self.total < self.warmup:
            raise ValueError(f"total steps {self.total} < warmup steps {self.warmup}")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")

    def __call__(self, step: int) -> float:
        return schedule_lr(self, step)


def schedule_lr(schedule: Schedule, step: int) -> float:
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if schedule.kind == "fixed":
        return schedule.peak
    if step < schedule.warmup:
        return schedule.peak * step / schedule.warmup
    span = schedule.total - schedule.warmup
    if span == 0 or step >= schedule.total:
        return schedule.end
    frac = (step - schedule.warmup) / span
    return schedule.peak + (schedule.end - schedule.peak) * frac

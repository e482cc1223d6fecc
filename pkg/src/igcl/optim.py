"""Parameter initialisation and the Adam optimiser."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericError, UsageError
from .tensor import Tensor

__all__ = ["glorot_init", "AdamState", "adam_step", "Adam"]


def glorot_init(fan_in: int, fan_out: int, rng: np.random.Generator, name: str | None = None) -> Tensor:
    """Uniform Glorot initialisation on ``[-L, L]`` with ``L = sqrt(6 / (fan_in + fan_out))``."""
    if fan_in < 1 or fan_out < 1:
        raise UsageError(f"glorot_init needs positive fans, got ({fan_in}, {fan_out})")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> AdamState:
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    name: str = "param",
) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter value.

    ``weight_decay`` is an L2 term added to the gradient before the moment
    updates (classic Adam-L2, not decoupled AdamW).
    """
    if grad.shape != param.shape:
        raise UsageError(f"{name}: gradient shape {grad.shape} != parameter shape {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient for parameter {name!r}")
    g = grad + weight_decay * param if weight_decay else grad
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class Adam:
    """Adam over a list of tensors; ``lr`` may be changed between steps for schedules."""

    params: Sequence[Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    states: list[AdamState] = field(init=False)
    steps: int = field(init=False, default=0)

    def __post_init__(self):
        self.params = list(self.params)
        self.states = [AdamState.like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for i, (p, state) in enumerate(zip(self.params, self.states)):
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data = adam_step(
                p.data, grad, state, self.lr, self.beta1, self.beta2, self.eps,
                self.weight_decay, name=p.name or f"param[{i}]",
            )
        self.steps += 1

"""Adam with bias correction and decoupled weight decay; global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from dialoglab.errors import ValidationError
from dialoglab.numerics.tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


def optimizer_step(params: Sequence[Tensor], grads, state: AdamState, lr: float, weight_decay: float) -> AdamState:
    """One Adam update in place; weight decay is applied to the parameter directly
    (``p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)``), not through the moments."""
    grads = list(grads)
    if len(grads) != len(params) or any(g is None for g in grads):
        raise ValidationError("optimizer step needs a gradient for every parameter (run backward first)")
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    state.step += 1
    c1 = 1.0 - BETA1**state.step
    c2 = 1.0 - BETA2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + EPS)
        if weight_decay:
            update = update + weight_decay * p.data
        p.data -= lr * update
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = AdamState()

    def step(self) -> None:
        optimizer_step(self.params, [p.grad for p in self.params], self.state, self.lr, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def grad_norm(params: Sequence[Tensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)))


def clip_gradients(params: Sequence[Tensor], max_norm: float = 3.0) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``."""
    norm = grad_norm(params)
    if norm <= max_norm:
        return 1.0
    factor = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad *= factor
    return factor

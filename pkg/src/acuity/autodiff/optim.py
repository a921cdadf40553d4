"""Adam with decoupled weight decay."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(FloatingPointError):
    pass


def adamw_step(params, grads, state: dict, lr: float, weight_decay: float = 0.0,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> list[np.ndarray]:
    """One bias-corrected Adam update plus ``lr * weight_decay * theta`` decay.

    ``state`` carries ``step``, ``m`` and ``v`` (lists aligned with params) and
    is updated in place; pass ``{}`` for the first step.
    """
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in parameter {i}")
    if not state:
        state.update(step=0, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
    state["step"] += 1
    t = state["step"]
    c1, c2 = 1.0 - beta1**t, 1.0 - beta2**t
    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state["m"][i] = beta1 * state["m"][i] + (1.0 - beta1) * g
        v = state["v"][i] = beta2 * state["v"][i] + (1.0 - beta2) * g * g
        step = (m / c1) / (np.sqrt(v / c2) + eps)
        updated.append(p - lr * (step + weight_decay * p))
    return updated


class AdamW:
    def __init__(self, params: list[Tensor], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.weight_decay = lr, weight_decay
        self.betas, self.eps = betas, eps
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        new = adamw_step([p.data for p in self.params], grads, self.state, self.lr,
                         self.weight_decay, self.betas[0], self.betas[1], self.eps)
        for p, data in zip(self.params, new):
            p.data = data

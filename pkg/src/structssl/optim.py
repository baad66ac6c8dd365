"""Adam optimizer with bias correction.

Defaults: b1=0.9, b2=0.999, eps=1e-8; the learning rate is the caller's.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    """Per-parameter moment estimates and step counter."""

    lr: float = 1e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def adam_step(param: Tensor, grad: np.ndarray, state: AdamState) -> Tensor:
    """One bias-corrected Adam update; mutates ``param.data`` and ``state``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape:
        raise ShapeError(f"adam_step: grad shape {grad.shape} != param shape {param.shape}")
    if state.m is None:
        state.m = np.zeros_like(param.data)
        state.v = np.zeros_like(param.data)
    if state.m.shape != param.shape:
        raise ShapeError(f"adam_step: state shape {state.m.shape} != param shape {param.shape}")
    state.t += 1
    state.m = state.b1 * state.m + (1.0 - state.b1) * grad
    state.v = state.b2 * state.v + (1.0 - state.b2) * (grad * grad)
    m_hat = state.m / (1.0 - state.b1 ** state.t)
    v_hat = state.v / (1.0 - state.b2 ** state.t)
    param.data = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param


class Adam:
    """Adam over a list of parameter tensors, one moment state per tensor."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.states = [AdamState(lr=lr, b1=b1, b2=b2, eps=eps) for _ in self.params]

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            if p.grad is None:
                continue
            adam_step(p, p.grad, s)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(learning_rate=learning_rate,
                   first_moment=[np.zeros_like(p.data) for p in params],
                   second_moment=[np.zeros_like(p.data) for p in params], **kw)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if state.step_count < 0:
        raise ValueError("step_count must be >= 0")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step_size = state.learning_rate / (1.0 - b1 ** t)
    v_corr = 1.0 / (1.0 - b2 ** t)
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v * v_corr)
        denom += state.epsilon
        p.data -= step_size * m / denom
    return state


def mse_l1_loss(pred: Tensor, target, params: Sequence[Tensor] = (), l1_weight: float = 0.0) -> Tensor:
    """Mean squared residual plus ``l1_weight`` times the summed absolute parameter values."""
    if l1_weight < 0:
        raise ValueError("l1_weight must be non-negative")
    loss = T.mse(pred, target)
    if l1_weight > 0 and params:
        penalty = T.abs_sum(params[0])
        for p in params[1:]:
            penalty = T.add(penalty, T.abs_sum(p))
        loss = T.add(loss, T.mul(penalty, l1_weight))
    return loss

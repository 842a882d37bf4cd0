"""Adam optimizer over named parameter blocks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .exceptions import ShapeError


@dataclass
class AdamState:
    """First/second-moment accumulators plus the shared step counter."""

    learning_rate: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``.

    m_t = b1 m + (1-b1) g;  v_t = b2 v + (1-b2) g^2
    p  -= lr * (m_t / (1-b1^t)) / (sqrt(v_t / (1-b2^t)) + eps)
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads.get(name), dtype=np.float64) if grads.get(name) is not None \
            else np.zeros_like(p.values)
        if g.shape != p.values.shape:
            raise ShapeError(f"adam_step: grad for {name!r} has shape {g.shape}, "
                             f"param has {p.values.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return state

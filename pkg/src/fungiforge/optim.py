"""Bias-corrected Adam over flat parameter dicts.

Update per parameter theta with gradient g at step t:

    m <- b1 m + (1 - b1) g
    v <- b2 v + (1 - b2) g^2
    theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)

Only parameters present in the gradient dict are touched, which is how
the harness freezes the trunk in transfer mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-7


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def init_adam(params: dict[str, np.ndarray],
              names: tuple[str, ...] | None = None) -> AdamState:
    state = AdamState()
    for name in (names if names is not None else params):
        state.m[name] = np.zeros_like(params[name])
        state.v[name] = np.zeros_like(params[name])
    return state


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-5,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One in-place update; t increments once per call."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"grad {name} has shape {g.shape}, param {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        denom = np.sqrt(v / bc2)
        denom += state.eps
        step = np.divide(m, denom, out=denom)
        step *= lr / bc1
        p -= step
    return params, state

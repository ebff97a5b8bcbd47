"""Adam with bias correction over a named parameter store."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import ConfigError, ShapeError
from ._array import Array


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigError(
                f"invalid Adam hyperparameters lr={self.lr} betas=({self.beta1}, {self.beta2}) eps={self.eps}"
            )


def adam_step(
    params: Mapping[str, Array],
    grads: Mapping[str, np.ndarray | None] | None,
    state: AdamState,
) -> AdamState:
    """Apply one Adam update in place; parameters without a gradient are skipped.

    ``grads`` defaults to each parameter's ``.grad``.
    """
    if grads is None:
        grads = {name: p.grad for name, p in params.items()}
    for name, g in grads.items():
        if g is not None and g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {params[name].shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.dtype, copy=False)
    return state

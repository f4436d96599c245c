from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from core.errors import ShapeMismatch

from .tensor import Tensor, acc, ensure_finite


class AdamState:
    """Moment estimates and step count for one network's parameters.

    `m` and `v` are keyed like the parameter dict they track and hold float32
    arrays of the same shapes; they are created lazily on the first step.
    """

    __slots__ = ("lr", "beta1", "beta2", "eps", "t", "m", "v")

    def __init__(self, lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> None:
        if lr <= 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise ValueError(f"invalid Adam hyperparameters lr={lr} beta1={beta1} beta2={beta2} eps={eps}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, Tensor] = {}
        self.v: dict[str, Tensor] = {}

    def ensure_slots(self, params: Mapping[str, Tensor]) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros(p.shape, dtype=np.float32)
                self.v[name] = np.zeros(p.shape, dtype=np.float32)

    def __repr__(self) -> str:
        return f"AdamState(t={self.t}, lr={self.lr}, beta1={self.beta1}, beta2={self.beta2}, slots={len(self.m)})"


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, Tensor], state: AdamState) -> None:
    """Apply one bias-corrected Adam update to `params` in place."""
    if params.keys() != grads.keys():
        raise ShapeMismatch("parameter and gradient names differ")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {grads[name].shape}, parameter has {p.shape}")
        if name in state.m and state.m[name].shape != p.shape:
            raise ShapeMismatch(f"optimizer slot for {name} has shape {state.m[name].shape}, parameter has {p.shape}")
    state.ensure_slots(params)
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = acc(grads[name])
        m = state.beta1 * acc(state.m[name]) + (1.0 - state.beta1) * g
        v = state.beta2 * acc(state.v[name]) + (1.0 - state.beta2) * (g * g)
        state.m[name][...] = m
        state.v[name][...] = v
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p[...] = acc(p) - update
        ensure_finite(p, f"adam_step[{name}]")

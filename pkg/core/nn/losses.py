from __future__ import annotations

import numpy as np

from core.errors import ShapeMismatch

from .tensor import Tensor, acc, ensure_finite, to_storage


def mse_to_constant(t: Tensor, c: float) -> tuple[float, Tensor]:
    """mean((t - c)^2) and its gradient with respect to `t`."""
    if t.size == 0:
        raise ShapeMismatch("mse_to_constant on an empty tensor")
    diff = acc(t) - float(c)
    value = float(np.mean(diff * diff))
    grad = 2.0 * diff / t.size
    return value, ensure_finite(to_storage(grad), "mse_to_constant")


def l1_diff(a: Tensor, b: Tensor) -> tuple[float, Tensor, Tensor]:
    """mean(|a - b|) and its gradients with respect to `a` and `b`.

    The subgradient at a == b is 0.
    """
    if a.shape != b.shape:
        raise ShapeMismatch(f"l1_diff shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeMismatch("l1_diff on empty tensors")
    diff = acc(a) - acc(b)
    value = float(np.mean(np.abs(diff)))
    grad_a = np.sign(diff) / a.size
    return value, ensure_finite(to_storage(grad_a), "l1_diff"), to_storage(-grad_a)

"""Layer objects with explicit backward passes.

A layer owns `params` and `grads` dicts of equal shapes. `forward` returns the
output together with a cache; `backward` consumes that cache, so one layer can
be applied several times in a step and each application backpropagated
separately. With `accumulate=False` only the input gradient is computed and
`grads` stay untouched.
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from typing import Any

import numpy as np

from . import functional as F
from .tensor import Tensor, acc, normal_init, to_storage


class Layer:
    def __init__(self) -> None:
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, Tensor] = {}

    def _add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        raise NotImplementedError

    def backward(self, dy: Tensor, cache: Any, accumulate: bool = True) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)[0]

    def children(self) -> list[tuple[str, Layer]]:
        return []

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor, Tensor]]:
        """Yield (dotted name, parameter, gradient) in a stable order."""
        for name in self.params:
            yield f"{prefix}{name}", self.params[name], self.grads[name]
        for child_name, child in self.children():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def parameter_dict(self) -> dict[str, Tensor]:
        return {name: p for name, p, _ in self.named_parameters()}

    def gradient_dict(self) -> dict[str, Tensor]:
        return {name: g for name, _, g in self.named_parameters()}

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0)
        for _, child in self.children():
            child.zero_grad()

    def cast_parameters(self, dtype: type[np.floating]) -> None:
        for name in list(self.params):
            self.params[name] = self.params[name].astype(dtype)
            self.grads[name] = self.grads[name].astype(dtype)
        for _, child in self.children():
            child.cast_parameters(dtype)

    def _accumulate(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad.astype(self.grads[name].dtype, copy=False)


class Conv2d(Layer):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        *,
        rng: np.random.Generator,
    ) -> None:
        super().__init__()
        self.stride = stride
        self.padding = padding
        self._add_param("weight", normal_init(rng, (out_channels, in_channels, kernel_size, kernel_size)))
        self._add_param("bias", np.zeros(out_channels, dtype=np.float32))

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        return F.conv2d(x, self.params["weight"], self.params["bias"], self.stride, self.padding), x

    def backward(self, dy: Tensor, cache: Any, accumulate: bool = True) -> Tensor:
        dx, dw, db = F.conv2d_backward(dy, cache, self.params["weight"], self.stride, self.padding)
        if accumulate:
            self._accumulate("weight", dw)
            self._accumulate("bias", db)
        return dx


class ConvTranspose2d(Layer):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        output_padding: int = 0,
        *,
        rng: np.random.Generator,
    ) -> None:
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        self._add_param("weight", normal_init(rng, (in_channels, out_channels, kernel_size, kernel_size)))
        self._add_param("bias", np.zeros(out_channels, dtype=np.float32))

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        y = F.conv2d_transpose(
            x, self.params["weight"], self.params["bias"], self.stride, self.padding, self.output_padding
        )
        return y, x

    def backward(self, dy: Tensor, cache: Any, accumulate: bool = True) -> Tensor:
        dx, dw, db = F.conv2d_transpose_backward(
            dy, cache, self.params["weight"], self.stride, self.padding, self.output_padding
        )
        if accumulate:
            self._accumulate("weight", dw)
            self._accumulate("bias", db)
        return dx


class InstanceNorm2d(Layer):
    def __init__(self, channels: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self._add_param("scale", np.ones(channels, dtype=np.float32))
        self._add_param("shift", np.zeros(channels, dtype=np.float32))

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        return F.instance_norm(x, self.params["scale"], self.params["shift"], self.eps)

    def backward(self, dy: Tensor, cache: Any, accumulate: bool = True) -> Tensor:
        dx, dscale, dshift = F.instance_norm_backward(dy, cache, self.params["scale"])
        if accumulate:
            self._accumulate("scale", dscale)
            self._accumulate("shift", dshift)
        return dx


class ReLU(Layer):
    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        return F.relu(x), x

    def backward(self, dy: Tensor, cache: Any, accumulate: bool = True) -> Tensor:
        return F.relu_backward(dy, cache)


class LeakyReLU(Layer):
    def __init__(self, alpha: float = 0.2) -> None:
        super().__init__()
        self.alpha = alpha

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        return F.leaky_relu(x, self.alpha), x

    def backward(self, dy: Tensor, cache: Any, accumulate: bool = True) -> Tensor:
        return F.leaky_relu_backward(dy, cache, self.alpha)


class Sigmoid(Layer):
    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        y = F.sigmoid(x)
        return y, y

    def backward(self, dy: Tensor, cache: Any, accumulate: bool = True) -> Tensor:
        return F.sigmoid_backward(dy, cache)


class Tanh(Layer):
    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        y = F.tanh(x)
        return y, y

    def backward(self, dy: Tensor, cache: Any, accumulate: bool = True) -> Tensor:
        return F.tanh_backward(dy, cache)


class Identity(Layer):
    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        return x, None

    def backward(self, dy: Tensor, cache: Any, accumulate: bool = True) -> Tensor:
        return dy


class Sequential(Layer):
    def __init__(self, layers: Sequence[Layer]) -> None:
        super().__init__()
        self.layers = list(layers)

    def children(self) -> list[tuple[str, Layer]]:
        return [(str(i), layer) for i, layer in enumerate(self.layers)]

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, dy: Tensor, cache: Any, accumulate: bool = True) -> Tensor:
        for layer, layer_cache in zip(reversed(self.layers), reversed(cache), strict=True):
            dy = layer.backward(dy, layer_cache, accumulate)
        return dy


class ResidualBlock(Layer):
    """x + IN(conv3(relu(IN(conv3(x))))), channel count preserved."""

    def __init__(self, channels: int, *, rng: np.random.Generator) -> None:
        super().__init__()
        self.body = Sequential(
            [
                Conv2d(channels, channels, 3, 1, 1, rng=rng),
                InstanceNorm2d(channels),
                ReLU(),
                Conv2d(channels, channels, 3, 1, 1, rng=rng),
                InstanceNorm2d(channels),
            ]
        )

    def children(self) -> list[tuple[str, Layer]]:
        return [("body", self.body)]

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        out, cache = self.body.forward(x)
        return to_storage(acc(x) + acc(out)), cache

    def backward(self, dy: Tensor, cache: Any, accumulate: bool = True) -> Tensor:
        d_body = self.body.backward(dy, cache, accumulate)
        return to_storage(acc(dy) + acc(d_body))

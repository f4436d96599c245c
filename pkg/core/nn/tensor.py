from __future__ import annotations

from collections.abc import Iterator
from contextlib import contextmanager
from contextvars import ContextVar

import numpy as np
import numpy.typing as npt

from core.errors import NonFiniteTensor

# Network values are float32 ndarrays in row-major (N, C, H, W) layout
Tensor = npt.NDArray[np.floating]

_STORAGE_DTYPE: ContextVar[type[np.floating]] = ContextVar("storage_dtype", default=np.float32)
_CHECK_FINITE: ContextVar[bool | None] = ContextVar("check_finite", default=None)
_COMPONENT: ContextVar[str | None] = ContextVar("loss_component", default=None)


def storage_dtype() -> type[np.floating]:
    return _STORAGE_DTYPE.get()


def to_storage(x: np.ndarray) -> Tensor:
    """Cast an f64 accumulation result back to the active storage dtype."""
    return np.asarray(x, dtype=_STORAGE_DTYPE.get())


def acc(x: np.ndarray) -> npt.NDArray[np.float64]:
    """View `x` in the f64 accumulation dtype."""
    return np.asarray(x, dtype=np.float64)


@contextmanager
def shadow_precision() -> Iterator[None]:
    """Keep every op result in float64 (finite-difference checks)."""
    token = _STORAGE_DTYPE.set(np.float64)
    try:
        yield
    finally:
        _STORAGE_DTYPE.reset(token)


@contextmanager
def finite_checks(enabled: bool) -> Iterator[None]:
    token = _CHECK_FINITE.set(enabled)
    try:
        yield
    finally:
        _CHECK_FINITE.reset(token)


@contextmanager
def loss_component(name: str) -> Iterator[None]:
    """Attribute non-finite values detected inside the block to loss component `name`."""
    token = _COMPONENT.set(name)
    try:
        yield
    finally:
        _COMPONENT.reset(token)


def _finite_checks_enabled() -> bool:
    flag = _CHECK_FINITE.get()
    if flag is not None:
        return flag
    from core.settings import get_settings

    return get_settings().debug_finite


def ensure_finite(x: np.ndarray, op: str) -> np.ndarray:
    if _finite_checks_enabled() and not np.all(np.isfinite(x)):
        component = _COMPONENT.get()
        suffix = f" while computing {component}" if component else ""
        raise NonFiniteTensor(f"{op} produced NaN or infinite values{suffix}", op=op, component=component)
    return x


def normal_init(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02) -> Tensor:
    return rng.normal(0.0, std, size=shape).astype(np.float32)

"""Finite-difference verification of the analytic backward passes.

Every check runs under `shadow_precision()` so forward values used for the
central differences are float64. The error reported for a tensor is
max|analytic - numeric| / max(max|analytic|, max|numeric|), which is scale
free and does not blow up on individual near-zero entries.
"""

from __future__ import annotations

import logging
from collections.abc import Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, computed_field

from .layers import Conv2d, ConvTranspose2d, InstanceNorm2d, Layer, LeakyReLU, ReLU, Sigmoid, Tanh
from .losses import l1_diff, mse_to_constant
from .tensor import acc, shadow_precision

logger = logging.getLogger("mst_core.gradcheck")

DEFAULT_STEP = 1e-3
DEFAULT_TOLERANCE = 1e-3
# inputs of kinked activations are kept at least this far from the kink
KINK_MARGIN = 0.1


class GradCheckReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    max_rel_error: float
    tolerance: float
    errors: dict[str, float] = {}

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error <= self.tolerance


class GradCheckSuiteReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    trials: int
    tolerance: float
    seed: int
    reports: tuple[GradCheckReport, ...]

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def worst(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for r in self.reports:
            out[r.name] = max(out.get(r.name, 0.0), r.max_rel_error)
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = acc(analytic)
    n = acc(numeric)
    if a.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))))
    diff = float(np.max(np.abs(a - n)))
    if scale == 0.0:
        return diff
    return diff / scale


def numeric_gradient(f: Callable[[], float], target: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of `f` with respect to every entry of `target`, perturbed in place."""
    grad = np.zeros(target.shape, dtype=np.float64)
    for idx in np.ndindex(target.shape):
        orig = target[idx]
        target[idx] = orig + step
        f_plus = f()
        target[idx] = orig - step
        f_minus = f()
        target[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * step)
    return grad


def grad_check(
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    point: np.ndarray,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    name: str = "fn",
) -> GradCheckReport:
    """Compare the gradient `fn` reports at `point` with central differences."""
    with shadow_precision():
        x = acc(point).copy()
        _, analytic = fn(x.copy())
        numeric = numeric_gradient(lambda: float(fn(x)[0]), x, step)
    err = relative_error(analytic, numeric)
    return GradCheckReport(name=name, max_rel_error=err, tolerance=tolerance, errors={"input": err})


def check_layer(
    layer: Layer,
    x: np.ndarray,
    rng: np.random.Generator,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    name: str | None = None,
) -> GradCheckReport:
    """Check input and parameter gradients of `layer` against a random linear readout of its output."""
    with shadow_precision():
        layer.cast_parameters(np.float64)
        layer.zero_grad()
        xs = acc(x).copy()
        y, cache = layer.forward(xs)
        readout = rng.normal(size=y.shape)

        def loss() -> float:
            return float(np.sum(acc(layer(xs)) * readout))

        dx = layer.backward(readout, cache, accumulate=True)
        errors = {"input": relative_error(dx, numeric_gradient(loss, xs, step))}
        for pname, p, g in layer.named_parameters():
            errors[pname] = relative_error(g, numeric_gradient(loss, p, step))
    label = name or type(layer).__name__
    return GradCheckReport(name=label, max_rel_error=max(errors.values()), tolerance=tolerance, errors=errors)


def _away_from_kink(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    magnitude = rng.uniform(KINK_MARGIN, 1.0, size=shape)
    return np.where(rng.random(size=shape) < 0.5, -magnitude, magnitude)


def _conv_case(rng: np.random.Generator, step: float, tolerance: float) -> GradCheckReport:
    k = int(rng.integers(1, 5))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, k))
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    h, w = int(rng.integers(k, k + 5)), int(rng.integers(k, k + 5))
    layer = Conv2d(cin, cout, k, stride, padding, rng=rng)
    layer.params["weight"][...] = rng.normal(size=layer.params["weight"].shape)
    layer.params["bias"][...] = rng.normal(size=cout)
    x = rng.normal(size=(int(rng.integers(1, 3)), cin, h, w))
    return check_layer(layer, x, rng, step, tolerance, name="conv2d")


def _conv_transpose_case(rng: np.random.Generator, step: float, tolerance: float) -> GradCheckReport:
    k = int(rng.integers(1, 5))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, (k - 1) // 2 + 1))
    output_padding = int(rng.integers(0, stride))
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    layer = ConvTranspose2d(cin, cout, k, stride, padding, output_padding, rng=rng)
    layer.params["weight"][...] = rng.normal(size=layer.params["weight"].shape)
    layer.params["bias"][...] = rng.normal(size=cout)
    x = rng.normal(size=(int(rng.integers(1, 3)), cin, int(rng.integers(1, 5)), int(rng.integers(1, 5))))
    return check_layer(layer, x, rng, step, tolerance, name="conv2d_transpose")


def _instance_norm_case(rng: np.random.Generator, step: float, tolerance: float) -> GradCheckReport:
    channels = int(rng.integers(1, 4))
    layer = InstanceNorm2d(channels)
    layer.params["scale"][...] = rng.uniform(0.5, 1.5, size=channels)
    layer.params["shift"][...] = rng.normal(size=channels)
    x = rng.normal(size=(int(rng.integers(1, 3)), channels, int(rng.integers(2, 5)), int(rng.integers(2, 5))))
    return check_layer(layer, x, rng, step, tolerance, name="instance_norm")


def _activation_case(
    layer: Layer, name: str, kinked: bool
) -> Callable[[np.random.Generator, float, float], GradCheckReport]:
    def case(rng: np.random.Generator, step: float, tolerance: float) -> GradCheckReport:
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        x = _away_from_kink(rng, shape) if kinked else rng.normal(size=shape)
        return check_layer(layer, x, rng, step, tolerance, name=name)

    return case


def _mse_case(rng: np.random.Generator, step: float, tolerance: float) -> GradCheckReport:
    shape = (int(rng.integers(1, 3)), 1, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    target = float(rng.integers(0, 2))
    return grad_check(
        lambda t: mse_to_constant(t, target), rng.normal(size=shape), step, tolerance, name="mse_to_constant"
    )


def _l1_case(rng: np.random.Generator, step: float, tolerance: float) -> GradCheckReport:
    shape = (int(rng.integers(1, 3)), 1, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    b = rng.normal(size=shape)
    a = b + _away_from_kink(rng, shape)
    report_a = grad_check(lambda t: l1_diff(t, b)[:2], a, step, tolerance, name="l1_diff")
    report_b = grad_check(lambda t: (l1_diff(a, t)[0], l1_diff(a, t)[2]), b, step, tolerance, name="l1_diff")
    errors = {"a": report_a.max_rel_error, "b": report_b.max_rel_error}
    return GradCheckReport(name="l1_diff", max_rel_error=max(errors.values()), tolerance=tolerance, errors=errors)


_CASES: tuple[Callable[[np.random.Generator, float, float], GradCheckReport], ...] = (
    _conv_case,
    _conv_transpose_case,
    _instance_norm_case,
    _activation_case(ReLU(), "relu", kinked=True),
    _activation_case(LeakyReLU(0.2), "leaky_relu", kinked=True),
    _activation_case(Sigmoid(), "sigmoid", kinked=False),
    _activation_case(Tanh(), "tanh", kinked=False),
    _mse_case,
    _l1_case,
)

CHECK_NAMES = (
    "conv2d",
    "conv2d_transpose",
    "instance_norm",
    "relu",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "mse_to_constant",
    "l1_diff",
)


def run_gradcheck_suite(
    trials: int = 20, tolerance: float = DEFAULT_TOLERANCE, seed: int = 0, step: float = DEFAULT_STEP
) -> GradCheckSuiteReport:
    """Run every layer and loss check on `trials` randomised small shapes."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    reports: list[GradCheckReport] = []
    for case in _CASES:
        for _ in range(trials):
            report = case(rng, step, tolerance)
            if not report.passed:
                logger.warning(
                    "gradcheck %s failed: %.3e > %.1e",
                    report.name,
                    report.max_rel_error,
                    tolerance,
                    extra={"component": report.name},
                )
            reports.append(report)
    suite = GradCheckSuiteReport(trials=trials, tolerance=tolerance, seed=seed, reports=tuple(reports))
    logger.info("gradcheck suite finished", extra={"metrics": suite.worst(), "count": len(reports)})
    return suite



"""Numpy tensor core: layers with explicit backward passes, losses, Adam and gradient checks."""

from __future__ import annotations

from .gradcheck import GradCheckReport, GradCheckSuiteReport, check_layer, grad_check, run_gradcheck_suite
from .layers import (
    Conv2d,
    ConvTranspose2d,
    Identity,
    InstanceNorm2d,
    Layer,
    LeakyReLU,
    ReLU,
    ResidualBlock,
    Sequential,
    Sigmoid,
    Tanh,
)
from .losses import l1_diff, mse_to_constant
from .optim import AdamState, adam_step
from .tensor import Tensor, finite_checks, loss_component, shadow_precision

__all__ = [
    "AdamState",
    "Conv2d",
    "ConvTranspose2d",
    "GradCheckReport",
    "GradCheckSuiteReport",
    "Identity",
    "InstanceNorm2d",
    "Layer",
    "LeakyReLU",
    "ReLU",
    "ResidualBlock",
    "Sequential",
    "Sigmoid",
    "Tanh",
    "Tensor",
    "adam_step",
    "check_layer",
    "finite_checks",
    "grad_check",
    "l1_diff",
    "loss_component",
    "mse_to_constant",
    "run_gradcheck_suite",
    "shadow_precision",
]

"""Sentiment-transfer CycleGAN: networks, loss terms and inference.

Domain A is negative valence, B positive. Besides the two domain
discriminators, `d_a_m` and `d_b_m` compare generated phrases against the
mixed pool M (both classes joined) so transfers stay inside the space of
plausible music. All adversarial terms use least squares.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict

from core.errors import ShapeMismatch
from core.models.roll import PianoRollPhrase
from core.models.training import TrainingConfig
from core.nn import (
    AdamState,
    Conv2d,
    ConvTranspose2d,
    InstanceNorm2d,
    Layer,
    LeakyReLU,
    ReLU,
    ResidualBlock,
    Sequential,
    Sigmoid,
    adam_step,
    l1_diff,
    mse_to_constant,
)
from core.nn.tensor import Tensor, acc, loss_component, to_storage
from core.schema import DISCRIMINATOR_NAMES, GENERATOR_NAMES, NETWORK_NAMES

from .pianoroll import binarize

logger = logging.getLogger("mst_core.cyclegan")


class Direction(str, Enum):
    A_TO_B = "a2b"
    B_TO_A = "b2a"

    @property
    def reverse(self) -> Direction:
        return Direction.B_TO_A if self is Direction.A_TO_B else Direction.A_TO_B


class Generator(Sequential):
    """(N, 1, H, W) -> (N, 1, H, W) in (0, 1)."""


class Discriminator(Sequential):
    """(N, 1, H, W) -> (N, 1, H/8, W/8) patch scores, no output nonlinearity."""


def build_generator(base_filters: int, residual_blocks: int, rng: np.random.Generator) -> Generator:
    f = base_filters
    layers: list[Layer] = [
        Conv2d(1, f, 7, 1, 3, rng=rng),
        InstanceNorm2d(f),
        ReLU(),
        Conv2d(f, 2 * f, 3, 2, 1, rng=rng),
        InstanceNorm2d(2 * f),
        ReLU(),
        Conv2d(2 * f, 4 * f, 3, 2, 1, rng=rng),
        InstanceNorm2d(4 * f),
        ReLU(),
    ]
    layers.extend(ResidualBlock(4 * f, rng=rng) for _ in range(residual_blocks))
    layers.extend(
        [
            ConvTranspose2d(4 * f, 2 * f, 3, 2, 1, 1, rng=rng),
            InstanceNorm2d(2 * f),
            ReLU(),
            ConvTranspose2d(2 * f, f, 3, 2, 1, 1, rng=rng),
            InstanceNorm2d(f),
            ReLU(),
            Conv2d(f, 1, 7, 1, 3, rng=rng),
            Sigmoid(),
        ]
    )
    return Generator(layers)


def build_discriminator(base_filters: int, rng: np.random.Generator) -> Discriminator:
    f = base_filters
    return Discriminator(
        [
            Conv2d(1, f, 4, 2, 1, rng=rng),
            LeakyReLU(0.2),
            Conv2d(f, 2 * f, 4, 2, 1, rng=rng),
            InstanceNorm2d(2 * f),
            LeakyReLU(0.2),
            Conv2d(2 * f, 4 * f, 4, 2, 1, rng=rng),
            InstanceNorm2d(4 * f),
            LeakyReLU(0.2),
            Conv2d(4 * f, 1, 3, 1, 1, rng=rng),
        ]
    )


class CycleGanModel:
    """The six networks plus one Adam state per network.

    Generators and discriminators are plain `Layer`s, so tests can swap in
    stubs such as `Identity`.
    """

    def __init__(
        self,
        g_ab: Layer,
        g_ba: Layer,
        d_a: Layer,
        d_b: Layer,
        d_a_m: Layer,
        d_b_m: Layer,
        config: TrainingConfig | None = None,
    ) -> None:
        self.config = config or TrainingConfig()
        self.epochs_trained = 0
        self.g_ab = g_ab
        self.g_ba = g_ba
        self.d_a = d_a
        self.d_b = d_b
        self.d_a_m = d_a_m
        self.d_b_m = d_b_m
        self.optimizers: dict[str, AdamState] = {
            name: AdamState(self.config.lr, self.config.beta1, self.config.beta2) for name in NETWORK_NAMES
        }

    def network(self, name: str) -> Layer:
        if name not in NETWORK_NAMES:
            raise KeyError(name)
        layer: Layer = getattr(self, name)
        return layer

    def networks(self) -> dict[str, Layer]:
        return {name: self.network(name) for name in NETWORK_NAMES}

    def generator(self, direction: Direction) -> Layer:
        return self.g_ab if direction is Direction.A_TO_B else self.g_ba

    def zero_grad(self, names: Iterable[str] = NETWORK_NAMES) -> None:
        for name in names:
            self.network(name).zero_grad()

    def step(self, names: Iterable[str]) -> None:
        for name in names:
            net = self.network(name)
            adam_step(net.parameter_dict(), net.gradient_dict(), self.optimizers[name])


def build_model(cfg: TrainingConfig, rng: np.random.Generator) -> CycleGanModel:
    f, r = cfg.base_filters, cfg.residual_blocks
    model = CycleGanModel(
        g_ab=build_generator(f, r, rng),
        g_ba=build_generator(f, r, rng),
        d_a=build_discriminator(f, rng),
        d_b=build_discriminator(f, rng),
        d_a_m=build_discriminator(f, rng),
        d_b_m=build_discriminator(f, rng),
        config=cfg,
    )
    logger.debug("built model", extra={"metrics": cfg.architecture()})
    return model


class LossResult(BaseModel):
    """Scalar loss components of one step; gradients live on the networks."""

    model_config = ConfigDict(frozen=True)

    components: dict[str, float]

    @property
    def total(self) -> float:
        key = "g_total" if "g_total" in self.components else "d_total"
        return self.components[key]


def _check_batches(*batches: np.ndarray) -> None:
    first = batches[0]
    if first.ndim != 4 or first.shape[1] != 1:
        raise ShapeMismatch(f"expected (N, 1, H, W) batch, got {first.shape}")
    for other in batches[1:]:
        if other.shape[1:] != first.shape[1:] or other.shape[0] != first.shape[0]:
            raise ShapeMismatch(f"batch shapes differ: {first.shape} vs {other.shape}")


def _noisy(x: Tensor, std: float, rng: np.random.Generator | None) -> Tensor:
    if std <= 0.0 or rng is None:
        return x
    return to_storage(acc(x) + rng.normal(0.0, std, size=x.shape))


def generator_losses(
    model: CycleGanModel,
    batch_a: Tensor,
    batch_b: Tensor,
    lam: float,
    gamma: float,
    *,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> LossResult:
    """Generator objective; replaces the gradients of both generators.

    Discriminator parameters receive no gradient: discriminators are only
    backpropagated to their inputs.
    """
    _check_batches(batch_a, batch_b)
    model.zero_grad(GENERATOR_NAMES)

    with loss_component("g_adv_ab"):
        fake_b, c_fake_b = model.g_ab.forward(batch_a)
        score_b, c_score_b = model.d_b.forward(_noisy(fake_b, noise_std, rng))
        adv_ab, g_score_b = mse_to_constant(score_b, 1.0)
    with loss_component("g_adv_ba"):
        fake_a, c_fake_a = model.g_ba.forward(batch_b)
        score_a, c_score_a = model.d_a.forward(_noisy(fake_a, noise_std, rng))
        adv_ba, g_score_a = mse_to_constant(score_a, 1.0)
    with loss_component("cycle_a"):
        rec_a, c_rec_a = model.g_ba.forward(fake_b)
        cyc_a, g_rec_a, _ = l1_diff(rec_a, batch_a)
    with loss_component("cycle_b"):
        rec_b, c_rec_b = model.g_ab.forward(fake_a)
        cyc_b, g_rec_b, _ = l1_diff(rec_b, batch_b)
    with loss_component("g_mixed_ab"):
        score_bm, c_score_bm = model.d_b_m.forward(_noisy(fake_b, noise_std, rng))
        mix_ab, g_score_bm = mse_to_constant(score_bm, 1.0)
    with loss_component("g_mixed_ba"):
        score_am, c_score_am = model.d_a_m.forward(_noisy(fake_a, noise_std, rng))
        mix_ba, g_score_am = mse_to_constant(score_am, 1.0)

    with loss_component("g_total"):
        # gradient w.r.t. fake_b: adversarial + mixed + cycle path through g_ba
        d_fake_b = acc(model.d_b.backward(g_score_b, c_score_b, accumulate=False))
        d_fake_a = acc(model.d_a.backward(g_score_a, c_score_a, accumulate=False))
        if gamma != 0.0:
            d_fake_b += gamma * acc(model.d_b_m.backward(g_score_bm, c_score_bm, accumulate=False))
            d_fake_a += gamma * acc(model.d_a_m.backward(g_score_am, c_score_am, accumulate=False))
        if lam != 0.0:
            d_fake_b += acc(model.g_ba.backward(to_storage(lam * acc(g_rec_a)), c_rec_a))
            d_fake_a += acc(model.g_ab.backward(to_storage(lam * acc(g_rec_b)), c_rec_b))
        model.g_ab.backward(to_storage(d_fake_b), c_fake_b)
        model.g_ba.backward(to_storage(d_fake_a), c_fake_a)

    total = adv_ab + adv_ba + lam * (cyc_a + cyc_b) + gamma * (mix_ab + mix_ba)
    return LossResult(
        components={
            "g_adv_ab": adv_ab,
            "g_adv_ba": adv_ba,
            "cycle_a": cyc_a,
            "cycle_b": cyc_b,
            "g_mixed_ab": mix_ab,
            "g_mixed_ba": mix_ba,
            "g_total": total,
        }
    )


def _least_squares_critic(
    disc: Layer, real: Tensor, fake: Tensor, weight: float, noise_std: float, rng: np.random.Generator | None
) -> float:
    """½[(D(real) - 1)² + D(fake)²], accumulating `weight` times its gradient into `disc`."""
    real_score, c_real = disc.forward(_noisy(real, noise_std, rng))
    real_term, g_real = mse_to_constant(real_score, 1.0)
    fake_score, c_fake = disc.forward(_noisy(fake, noise_std, rng))
    fake_term, g_fake = mse_to_constant(fake_score, 0.0)
    if weight != 0.0:
        disc.backward(to_storage(0.5 * weight * acc(g_real)), c_real)
        disc.backward(to_storage(0.5 * weight * acc(g_fake)), c_fake)
    return 0.5 * (real_term + fake_term)


def discriminator_losses(
    model: CycleGanModel,
    batch_a: Tensor,
    batch_b: Tensor,
    batch_m: Tensor,
    gamma: float,
    *,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> LossResult:
    """Discriminator objective; replaces the gradients of the four discriminators.

    Fakes come from a plain generator forward and are never backpropagated.
    """
    _check_batches(batch_a, batch_b, batch_m)
    model.zero_grad(DISCRIMINATOR_NAMES)

    with loss_component("d_a"):
        fake_a = model.g_ba(batch_b)
        d_a = _least_squares_critic(model.d_a, batch_a, fake_a, 1.0, noise_std, rng)
    with loss_component("d_b"):
        fake_b = model.g_ab(batch_a)
        d_b = _least_squares_critic(model.d_b, batch_b, fake_b, 1.0, noise_std, rng)
    with loss_component("d_a_m"):
        d_a_m = _least_squares_critic(model.d_a_m, batch_m, fake_a, gamma, noise_std, rng)
    with loss_component("d_b_m"):
        d_b_m = _least_squares_critic(model.d_b_m, batch_m, fake_b, gamma, noise_std, rng)
    return LossResult(
        components={
            "d_a": d_a,
            "d_b": d_b,
            "d_a_m": d_a_m,
            "d_b_m": d_b_m,
            "d_total": d_a + d_b + gamma * (d_a_m + d_b_m),
        }
    )


def transfer(model: CycleGanModel, phrase: PianoRollPhrase, direction: Direction) -> PianoRollPhrase:
    if not isinstance(phrase, PianoRollPhrase):
        raise ShapeMismatch(f"expected a PianoRollPhrase, got {type(phrase).__name__}")
    return binarize(model.generator(direction)(phrase.to_tensor()))


def transfer_many(
    model: CycleGanModel, phrases: Sequence[PianoRollPhrase], direction: Direction, batch_size: int = 16
) -> list[PianoRollPhrase]:
    """`transfer` over many phrases, `batch_size` at a time."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    gen = model.generator(direction)
    out: list[PianoRollPhrase] = []
    for start in range(0, len(phrases), batch_size):
        chunk = phrases[start : start + batch_size]
        batch = np.concatenate([p.to_tensor() for p in chunk], axis=0)
        y = gen(batch)
        out.extend(binarize(y[i]) for i in range(len(chunk)))
    return out


def cycle(model: CycleGanModel, phrase: PianoRollPhrase, direction: Direction) -> PianoRollPhrase:
    """Reconstruction through both generators (A→B→A for `a2b`), binarized once at the end."""
    forward = model.generator(direction)
    backward = model.generator(direction.reverse)
    return binarize(backward(forward(phrase.to_tensor())))

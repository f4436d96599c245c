from __future__ import annotations

from typing import Annotated, Any

from pydantic import BaseModel, ConfigDict, Field

from core.utils.keyvalue import format_key_values

# Fields that fix parameter shapes; a checkpoint only loads into a model built with the same values
ARCHITECTURE_FIELDS = ("residual_blocks", "base_filters")


class TrainingConfig(BaseModel):
    """Hyperparameters of one training run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: Annotated[int, Field(ge=1)] = 150
    batch_size: Annotated[int, Field(ge=1)] = 16
    lambda_cycle: Annotated[float, Field(ge=0.0, allow_inf_nan=False)] = 10.0
    gamma_mixed: Annotated[float, Field(ge=0.0, allow_inf_nan=False)] = 1.0
    lr: Annotated[float, Field(gt=0.0, allow_inf_nan=False)] = 2e-4
    beta1: Annotated[float, Field(ge=0.0, lt=1.0)] = 0.5
    beta2: Annotated[float, Field(ge=0.0, lt=1.0)] = 0.999
    seed: Annotated[int, Field(ge=0, le=2**64 - 1)] = 0
    checkpoint_every: Annotated[int, Field(ge=1)] = 10
    residual_blocks: Annotated[int, Field(ge=0)] = 6
    base_filters: Annotated[int, Field(ge=1)] = 64
    convergence_window: Annotated[int, Field(ge=1)] = 10
    convergence_tolerance: Annotated[float, Field(ge=0.0, allow_inf_nan=False)] = 1e-4
    prefetch: Annotated[int, Field(ge=1)] = 2
    # std of Gaussian noise on discriminator inputs during training; 0 disables
    discriminator_noise: Annotated[float, Field(ge=0.0, allow_inf_nan=False)] = 0.0

    def to_text(self, **extra: Any) -> str:
        return format_key_values({**self.model_dump(), **extra})

    def architecture(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in ARCHITECTURE_FIELDS}


class HistoryRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    epoch: int
    batch: int
    losses: dict[str, float]

from __future__ import annotations

import csv
import logging
import math
import queue
import threading
from collections.abc import Callable, Iterator, Sequence
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict

from core.errors import EmptyDataset, IoFailure, NonFiniteLoss, NonFiniteTensor, TrainingError
from core.models.dataset import LabeledDataset
from core.models.roll import PianoRollPhrase
from core.models.training import HistoryRow, TrainingConfig
from core.schema import DISCRIMINATOR_NAMES, GENERATOR_NAMES, LOSS_COMPONENTS_D, LOSS_COMPONENTS_G

from .checkpoint import save_checkpoint
from .cyclegan import CycleGanModel, LossResult, discriminator_losses, generator_losses

logger = logging.getLogger("mst_core.training")

HISTORY_COLUMNS = ("epoch", "batch", *LOSS_COMPONENTS_D, *LOSS_COMPONENTS_G)
LATEST_CHECKPOINT = "latest.mstc"

# (epoch, batch, loss components) after every optimizer step pair
ProgressSink = Callable[[int, int, dict[str, float]], None]

_Batch = tuple[int, np.ndarray, np.ndarray, np.ndarray]


class TrainingResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: CycleGanModel
    history: list[HistoryRow]
    stopped_early: bool
    epochs_run: int


def checkpoint_name(epoch: int) -> str:
    return f"checkpoint_epoch_{epoch:04d}.mstc"


def _stack(phrases: Sequence[PianoRollPhrase]) -> np.ndarray:
    return np.concatenate([p.to_tensor() for p in phrases], axis=0)


def epoch_batches(
    domain_a: np.ndarray, domain_b: np.ndarray, mixed: np.ndarray, batch_size: int, rng: np.random.Generator
) -> Iterator[_Batch]:
    """Shuffled (index, a, b, m) batches for one epoch; the last batch may be short.

    Mixed-pool rows are drawn from a fresh permutation of M, wrapping if M is
    smaller than the domains.
    """
    n = len(domain_a)
    perm_a = rng.permutation(n)
    perm_b = rng.permutation(n)
    perm_m = np.resize(rng.permutation(len(mixed)), n)
    for index, start in enumerate(range(0, n, batch_size)):
        stop = min(start + batch_size, n)
        yield index, domain_a[perm_a[start:stop]], domain_b[perm_b[start:stop]], mixed[perm_m[start:stop]]


class _BatchProducer(threading.Thread):
    """Runs `epoch_batches` ahead of the training step through a bounded queue."""

    _DONE = object()

    def __init__(self, batches: Iterator[_Batch], depth: int) -> None:
        super().__init__(name="mst-batch-producer", daemon=True)
        self._batches = batches
        self._queue: queue.Queue[object] = queue.Queue(maxsize=depth)
        self._halt = threading.Event()

    def run(self) -> None:
        try:
            for item in self._batches:
                if not self._put(item):
                    return
        except BaseException as exc:  # handed to the consumer
            self._put(exc)
            return
        self._put(self._DONE)

    def _put(self, item: object) -> bool:
        while not self._halt.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def __iter__(self) -> Iterator[_Batch]:
        while True:
            item = self._queue.get()
            if item is self._DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item  # type: ignore[misc]

    def close(self) -> None:
        self._halt.set()
        self.join(timeout=5)


def _first_non_finite(result: LossResult, order: Sequence[str]) -> tuple[str, float] | None:
    for name in order:
        value = result.components[name]
        if not math.isfinite(value):
            return name, value
    return None


def _run_step(
    model: CycleGanModel,
    cfg: TrainingConfig,
    batch: _Batch,
    epoch: int,
    noise_rng: np.random.Generator,
) -> dict[str, float]:
    index, xa, xb, xm = batch
    try:
        d = discriminator_losses(
            model, xa, xb, xm, cfg.gamma_mixed, noise_std=cfg.discriminator_noise, rng=noise_rng
        )
    except NonFiniteTensor as exc:
        raise NonFiniteLoss(
            exc.component or "d_total", epoch=epoch, batch=index, value=float("nan"), op=exc.op
        ) from exc
    bad = _first_non_finite(d, LOSS_COMPONENTS_D)
    if bad:
        raise NonFiniteLoss(bad[0], epoch=epoch, batch=index, value=bad[1])
    model.step(DISCRIMINATOR_NAMES)

    try:
        g = generator_losses(
            model, xa, xb, cfg.lambda_cycle, cfg.gamma_mixed, noise_std=cfg.discriminator_noise, rng=noise_rng
        )
    except NonFiniteTensor as exc:
        raise NonFiniteLoss(
            exc.component or "g_total", epoch=epoch, batch=index, value=float("nan"), op=exc.op
        ) from exc
    bad = _first_non_finite(g, LOSS_COMPONENTS_G)
    if bad:
        raise NonFiniteLoss(bad[0], epoch=epoch, batch=index, value=bad[1])
    model.step(GENERATOR_NAMES)
    return {**d.components, **g.components}


def converged(epoch_losses: Sequence[float], window: int, tolerance: float) -> bool:
    """True once the moving average of the last `window` epoch losses moved by less than `tolerance` (relative)."""
    if len(epoch_losses) < window + 1:
        return False
    current = float(np.mean(epoch_losses[-window:]))
    previous = float(np.mean(epoch_losses[-window - 1 : -1]))
    if previous == 0.0:
        return current == 0.0
    return abs(current - previous) / abs(previous) < tolerance


def _write_checkpoints(model: CycleGanModel, cfg: TrainingConfig, out_dir: Path, epoch: int) -> None:
    save_checkpoint(model, cfg, out_dir / checkpoint_name(epoch), epoch)
    save_checkpoint(model, cfg, out_dir / LATEST_CHECKPOINT, epoch)


def train(
    model: CycleGanModel,
    dataset: LabeledDataset,
    cfg: TrainingConfig,
    progress: ProgressSink | None = None,
    checkpoint_dir: str | Path | None = None,
    start_epoch: int = 0,
) -> TrainingResult:
    """Alternate discriminator and generator steps over the dataset.

    Epoch `e` shuffles with a generator seeded from (cfg.seed, e), so a run
    resumed at `start_epoch` follows the same batches as an uninterrupted one.
    """
    if not dataset.negative or not dataset.positive or not dataset.mixed_pool:
        raise EmptyDataset(
            f"need phrases in both classes and the mixed pool, got {len(dataset.negative)}/"
            f"{len(dataset.positive)}/{len(dataset.mixed_pool)}"
        )
    if not dataset.is_balanced:
        raise TrainingError(f"dataset is not balanced: {len(dataset.negative)} vs {len(dataset.positive)}")
    if not 0 <= start_epoch <= cfg.epochs:
        raise TrainingError(f"start epoch {start_epoch} outside [0, {cfg.epochs}]")

    out_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot create checkpoint directory {out_dir}: {exc}") from exc

    domain_a = _stack([p.phrase for p in dataset.negative])
    domain_b = _stack([p.phrase for p in dataset.positive])
    mixed = _stack(dataset.mixed_pool)

    history: list[HistoryRow] = []
    epoch_losses: list[float] = []
    stopped_early = False
    last_saved = -1
    epoch = start_epoch
    logger.info(
        "training started",
        extra={
            "metrics": {
                "epochs": cfg.epochs,
                "lambda_cycle": cfg.lambda_cycle,
                "gamma_mixed": cfg.gamma_mixed,
                "samples_per_domain": len(domain_a),
            }
        },
    )
    while epoch < cfg.epochs:
        data_rng = np.random.default_rng([cfg.seed, epoch, 0])
        noise_rng = np.random.default_rng([cfg.seed, epoch, 1])
        producer = _BatchProducer(epoch_batches(domain_a, domain_b, mixed, cfg.batch_size, data_rng), cfg.prefetch)
        producer.start()
        g_totals: list[float] = []
        try:
            for batch in producer:
                losses = _run_step(model, cfg, batch, epoch, noise_rng)
                history.append(HistoryRow(epoch=epoch, batch=batch[0], losses=losses))
                g_totals.append(losses["g_total"])
                if progress is not None:
                    progress(epoch, batch[0], losses)
        finally:
            producer.close()
        epoch += 1
        model.epochs_trained = epoch
        epoch_losses.append(float(np.mean(g_totals)))
        logger.info(
            "epoch finished",
            extra={"epoch": epoch, "metrics": {"g_total": epoch_losses[-1], "batches": len(g_totals)}},
        )
        if out_dir is not None and epoch % cfg.checkpoint_every == 0:
            _write_checkpoints(model, cfg, out_dir, epoch)
            last_saved = epoch
        if converged(epoch_losses, cfg.convergence_window, cfg.convergence_tolerance):
            stopped_early = epoch < cfg.epochs
            if stopped_early:
                logger.info("generator loss converged; stopping early", extra={"epoch": epoch})
            break

    if out_dir is not None and last_saved != epoch:
        _write_checkpoints(model, cfg, out_dir, epoch)
    return TrainingResult(model=model, history=history, stopped_early=stopped_early, epochs_run=epoch - start_epoch)


def write_history_csv(history: Sequence[HistoryRow], path: str | Path, *, append: bool = False) -> Path:
    """One row per batch: epoch, batch and every loss component.

    With `append`, rows are added to an existing file and the header is not repeated.
    """
    target = Path(path)
    appending = append and target.exists()
    try:
        with target.open("a" if appending else "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if not appending:
                writer.writerow(HISTORY_COLUMNS)
            for row in history:
                writer.writerow([row.epoch, row.batch, *(repr(row.losses[c]) for c in HISTORY_COLUMNS[2:])])
    except OSError as exc:
        raise IoFailure(f"cannot write history {target}: {exc}") from exc
    return target

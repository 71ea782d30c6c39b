"""Training loop with early stopping, evaluation and checkpoint round trips."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from sati.errors import ContractError, DivergenceError
from sati.numcore.optim import Adam
from sati.numcore.tensor import Tape, backward, no_grad
from sati.schemas import EpochRecord, MetricsReport, Sample, TotalLossBreakdown, TrainConfig, TrainResult
from sati.services.data import Batch, SampleArrays, input_dims, iterate_batches, split_indices, to_arrays
from sati.services.metrics import compute_metrics
from sati.services.model import SatiModel
from sati.utils.logging_utils import get_logger, logging_context

logger = get_logger("sati.services.training")

_SHUFFLE_STREAM = 3
_DROPOUT_STREAM = 4


@dataclass(slots=True)
class TrainOutcome:
    model: SatiModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def mean_breakdown(parts: Sequence[TotalLossBreakdown]) -> TotalLossBreakdown:
    first = parts[0]
    return TotalLossBreakdown(
        task=math.fsum(p.task for p in parts) / len(parts),
        con=math.fsum(p.con for p in parts) / len(parts),
        ti=math.fsum(p.ti for p in parts) / len(parts),
        dom=math.fsum(p.dom for p in parts) / len(parts),
        alpha_w=first.alpha_w,
        beta=first.beta,
        gamma=first.gamma,
    )


def _check_finite(breakdown: TotalLossBreakdown, epoch: int, step: int) -> None:
    for component, value in breakdown.components().items():
        if not math.isfinite(value):
            raise DivergenceError(component, value, epoch=epoch, step=step)
    if not math.isfinite(breakdown.total):
        raise DivergenceError("total", breakdown.total, epoch=epoch, step=step)


def train_step(
    model: SatiModel,
    optimizer: Adam,
    batch: Batch,
    rng: Optional[np.random.Generator],
    *,
    epoch: int,
    step: int,
) -> TotalLossBreakdown:
    with Tape() as tape:
        out = model.forward(batch, rng=rng)
        loss, breakdown = model.loss(out, batch)
    _check_finite(breakdown, epoch, step)
    grads = backward(tape, loss)
    optimizer.step({name: grads[tensor] for name, tensor in model.registry.items() if tensor in grads})
    return breakdown


def evaluate(
    model: SatiModel,
    items: Sequence[SampleArrays],
    *,
    batch_size: Optional[int] = None,
    echo_config: bool = False,
) -> MetricsReport:
    """Metrics and mean loss breakdown of ``model`` on ``items`` with frozen parameters."""

    if not items:
        raise ContractError("cannot evaluate an empty dataset")
    started = time.perf_counter()
    size = batch_size or model.config.batch_size
    predictions, labels, breakdowns = [], [], []
    for batch in iterate_batches(items, size, model.config.encoder.max_len):
        with no_grad():
            out = model.forward(batch)
            _, breakdown = model.loss(out, batch)
        predictions.append(model.to_scores(out.prediction.data))
        labels.append(batch.labels)
        breakdowns.append(breakdown)
    return compute_metrics(
        np.concatenate(predictions),
        np.concatenate(labels),
        loss=mean_breakdown(breakdowns),
        config=model.config.model_dump(mode="json") if echo_config else None,
        wall_clock_s=time.perf_counter() - started,
    )


def train_model(
    config: TrainConfig,
    train_items: Sequence[SampleArrays],
    val_items: Sequence[SampleArrays] = (),
) -> TrainOutcome:
    """Mini-batch Adam on the composite objective; fully determined by ``(config, data)``.

    With validation data, the parameters with the best validation MAE are kept and
    training stops after ``config.patience`` epochs without improvement.
    """

    if not train_items:
        raise ContractError("cannot train on an empty dataset")
    model = SatiModel(config, input_dims(train_items))
    frozen = ("discriminator",) if config.no_al else ()
    optimizer = Adam(model.registry, lr=config.lr, frozen=frozen)
    dropout_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _DROPOUT_STREAM]))
    outcome = TrainOutcome(model=model)
    best_mae, best_state, stale = math.inf, None, 0

    for epoch in range(1, config.epochs + 1):
        with logging_context(epoch=epoch):
            shuffle = np.random.default_rng(np.random.SeedSequence([config.seed, _SHUFFLE_STREAM, epoch]))
            breakdowns = [
                train_step(model, optimizer, batch, dropout_rng if config.dropout > 0 else None, epoch=epoch, step=step)
                for step, batch in enumerate(
                    iterate_batches(train_items, config.batch_size, config.encoder.max_len, shuffle)
                )
            ]
            epoch_loss = mean_breakdown(breakdowns)
            val = evaluate(model, val_items) if val_items else None
            outcome.history.append(EpochRecord(epoch=epoch, train_loss=epoch_loss, val=val))
            logger.info(
                "Epoch finished",
                extra={"context": {**epoch_loss.components(), "total": epoch_loss.total, "val_mae": val and val.mae}},
            )

        if val is None:
            outcome.best_epoch = epoch
            continue
        if val.mae < best_mae:
            best_mae, best_state, stale = val.mae, model.registry.snapshot(), 0
            outcome.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                outcome.stopped_early = True
                logger.info("Early stopping", extra={"context": {"epoch": epoch, "best_epoch": outcome.best_epoch}})
                break

    if best_state is not None:
        model.registry.restore(best_state)
    return outcome


def train(config: TrainConfig, samples: Sequence[Sample], checkpoint_path: Path | str) -> TrainResult:
    """Split ``samples`` 70/15/15, train, score the test split and write a checkpoint."""

    started = time.perf_counter()
    items = to_arrays(samples)
    train_idx, val_idx, test_idx = split_indices(len(items), config.seed)
    with logging_context(run="train", seed=config.seed):
        logger.info(
            "Training started",
            extra={"context": {"train": len(train_idx), "val": len(val_idx), "test": len(test_idx)}},
        )
        outcome = train_model(config, [items[i] for i in train_idx], [items[i] for i in val_idx])
        test = evaluate(outcome.model, [items[i] for i in test_idx], echo_config=True)
        path = outcome.model.save(checkpoint_path, best_epoch=outcome.best_epoch)
        logger.info("Training finished", extra={"context": {"test_mae": test.mae, "acc2": test.acc2_nonneg}})
    return TrainResult(
        checkpoint=str(path),
        best_epoch=outcome.best_epoch,
        stopped_early=outcome.stopped_early,
        history=outcome.history,
        test=test,
        config=outcome.model.config.model_dump(mode="json"),
        wall_clock_s=time.perf_counter() - started,
    )


def evaluate_checkpoint(path: Path | str, samples: Sequence[Sample]) -> MetricsReport:
    """Rebuild the model stored at ``path`` and evaluate it on ``samples``."""

    model, _ = SatiModel.from_checkpoint(path)
    return evaluate(model, to_arrays(samples), echo_config=True)

"""Ablation and noise-robustness protocols with tabular summaries."""
from __future__ import annotations

import time
from typing import Any, Iterable, Literal, Optional, Sequence

import pandas as pd

from sati.schemas import (
    MODALITIES,
    AblationReport,
    AblationRow,
    AblationStrategy,
    MetricsReport,
    NoiseReport,
    Sample,
    TrainConfig,
)
from sati.services.data import add_noise, noise_difference_variance, split_indices, to_arrays
from sati.services.training import evaluate, train_model
from sati.utils.logging_utils import get_logger, logging_context

logger = get_logger("sati.services.experiments")

STRATEGIES: tuple[tuple[AblationStrategy, str], ...] = (
    ("full", "SATI"),
    ("no_til", "w/o TIL"),
    ("no_gm", "w/o GM"),
    ("no_al", "w/o AL"),
)
ABLATION_FLAGS = ("no_til", "no_gm", "no_al")
METRIC_COLUMNS = ("acc2_nonneg", "acc2_pos", "f1_nonneg", "f1_pos", "acc7", "mae", "corr")


def strategy_config(config: TrainConfig, strategy: AblationStrategy) -> TrainConfig:
    """``config`` with every ablation flag cleared except the one ``strategy`` names."""

    data = config.model_dump()
    for flag in ABLATION_FLAGS:
        data[flag] = flag == strategy
    data["fusion"]["gating"] = True
    return TrainConfig.model_validate(data)


def _records(frame: pd.DataFrame) -> list[dict[str, Any]]:
    return frame.astype(object).where(frame.notna(), None).to_dict(orient="records")


def ablation_table(rows: Sequence[AblationRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"strategy": row.label, **{column: row.metrics.metric_values()[column] for column in METRIC_COLUMNS}}
            for row in rows
        ]
    )


def ablate(config: TrainConfig, samples: Sequence[Sample]) -> AblationReport:
    """Train the full model and each single-component ablation on identical splits and seeds."""

    started = time.perf_counter()
    items = to_arrays(samples)
    train_idx, val_idx, test_idx = split_indices(len(items), config.seed)
    train_items = [items[i] for i in train_idx]
    val_items = [items[i] for i in val_idx]
    test_items = [items[i] for i in test_idx]

    rows = []
    for strategy, label in STRATEGIES:
        run_config = strategy_config(config, strategy)
        with logging_context(run="ablate", strategy=strategy):
            outcome = train_model(run_config, train_items, val_items)
            metrics = evaluate(outcome.model, test_items)
            logger.info("Ablation run finished", extra={"context": {"mae": metrics.mae, "acc2": metrics.acc2_nonneg}})
        rows.append(
            AblationRow(
                strategy=strategy,
                label=label,
                beta=run_config.beta,
                gamma=run_config.gamma,
                gating=run_config.fusion.gating,
                metrics=metrics,
            )
        )
    return AblationReport(
        rows=rows,
        table=_records(ablation_table(rows)),
        wall_clock_s=time.perf_counter() - started,
    )


def metric_deltas(clean: MetricsReport, noisy: MetricsReport) -> dict[str, Optional[float]]:
    """Signed ``noisy - clean`` per metric; ``None`` where either side is undefined."""

    before, after = clean.metric_values(), noisy.metric_values()
    return {
        name: None if before[name] is None or after[name] is None else after[name] - before[name]
        for name in METRIC_COLUMNS
    }


def noise_table(clean: MetricsReport, noisy: MetricsReport, delta: dict[str, Optional[float]]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"condition": "clean", **clean.metric_values()},
            {"condition": "noisy", **noisy.metric_values()},
            {"condition": "delta", **delta},
        ]
    )


def noise_experiment(
    config: TrainConfig,
    samples: Sequence[Sample],
    variance: float,
    *,
    reading: Literal["variance", "std"] = "variance",
    modalities: Iterable[str] = MODALITIES,
) -> NoiseReport:
    """Train once on clean data, then score the clean and the noise-injected test split."""

    started = time.perf_counter()
    selected = list(modalities)
    items = to_arrays(samples)
    train_idx, val_idx, test_idx = split_indices(len(items), config.seed)
    test_samples = [samples[i] for i in test_idx]
    noisy_samples = add_noise(test_samples, variance, seed=config.seed, modalities=selected, reading=reading)

    with logging_context(run="noise", variance=variance, reading=reading):
        outcome = train_model(config, [items[i] for i in train_idx], [items[i] for i in val_idx])
        clean = evaluate(outcome.model, [items[i] for i in test_idx])
        noisy = evaluate(outcome.model, to_arrays(noisy_samples))
        empirical = noise_difference_variance(test_samples, noisy_samples, selected)
        logger.info("Noise run finished", extra={"context": {"empirical_variance": empirical}})

    delta = metric_deltas(clean, noisy)
    return NoiseReport(
        variance=variance,
        reading=reading,
        modalities=selected,
        empirical_variance=empirical,
        clean=clean,
        noisy=noisy,
        delta=delta,
        table=_records(noise_table(clean, noisy, delta)),
        wall_clock_s=time.perf_counter() - started,
    )

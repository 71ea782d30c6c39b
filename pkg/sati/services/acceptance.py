"""Desk-scale acceptance runs: learning, disentanglement and temporal-invariance targets."""
from __future__ import annotations

import time
from typing import Sequence

from sati.errors import ConfigurationError
from sati.schemas import AcceptanceReport, AcceptanceRun, Sample, TrainConfig
from sati.services import probes
from sati.services.data import SampleArrays, split_indices, to_arrays
from sati.services.training import evaluate, train_model
from sati.utils.logging_utils import get_logger, logging_context

logger = get_logger("sati.services.acceptance")

ACC2_TARGET = 0.90
SPECIFIC_PROBE_TARGET = 0.90
INVARIANT_PROBE_TARGET = 0.60
JSD_REDUCTION_TARGET = 0.30


def run_variant(items: Sequence[SampleArrays], config: TrainConfig) -> AcceptanceRun:
    """Train on the 70% split, then score the 15% test split and fit the modality classifiers on it."""

    train_idx, val_idx, test_idx = split_indices(len(items), config.seed)
    outcome = train_model(config, [items[i] for i in train_idx], [items[i] for i in val_idx])
    test_items = [items[i] for i in test_idx]
    metrics = evaluate(outcome.model, test_items)
    linear = probes.run_probes(outcome.model, test_items, seed=config.seed)
    return AcceptanceRun(
        beta=config.beta,
        acc2_nonneg=metrics.acc2_nonneg,
        mae=metrics.mae,
        corr=metrics.corr,
        specific_probe=linear.specific_accuracy,
        invariant_probe=linear.invariant_accuracy,
        video_adjacent_jsd=linear.video_adjacent_jsd,
        best_epoch=outcome.best_epoch,
    )


def jsd_reduction(with_til: AcceptanceRun, without_til: AcceptanceRun) -> float:
    """Relative drop of the adjacent-frame JSD; ``0`` when the unregularised run is already flat."""

    baseline = without_til.video_adjacent_jsd
    if baseline <= 0.0:
        return 0.0
    return 1.0 - with_til.video_adjacent_jsd / baseline


def evaluate_targets(with_til: AcceptanceRun, without_til: AcceptanceRun) -> dict[str, bool]:
    return {
        "binary_accuracy>=0.90": with_til.acc2_nonneg >= ACC2_TARGET,
        "specific_probe>=0.90": with_til.specific_probe >= SPECIFIC_PROBE_TARGET,
        "invariant_probe<=0.60": with_til.invariant_probe <= INVARIANT_PROBE_TARGET,
        "temporal_jsd_reduction>=0.30": jsd_reduction(with_til, without_til) >= JSD_REDUCTION_TARGET,
    }


def run_acceptance(samples: Sequence[Sample], config: TrainConfig) -> AcceptanceReport:
    """Train ``config`` and its ``beta=0`` twin on the same split and compare them against the targets."""

    if config.beta == 0.0:
        raise ConfigurationError("the acceptance run compares a beta > 0 model with its beta = 0 twin")
    started = time.perf_counter()
    items = to_arrays(samples)
    with logging_context(run="acceptance", seed=config.seed):
        with_til = run_variant(items, config)
        without_til = run_variant(items, config.model_copy(update={"beta": 0.0}))
        report = AcceptanceReport(
            with_til=with_til,
            without_til=without_til,
            jsd_reduction=jsd_reduction(with_til, without_til),
            targets=evaluate_targets(with_til, without_til),
            wall_clock_s=time.perf_counter() - started,
        )
        logger.info("Acceptance run finished", extra={"context": {"passed": report.passed, **report.targets}})
    return report

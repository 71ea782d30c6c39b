"""Post-hoc probes: modality identifiability of the learned subspaces and temporal smoothness."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.linear_model import LinearRegression, LogisticRegression
from sklearn.model_selection import train_test_split

from sati.numcore import ops
from sati.numcore.tensor import no_grad
from sati.schemas import MODALITIES, ModalityLabel, ProbeReport, Sample
from sati.services import temporal
from sati.services.data import SampleArrays, iterate_batches, to_arrays
from sati.services.metrics import pearson
from sati.services.model import SatiModel
from sati.utils.logging_utils import get_logger

logger = get_logger("sati.services.probes")


def pooled_embeddings(model: SatiModel, items: Sequence[SampleArrays]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Time-pooled invariant and specific embeddings with their modality labels.

    Returns ``{"invariant": (X, y), "specific": (X, y)}`` with one row per sample and modality.
    """

    rows: dict[str, list[np.ndarray]] = {"invariant": [], "specific": []}
    labels: list[np.ndarray] = []
    for batch in iterate_batches(items, model.config.batch_size, model.config.encoder.max_len):
        with no_grad():
            out = model.forward(batch)
            for m in MODALITIES:
                rows["invariant"].append(ops.masked_mean(out.invariant[m], batch.masks[m]).data)
                rows["specific"].append(ops.masked_mean(out.specific[m], batch.masks[m]).data)
                labels.append(np.full(batch.size, int(ModalityLabel[m])))
    y = np.concatenate(labels)
    return {key: (np.concatenate(value), y) for key, value in rows.items()}


def modality_probe_accuracy(x: np.ndarray, y: np.ndarray, seed: int = 0) -> float:
    """Held-out accuracy of a fresh logistic-regression modality classifier."""

    x_train, x_test, y_train, y_test = train_test_split(x, y, test_size=0.3, random_state=seed, stratify=y)
    probe = LogisticRegression(max_iter=2000)
    probe.fit(x_train, y_train)
    return float(probe.score(x_test, y_test))


def video_adjacent_jsd(model: SatiModel, items: Sequence[SampleArrays]) -> float:
    """Mean adjacent-frame JSD of the regularised video representation over samples."""

    total, count = 0.0, 0
    for batch in iterate_batches(items, model.config.batch_size, model.config.encoder.max_len):
        with no_grad():
            out = model.forward(batch)
            loss = temporal.temporal_invariance_loss(model.temporal_target(out), batch.masks["v"], model.config.temporal)
        usable = batch.size - loss.n_degenerate
        total += loss.value.item() * usable
        count += usable
    return total / count if count else 0.0


def run_probes(model: SatiModel, items: Sequence[SampleArrays], seed: int = 0) -> ProbeReport:
    embeddings = pooled_embeddings(model, items)
    report = ProbeReport(
        specific_accuracy=modality_probe_accuracy(*embeddings["specific"], seed=seed),
        invariant_accuracy=modality_probe_accuracy(*embeddings["invariant"], seed=seed),
        video_adjacent_jsd=video_adjacent_jsd(model, items),
        n_samples=len(items),
    )
    logger.info("Probes finished", extra={"context": report.model_dump()})
    return report


def label_probe_correlation(samples: Sequence[Sample], seed: int = 0) -> float:
    """Out-of-sample Pearson correlation of a linear regression from time-pooled raw features to labels."""

    items = to_arrays(samples)
    x = np.stack([np.concatenate([item.features[m].mean(axis=0) for m in MODALITIES]) for item in items])
    y = np.array([item.label for item in items])
    x_train, x_test, y_train, y_test = train_test_split(x, y, test_size=0.5, random_state=seed)
    fitted = LinearRegression().fit(x_train, y_train)
    return pearson(fitted.predict(x_test), y_test)

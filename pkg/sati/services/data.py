"""Synthetic dataset generation, noise injection, JSONL I/O and batching."""
from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Literal, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from sati.errors import ContractError, DatasetError
from sati.schemas import MODALITIES, RECORD_KEYS, ModalityInts, Sample, SynthConfig
from sati.utils.logging_utils import get_logger, logging_context

logger = get_logger("sati.services.data")

_GLOBAL_STREAM = 0
_SAMPLE_STREAM = 1


@dataclass(frozen=True, slots=True)
class MixingPlan:
    """Seeded quantities shared by every sample of one synthetic dataset."""

    w_shared: np.ndarray
    b_shared: np.ndarray
    signal: dict[str, np.ndarray]
    specific: dict[str, np.ndarray]


def mixing_plan(cfg: SynthConfig) -> MixingPlan:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _GLOBAL_STREAM]))
    w_shared = rng.choice([-1.0, 1.0], size=cfg.latent_dim) * rng.uniform(0.3, 0.7, size=cfg.latent_dim)
    b_shared = rng.normal(0.0, 0.1, size=cfg.latent_dim)
    signal = {
        m: rng.normal(0.0, 1.0 / math.sqrt(cfg.latent_dim), size=(cfg.latent_dim, cfg.dims.of(m)))
        for m in MODALITIES
    }
    specific = {
        m: rng.normal(0.0, 1.0 / math.sqrt(cfg.specific_dim), size=(cfg.specific_dim, cfg.dims.of(m)))
        for m in MODALITIES
    }
    return MixingPlan(w_shared=w_shared, b_shared=b_shared, signal=signal, specific=specific)


def _sample_length(rng: np.random.Generator, base: int, jitter: int) -> int:
    if jitter == 0:
        return base
    return max(1, base + int(rng.integers(-jitter, jitter + 1)))


def generate_sample(cfg: SynthConfig, plan: MixingPlan, index: int) -> Sample:
    """Build sample ``index``; it depends only on ``(cfg, index)``."""

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _SAMPLE_STREAM, index]))
    label = float(rng.uniform(-3.0, 3.0))
    u = np.tanh(label * plan.w_shared + plan.b_shared)
    frames: dict[str, list[list[float]]] = {}
    for m in MODALITIES:
        length = _sample_length(rng, cfg.lengths.of(m), cfg.length_jitter)
        s_m = rng.normal(size=cfg.specific_dim)
        base = cfg.strengths.of(m) * (u @ plan.signal[m]) + cfg.specific_scale * (s_m @ plan.specific[m])
        eta = rng.normal(size=(length, cfg.dims.of(m)))
        if m == "v":
            eps = np.empty_like(eta)
            eps[0] = eta[0]
            innovation = math.sqrt(1.0 - cfg.rho ** 2)
            for step in range(1, length):
                eps[step] = cfg.rho * eps[step - 1] + innovation * eta[step]
        else:
            eps = eta
        frames[RECORD_KEYS[m]] = (base[None, :] + cfg.noise.of(m) * eps).tolist()
    return Sample(id=f"synth-{index:06d}", label=label, **frames)


def generate(cfg: SynthConfig) -> list[Sample]:
    """Deterministic synthetic dataset: text carries the strongest label signal, video is autocorrelated."""

    plan = mixing_plan(cfg)
    samples = [generate_sample(cfg, plan, index) for index in range(cfg.n_samples)]
    logger.info(
        "Generated synthetic dataset",
        extra={"context": {"count": len(samples), "seed": cfg.seed, "rho": cfg.rho}},
    )
    return samples


# --- noise ----------------------------------------------------------------------------

def noise_std(level: float, reading: Literal["variance", "std"] = "variance") -> float:
    if level < 0:
        raise ContractError(f"noise level must be >= 0, got {level}")
    return math.sqrt(level) if reading == "variance" else level


def add_noise(
    samples: Sequence[Sample],
    variance: float,
    *,
    seed: int = 0,
    modalities: Iterable[str] = MODALITIES,
    reading: Literal["variance", "std"] = "variance",
) -> list[Sample]:
    """Add i.i.d. ``N(0, variance)`` noise to the selected modalities of every sample.

    With ``reading="std"`` the level is taken as the standard deviation instead.
    The noise for a sample depends only on ``(seed, position)``.
    """

    std = noise_std(variance, reading)
    selected = tuple(modalities)
    unknown = set(selected) - set(MODALITIES)
    if unknown:
        raise ContractError(f"unknown modalities {sorted(unknown)}")
    if std == 0.0:
        return [sample.model_copy(deep=True) for sample in samples]

    noisy = []
    for index, sample in enumerate(samples):
        rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
        update = {}
        for m in MODALITIES:
            key = RECORD_KEYS[m]
            clean = np.asarray(getattr(sample, key), dtype=np.float64)
            draw = rng.normal(0.0, std, size=clean.shape)
            if m in selected:
                update[key] = (clean + draw).tolist()
        noisy.append(sample.model_copy(update=update, deep=True))
    return noisy


def noise_difference_variance(clean: Sequence[Sample], noisy: Sequence[Sample], modalities: Iterable[str] = MODALITIES) -> float:
    """Empirical variance of ``noisy - clean`` over every feature of the selected modalities."""

    diffs = []
    for before, after in zip(clean, noisy):
        for m in modalities:
            key = RECORD_KEYS[m]
            diffs.append((np.asarray(getattr(after, key)) - np.asarray(getattr(before, key))).ravel())
    if not diffs:
        return 0.0
    return float(np.var(np.concatenate(diffs)))


# --- JSONL ----------------------------------------------------------------------------

def _open(path: Path, mode: str) -> IO[str]:
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return path.open(mode, encoding="utf-8")


def write_jsonl(samples: Iterable[Sample], path: Path | str) -> int:
    """Write one JSON object per line; floats keep their shortest round-trip repr."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with _open(path, "w") as handle:
        for sample in samples:
            handle.write(json.dumps(sample.model_dump(), allow_nan=False))
            handle.write("\n")
            count += 1
    logger.info("Wrote dataset", extra={"context": {"path": str(path), "count": count}})
    return count


def read_jsonl(path: Path | str) -> list[Sample]:
    path = Path(path)
    samples: list[Sample] = []
    with logging_context(path=str(path)):
        with _open(path, "r") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"malformed JSON: {exc.msg}", line=lineno) from exc
                try:
                    samples.append(Sample.model_validate(record))
                except ValidationError as exc:
                    raise DatasetError(f"invalid record: {exc}", line=lineno) from exc
        logger.info("Read dataset", extra={"context": {"count": len(samples)}})
    return samples


# --- arrays and batching -------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class SampleArrays:
    id: str
    label: float
    features: dict[str, np.ndarray]


@dataclass(frozen=True, slots=True)
class Batch:
    ids: list[str]
    labels: np.ndarray
    features: dict[str, np.ndarray]
    masks: dict[str, np.ndarray]

    @property
    def size(self) -> int:
        return len(self.ids)


def to_arrays(samples: Sequence[Sample]) -> list[SampleArrays]:
    """Convert records to float64 arrays once; every sample must share per-modality widths."""

    arrays: list[SampleArrays] = []
    widths: dict[str, int] = {}
    for position, sample in enumerate(samples):
        features = {}
        for m in MODALITIES:
            data = np.asarray(getattr(sample, RECORD_KEYS[m]), dtype=np.float64)
            expected = widths.setdefault(m, data.shape[1])
            if data.shape[1] != expected:
                raise DatasetError(
                    f"sample {sample.id!r} has {RECORD_KEYS[m]} width {data.shape[1]}, expected {expected}",
                    line=position + 1,
                )
            features[m] = data
        arrays.append(SampleArrays(id=sample.id, label=sample.label, features=features))
    return arrays


def input_dims(arrays: Sequence[SampleArrays]) -> ModalityInts:
    if not arrays:
        raise ContractError("dataset is empty")
    first = arrays[0].features
    return ModalityInts(**{m: int(first[m].shape[1]) for m in MODALITIES})


def collate(items: Sequence[SampleArrays], max_len: ModalityInts) -> Batch:
    """Zero-pad to the longest sequence in the batch, truncating past ``max_len`` from the end."""

    if not items:
        raise ContractError("cannot collate an empty batch")
    features: dict[str, np.ndarray] = {}
    masks: dict[str, np.ndarray] = {}
    for m in MODALITIES:
        width = items[0].features[m].shape[1]
        steps = min(max(item.features[m].shape[0] for item in items), max_len.of(m))
        padded = np.zeros((len(items), steps, width), dtype=np.float64)
        mask = np.zeros((len(items), steps), dtype=bool)
        for row, item in enumerate(items):
            seq = item.features[m][:steps]
            padded[row, : seq.shape[0]] = seq
            mask[row, : seq.shape[0]] = True
        features[m], masks[m] = padded, mask
    labels = np.array([item.label for item in items], dtype=np.float64)
    return Batch(ids=[item.id for item in items], labels=labels, features=features, masks=masks)


def iterate_batches(
    items: Sequence[SampleArrays],
    batch_size: int,
    max_len: ModalityInts,
    rng: Optional[np.random.Generator] = None,
) -> Iterator[Batch]:
    """Yield batches in order, or in a shuffled order drawn from ``rng``."""

    order = np.arange(len(items)) if rng is None else rng.permutation(len(items))
    for start in range(0, len(items), batch_size):
        yield collate([items[int(i)] for i in order[start : start + batch_size]], max_len)


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded 70/15/15 train/validation/test split; validation and test get at least one item."""

    if n < 3:
        raise ContractError(f"need at least 3 samples to split, got {n}")
    order = np.random.default_rng(np.random.SeedSequence([seed, 2])).permutation(n)
    n_val = max(1, int(math.floor(0.15 * n)))
    n_test = max(1, int(math.floor(0.15 * n)))
    n_train = n - n_val - n_test
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]

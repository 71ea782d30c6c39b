"""Temporal-invariance regularisation of adjacent video frames via Jensen-Shannon divergence."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from sati.errors import ConfigurationError, DimensionError
from sati.numcore import ops
from sati.numcore.tensor import Tensor
from sati.schemas import TemporalConfig
from sati.utils.logging_utils import get_logger

logger = get_logger("sati.services.temporal")

VARIANCE_FLOOR = 1e-6


@dataclass(slots=True)
class TemporalLoss:
    value: Tensor
    n_degenerate: int


def to_distribution(r: Tensor) -> Tensor:
    """Categorical distribution over the feature axis of each frame."""

    if r.shape[-1] < 2:
        raise DimensionError("to_distribution", r.shape, (2,))
    return ops.softmax(r, axis=-1)


def gaussian_proxy_distribution(r: Tensor, cfg: TemporalConfig) -> Tensor:
    """Discretised univariate Gaussians fitted per feature group.

    The trailing axis of ``r`` is cut into ``cfg.n_groups`` contiguous groups; each
    group's mean and variance define a Gaussian evaluated on ``cfg.grid_size``
    points in ``[-grid_bound, grid_bound]`` and normalised. The result has shape
    ``r.shape[:-1] + (n_groups, grid_size)``.
    """

    width = r.shape[-1]
    if cfg.n_groups > width:
        raise ConfigurationError(f"cannot split {width} features into {cfg.n_groups} groups")
    grid = np.linspace(-cfg.grid_bound, cfg.grid_bound, cfg.grid_size)
    bounds = np.linspace(0, width, cfg.n_groups + 1).round().astype(int)
    groups = []
    for start, stop in zip(bounds[:-1], bounds[1:]):
        chunk = ops.slice_(r, int(start), int(stop), axis=-1)
        mu = ops.mean(chunk, axis=-1, keepdims=True)
        var = ops.add_scalar(ops.variance(chunk, axis=-1, keepdims=True), VARIANCE_FLOOR)
        sq = ops.power(ops.sub(grid, mu), 2)
        logits = ops.neg(ops.div(sq, ops.scale(var, 2.0)))
        dist = ops.softmax(logits, axis=-1)
        groups.append(ops.reshape(dist, dist.shape[:-1] + (1, cfg.grid_size)))
    return ops.concat(groups, axis=-2)


def jsd(p: Tensor, q: Tensor) -> Tensor:
    """Jensen-Shannon divergence along the last axis, natural log, clamped at 1e-12."""

    if p.shape != q.shape:
        raise DimensionError("jsd", p.shape, q.shape)
    m = ops.scale(ops.add(p, q), 0.5)
    log_m = ops.log(m)
    left = ops.sum(ops.mul(p, ops.sub(ops.log(p), log_m)), axis=-1)
    right = ops.sum(ops.mul(q, ops.sub(ops.log(q), log_m)), axis=-1)
    return ops.scale(ops.add(left, right), 0.5)


def adjacent_divergences(r: Tensor, cfg: Optional[TemporalConfig] = None) -> Tensor:
    """JSD between frames ``i`` and ``i + 1`` of a ``(batch, steps, d)`` tensor: ``(batch, steps - 1)``."""

    cfg = cfg or TemporalConfig()
    steps = r.shape[1]
    if cfg.mode == "softmax":
        dist = to_distribution(r)
        return jsd(ops.slice_(dist, 0, steps - 1, axis=1), ops.slice_(dist, 1, steps, axis=1))
    dist = gaussian_proxy_distribution(r, cfg)
    per_group = jsd(ops.slice_(dist, 0, steps - 1, axis=1), ops.slice_(dist, 1, steps, axis=1))
    return ops.mean(per_group, axis=-1)


def temporal_invariance_loss(
    r: Tensor,
    mask: np.ndarray,
    cfg: Optional[TemporalConfig] = None,
) -> TemporalLoss:
    """Mean adjacent-frame JSD over valid steps, averaged over samples.

    Each sample with ``n >= 2`` valid frames contributes ``sum_i jsd_i / (n - 1)``;
    samples with a single valid frame contribute nothing and are counted in
    ``n_degenerate``. Accepts a single ``(steps, d)`` sequence with a length-``steps``
    mask as well.
    """

    mask = np.asarray(mask, dtype=bool)
    if r.ndim == 2:
        r = ops.reshape(r, (1,) + r.shape)
        mask = mask[None, :]
    if mask.shape != r.shape[:2]:
        raise DimensionError("temporal_invariance_loss", r.shape[:2], mask.shape)

    lengths = mask.sum(axis=1)
    usable = lengths >= 2
    n_degenerate = int((~usable).sum())
    if n_degenerate:
        logger.warning(
            "Sequences too short for the temporal constraint",
            extra={"context": {"degenerate": n_degenerate, "batch": int(mask.shape[0])}},
        )
    if not usable.any() or r.shape[1] < 2:
        return TemporalLoss(value=Tensor(0.0), n_degenerate=n_degenerate)

    pair_valid = mask[:, :-1] & mask[:, 1:]
    weights = np.zeros(pair_valid.shape, dtype=np.float64)
    per_sample = np.where(usable, 1.0 / np.maximum(lengths - 1, 1), 0.0)
    weights[pair_valid] = np.broadcast_to(per_sample[:, None], pair_valid.shape)[pair_valid]
    weighted = ops.sum(ops.mul(adjacent_divergences(r, cfg), weights))
    return TemporalLoss(value=ops.scale(weighted, 1.0 / int(usable.sum())), n_degenerate=n_degenerate)

"""Central Moment Discrepancy and the cross-modal consistency loss."""
from __future__ import annotations

import numpy as np

from sati.errors import ContractError, DimensionError
from sati.numcore import ops
from sati.numcore.tensor import Tensor
from sati.schemas import CmdConfig


def pool_valid(x: Tensor, mask: np.ndarray) -> Tensor:
    """Stack the valid steps of a ``(batch, steps, d)`` tensor into ``(rows, d)``."""

    return ops.take(x, np.nonzero(np.asarray(mask, dtype=bool)))


def cmd(x: Tensor, y: Tensor, cfg: CmdConfig) -> Tensor:
    """Central Moment Discrepancy between the row distributions of ``x`` and ``y``.

    With ``cfg.squash`` both inputs are passed through ``tanh`` first so their
    support is bounded by ``(a, b) = (-1, 1)``.
    """

    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionError("cmd", x.shape, y.shape)
    if x.shape[0] < 1 or y.shape[0] < 1:
        raise ContractError("cmd needs at least one row on each side")
    if cfg.squash:
        x, y = ops.tanh(x), ops.tanh(y)

    span = abs(cfg.b - cfg.a)
    mean_x, mean_y = ops.mean(x, axis=0), ops.mean(y, axis=0)
    total = ops.scale(ops.l2_norm(ops.sub(mean_x, mean_y)), 1.0 / span)
    centred_x, centred_y = ops.sub(x, mean_x), ops.sub(y, mean_y)
    for order in range(2, cfg.K + 1):
        moment_x = ops.mean(ops.power(centred_x, order), axis=0)
        moment_y = ops.mean(ops.power(centred_y, order), axis=0)
        term = ops.l2_norm(ops.sub(moment_x, moment_y))
        total = ops.add(total, ops.scale(term, 1.0 / span ** order))
    return total


def consistency_loss(i_a: Tensor, i_v: Tensor, i_t: Tensor, cfg: CmdConfig) -> Tensor:
    """Mean CMD over the pairs (a, v), (a, t) and (v, t)."""

    pairs = (cmd(i_a, i_v, cfg), cmd(i_a, i_t, cfg), cmd(i_v, i_t, cfg))
    return ops.scale(ops.add(ops.add(pairs[0], pairs[1]), pairs[2]), 1.0 / 3.0)

"""Modality discriminator, gradient reversal and the additive angular margin loss."""
from __future__ import annotations

from typing import Mapping, Optional

import numpy as np

from sati.errors import ContractError
from sati.numcore import ops
from sati.numcore.params import ParamRegistry
from sati.numcore.tensor import Tensor, as_tensor, primitive
from sati.schemas import MODALITIES, AdversaryConfig, ModalityLabel


def grl(x: Tensor, lam: float) -> Tensor:
    """Identity forward; the backward pass multiplies the upstream gradient by ``-lam``."""

    if lam < 0:
        raise ContractError(f"gradient reversal strength must be >= 0, got {lam}")
    x = as_tensor(x)
    return primitive(x.data.copy(), (x,), lambda g: (-lam * g,))


def init_discriminator(registry: ParamRegistry, d_model: int, cfg: AdversaryConfig) -> None:
    scope = registry.scope("discriminator")
    scope.glorot("proj.W", d_model, cfg.d_h)
    scope.zeros("proj.b", cfg.d_h)
    scope.glorot("W_D", cfg.d_h, len(MODALITIES))


def discriminator_embed(h: Tensor, registry: ParamRegistry, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean-pool over valid steps, apply the affine map, project rows onto the unit sphere.

    ``h`` is ``(batch, steps, d)``; a ``(batch, d)`` input is taken as already pooled.
    A row whose affine image is exactly zero stays zero.
    """

    if h.ndim == 3:
        if mask is None:
            mask = np.ones(h.shape[:2], dtype=bool)
        h = ops.masked_mean(h, mask)
    scope = registry.scope("discriminator")
    return ops.l2_normalize(ops.linear(h, scope["proj.W"], scope["proj.b"]), axis=-1)


def _check_labels(labels: np.ndarray, classes: int, rows: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (rows,):
        raise ContractError(f"expected {rows} modality labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractError("modality labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ContractError(f"modality labels must lie in [0, {classes}), got {sorted(set(labels.tolist()))}")
    return labels.astype(np.int64)


def cosine_logits(h_hat: Tensor, w_d: Tensor) -> Tensor:
    """Cosines between unit rows and the unit-normalised columns of ``w_d``."""

    return ops.matmul(h_hat, ops.l2_normalize(w_d, axis=0))


def aam_loss(h_hat: Tensor, labels: np.ndarray, w_d: Tensor, alpha: float, tau: float) -> Tensor:
    """Batch-mean additive angular margin loss.

    The target logit is ``alpha * cos(theta_y + tau)``, the others ``alpha * cos(theta_m)``,
    with ``theta = arccos`` of the cosine clamped away from ``+-1``.
    """

    rows, classes = h_hat.shape[0], w_d.shape[1]
    labels = _check_labels(labels, classes, rows)
    cosines = cosine_logits(h_hat, w_d)
    target = ops.take(cosines, (np.arange(rows), labels))
    margin = ops.cos(ops.add_scalar(ops.arccos(target), tau))
    onehot = np.eye(classes, dtype=np.float64)[labels]
    adjusted = ops.add(ops.mul(cosines, 1.0 - onehot), ops.mul(ops.reshape(margin, (rows, 1)), onehot))
    return ops.cross_entropy(ops.scale(adjusted, alpha), labels)


def domain_loss(
    invariant: Mapping[str, Tensor],
    specific: Mapping[str, Tensor],
    masks: Mapping[str, np.ndarray],
    registry: ParamRegistry,
    cfg: AdversaryConfig,
) -> Tensor:
    """Sum over modalities of the invariant and specific AAM terms, each batch-averaged.

    Invariant representations pass a gradient reversal layer; specific ones only
    when ``cfg.grl_on_specific`` is set.
    """

    w_d = registry["discriminator.W_D"]
    total: Optional[Tensor] = None
    for modality in MODALITIES:
        label = int(ModalityLabel[modality])
        streams = (
            (invariant[modality], cfg.grl_enabled),
            (specific[modality], cfg.grl_enabled and cfg.grl_on_specific),
        )
        for rep, reversed_ in streams:
            if reversed_:
                rep = grl(rep, cfg.lam)
            h_hat = discriminator_embed(rep, registry, masks[modality])
            labels = np.full(h_hat.shape[0], label, dtype=np.int64)
            term = aam_loss(h_hat, labels, w_d, cfg.alpha, cfg.tau)
            total = term if total is None else ops.add(total, term)
    assert total is not None
    return total


def predict_modality(h_hat: Tensor, w_d: Tensor) -> np.ndarray:
    return np.argmax(cosine_logits(h_hat, w_d).data, axis=-1)

"""Text-driven cross-attention, FBP gating, fusion, prediction head and the total objective."""
from __future__ import annotations

import math
from typing import Any, Optional

import numpy as np

from sati.errors import DimensionError
from sati.numcore import ops
from sati.numcore.params import ParamRegistry, ParamScope
from sati.numcore.tensor import Tensor, as_tensor
from sati.schemas import FusionConfig, TotalLossBreakdown

GATED_STREAMS = ("a", "v")


def init_fusion(registry: ParamRegistry, d_model: int, cfg: FusionConfig) -> None:
    for modality in GATED_STREAMS:
        scope = registry.scope(f"fusion.{modality}")
        scope.glorot("W_Q", d_model, cfg.d_fbp * cfg.k)
        scope.glorot("W_K", d_model, cfg.d_fbp * cfg.k)
        scope.glorot("W_norm", cfg.d_fbp, d_model)


def init_head(registry: ParamRegistry, d_in: int, hidden: int, n_out: int) -> None:
    scope = registry.scope("head")
    scope.glorot("fc1.W", d_in, hidden)
    scope.zeros("fc1.b", hidden)
    scope.glorot("fc2.W", hidden, n_out)
    scope.zeros("fc2.b", n_out)


def _batched(x: Tensor, mask: Optional[np.ndarray]) -> tuple[Tensor, np.ndarray]:
    if x.ndim == 2:
        x = ops.reshape(x, (1,) + x.shape)
        mask = None if mask is None else np.asarray(mask, dtype=bool)[None, :]
    if mask is None:
        mask = np.ones(x.shape[:2], dtype=bool)
    return x, np.asarray(mask, dtype=bool)


def cross_attention(
    s_t: Tensor,
    s_i: Tensor,
    key_mask: Optional[np.ndarray] = None,
    *,
    return_weights: bool = False,
) -> Any:
    """``softmax(S_t S_i^T / sqrt(d)) S_i`` with text as the query and padded keys masked."""

    single = s_t.ndim == 2
    if s_t.shape[-1] != s_i.shape[-1] or s_t.ndim != s_i.ndim:
        raise DimensionError("cross_attention", s_t.shape, s_i.shape)
    s_t, _ = _batched(s_t, None)
    s_i, key_mask = _batched(s_i, key_mask)
    logits = ops.scale(ops.matmul(s_t, ops.swap_last(s_i)), 1.0 / math.sqrt(s_t.shape[-1]))
    weights = ops.softmax(ops.masked_fill(logits, ~key_mask[:, None, :], ops.MASK_LOGIT), axis=-1)
    out = ops.matmul(weights, s_i)
    if single:
        out = ops.reshape(out, out.shape[1:])
        weights = ops.reshape(weights, weights.shape[1:])
    return (out, weights) if return_weights else out


def align_to_text(i_t: Tensor, i_i: Tensor, mask_t: np.ndarray, mask_i: np.ndarray) -> Tensor:
    """Per sample: ``I_i`` itself when it lines up with the text steps, else its broadcast masked mean."""

    batch, n_t, d = i_t.shape
    pooled = ops.reshape(ops.masked_mean(i_i, mask_i), (batch, 1, d))
    broadcast = ops.mul(pooled, np.ones((1, n_t, 1)))
    if i_i.shape[1] != n_t:
        return broadcast
    same = (mask_t.sum(axis=1) == mask_i.sum(axis=1)).astype(np.float64)[:, None, None]
    return ops.add(ops.mul(i_i, same), ops.mul(broadcast, 1.0 - same))


def fbp_gate(
    i_t: Tensor,
    i_i: Tensor,
    scope: ParamScope,
    cfg: FusionConfig,
    mask_t: Optional[np.ndarray] = None,
    mask_i: Optional[np.ndarray] = None,
) -> Tensor:
    """Factorized bilinear pooling gate for one stream, shaped like ``i_t``."""

    single = i_t.ndim == 2
    if i_t.shape[-1] != i_i.shape[-1]:
        raise DimensionError("fbp_gate", i_t.shape, i_i.shape)
    i_t, mask_t = _batched(i_t, mask_t)
    i_i, mask_i = _batched(i_i, mask_i)
    aligned = align_to_text(i_t, i_i, mask_t, mask_i)

    f_mul = ops.mul(ops.matmul(i_t, scope["W_Q"]), ops.matmul(aligned, scope["W_K"]))
    f_sp = ops.sum_pool(f_mul, cfg.k, axis=-1)
    f_norm = ops.l2_normalize(f_sp, axis=-1)
    gate = ops.matmul(f_norm, scope["W_norm"])
    if cfg.gate_sigmoid:
        gate = ops.sigmoid(gate)
    return ops.reshape(gate, gate.shape[1:]) if single else gate


def fuse(gate_a: Optional[Tensor], gate_v: Optional[Tensor], f_ta: Tensor, f_tv: Tensor) -> Tensor:
    """Concatenate the gated streams; a ``None`` gate leaves its stream untouched."""

    if f_ta.shape != f_tv.shape:
        raise DimensionError("fuse", f_ta.shape, f_tv.shape)
    streams = []
    for gate, stream in ((gate_a, f_ta), (gate_v, f_tv)):
        if gate is not None:
            if gate.shape != stream.shape:
                raise DimensionError("fuse", gate.shape, stream.shape)
            stream = ops.mul(gate, stream)
        streams.append(stream)
    return ops.concat(streams, axis=-1)


def predict(f_final: Tensor, mask: np.ndarray, scope: ParamScope, task: str = "regression") -> Tensor:
    """Masked mean over time, then ``linear -> relu -> linear``.

    Regression returns ``(batch,)`` scores, classification ``(batch, classes)`` logits.
    """

    f_final, mask = _batched(f_final, mask)
    pooled = ops.masked_mean(f_final, mask)
    hidden = ops.relu(ops.linear(pooled, scope["fc1.W"], scope["fc1.b"]))
    out = ops.linear(hidden, scope["fc2.W"], scope["fc2.b"])
    if task == "regression":
        return ops.reshape(out, (out.shape[0],))
    return out


def total_loss(
    l_task: Any,
    l_con: Any,
    l_ti: Any,
    l_dom: Any,
    alpha_w: float,
    beta: float,
    gamma: float,
) -> tuple[Tensor, TotalLossBreakdown]:
    """``L_task + alpha_w * L_con + beta * L_ti + gamma * L_dom`` and its breakdown."""

    parts = [as_tensor(item) for item in (l_task, l_con, l_ti, l_dom)]
    total = parts[0]
    for weight, part in zip((alpha_w, beta, gamma), parts[1:]):
        total = ops.add(total, ops.scale(part, weight))
    breakdown = TotalLossBreakdown(
        task=parts[0].item(),
        con=parts[1].item(),
        ti=parts[2].item(),
        dom=parts[3].item(),
        alpha_w=alpha_w,
        beta=beta,
        gamma=gamma,
    )
    return total, breakdown

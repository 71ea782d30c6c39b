"""Feature extraction and the shared/private encoders.

Audio and video sequences go through a small transformer encoder, text
features through a learned affine projection followed by layer norm. All
three are then mapped by one shared encoder to modality-invariant
representations and by three private encoders to modality-specific ones.

Sequence tensors are ``(batch, steps, width)``; masks are boolean ``(batch, steps)``
arrays with ``True`` on valid steps.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from sati.errors import ConfigurationError, DimensionError
from sati.numcore import ops
from sati.numcore.params import ParamRegistry, ParamScope
from sati.numcore.tensor import Tensor
from sati.schemas import MODALITIES, EncoderConfig

SEQUENCE_MODALITIES = ("a", "v")


def positional_encoding(n: int, d: int) -> np.ndarray:
    """Sinusoidal position table of shape ``(n, d)``."""

    if n < 1 or d < 1:
        raise ConfigurationError(f"positional encoding needs n, d >= 1, got n={n} d={d}")
    position = np.arange(n, dtype=np.float64)[:, None]
    even = np.arange(0, d, 2, dtype=np.float64)
    angle = position / np.power(10000.0, even / d)
    table = np.zeros((n, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)[:, : d // 2]
    return table


def add_positions(x: Tensor) -> Tensor:
    return ops.add(x, positional_encoding(x.shape[-2], x.shape[-1]))


def key_mask(mask: np.ndarray) -> np.ndarray:
    """Broadcastable ``(batch, 1, 1, keys)`` mask that is true on padded keys."""

    return ~np.asarray(mask, dtype=bool)[:, None, None, :]


# --- parameter construction ------------------------------------------------------

def _layer_norm_params(scope: ParamScope, d: int) -> None:
    scope.ones("gamma", d)
    scope.zeros("beta", d)


def init_transformer(scope: ParamScope, d_in: int, cfg: EncoderConfig) -> None:
    d = cfg.d_model
    scope.glorot("input.W", d_in, d)
    scope.zeros("input.b", d)
    for index in range(cfg.n_layers):
        layer = scope.scope(f"layer{index}")
        attn = layer.scope("attn")
        for proj in ("q", "k", "v", "o"):
            attn.glorot(f"W{proj}", d, d)
            attn.zeros(f"b{proj}", d)
        _layer_norm_params(layer.scope("ln1"), d)
        layer.glorot("ff.W1", d, cfg.d_ff)
        layer.zeros("ff.b1", cfg.d_ff)
        layer.glorot("ff.W2", cfg.d_ff, d)
        layer.zeros("ff.b2", d)
        _layer_norm_params(layer.scope("ln2"), d)


def init_text_projection(scope: ParamScope, d_in: int, d_model: int) -> None:
    scope.glorot("W", d_in, d_model)
    scope.zeros("b", d_model)
    _layer_norm_params(scope.scope("ln"), d_model)


def init_feedforward(scope: ParamScope, d: int) -> None:
    scope.glorot("fc1.W", d, d)
    scope.zeros("fc1.b", d)
    _layer_norm_params(scope.scope("ln"), d)
    scope.glorot("fc2.W", d, d)
    scope.zeros("fc2.b", d)


def init_encoders(registry: ParamRegistry, cfg: EncoderConfig) -> None:
    """Register extraction, shared and private encoder parameters."""

    if cfg.input_dims is None:
        raise ConfigurationError("encoder input_dims must be known before parameters are built")
    for modality in SEQUENCE_MODALITIES:
        init_transformer(registry.scope(f"extract.{modality}"), cfg.input_dims.of(modality), cfg)
    init_text_projection(registry.scope("extract.t"), cfg.input_dims.t, cfg.d_model)
    init_feedforward(registry.scope("shared"), cfg.d_model)
    for modality in MODALITIES:
        init_feedforward(registry.scope(f"private.{modality}"), cfg.d_model)


# --- forward passes ------------------------------------------------------------------

def _split_heads(x: Tensor, scope: ParamScope, name: str, n_heads: int) -> Tensor:
    batch, steps, d = x.shape
    projected = ops.linear(x, scope[f"W{name}"], scope[f"b{name}"])
    return ops.transpose(ops.reshape(projected, (batch, steps, n_heads, d // n_heads)), (0, 2, 1, 3))


def attention_weights(x: Tensor, mask: np.ndarray, scope: ParamScope, n_heads: int) -> Tensor:
    """Scaled dot-product weights ``(batch, heads, queries, keys)``; padded keys get a ``-1e9`` logit."""

    q, k = _split_heads(x, scope, "q", n_heads), _split_heads(x, scope, "k", n_heads)
    logits = ops.scale(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(x.shape[-1] // n_heads))
    return ops.softmax(ops.masked_fill(logits, key_mask(mask), ops.MASK_LOGIT), axis=-1)


def multi_head_attention(x: Tensor, mask: np.ndarray, scope: ParamScope, n_heads: int) -> Tensor:
    batch, steps, d = x.shape
    weights = attention_weights(x, mask, scope, n_heads)
    v = _split_heads(x, scope, "v", n_heads)
    context = ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3))
    return ops.linear(ops.reshape(context, (batch, steps, d)), scope["Wo"], scope["bo"])


def _encoder_layer(
    h: Tensor,
    mask: np.ndarray,
    scope: ParamScope,
    cfg: EncoderConfig,
    dropout: float,
    rng: Optional[np.random.Generator],
) -> Tensor:
    attended = ops.dropout(multi_head_attention(h, mask, scope.scope("attn"), cfg.n_heads), dropout, rng)
    h = ops.layer_norm(ops.add(h, attended), scope["ln1.gamma"], scope["ln1.beta"])
    hidden = ops.gelu(ops.linear(h, scope["ff.W1"], scope["ff.b1"]))
    expanded = ops.dropout(ops.linear(hidden, scope["ff.W2"], scope["ff.b2"]), dropout, rng)
    return ops.layer_norm(ops.add(h, expanded), scope["ln2.gamma"], scope["ln2.beta"])


def frame_embed(x: Tensor, scope: ParamScope) -> Tensor:
    """Per-frame input projection of a transformer path, before positions are added and frames mixed."""

    return ops.linear(x, scope["input.W"], scope["input.b"])


def transformer_encode(
    x: Tensor,
    mask: np.ndarray,
    scope: ParamScope,
    cfg: EncoderConfig,
    *,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Project, add positions, then run ``cfg.n_layers`` post-norm encoder layers.

    Accepts ``(batch, steps, d_in)`` or a single ``(steps, d_in)`` sequence.
    Padded keys receive a ``-1e9`` logit, so outputs at valid steps do not
    depend on padded content.
    """

    single = x.ndim == 2
    if single:
        x = ops.reshape(x, (1,) + x.shape)
        mask = np.asarray(mask, dtype=bool)[None, :]
    d_in = scope["input.W"].shape[0]
    if x.ndim != 3 or x.shape[-1] != d_in:
        raise DimensionError("transformer_encode", x.shape, (d_in,))
    if np.asarray(mask).shape != x.shape[:2]:
        raise DimensionError("transformer_encode mask", x.shape[:2], np.asarray(mask).shape)

    h = add_positions(frame_embed(x, scope))
    for index in range(cfg.n_layers):
        h = _encoder_layer(h, mask, scope.scope(f"layer{index}"), cfg, dropout, rng)
    return ops.reshape(h, h.shape[1:]) if single else h


def text_project(x: Tensor, scope: ParamScope) -> Tensor:
    """Affine stand-in for a pretrained text encoder."""

    weight = scope["W"]
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError("text_project", x.shape, weight.shape)
    return ops.linear(x, weight, scope["b"])


def text_encode(x: Tensor, scope: ParamScope) -> Tensor:
    """Text extraction: the affine projection, layer-normed like the output of the transformer paths."""

    return ops.layer_norm(text_project(x, scope), scope["ln.gamma"], scope["ln.beta"])


def feedforward_encode(h: Tensor, scope: ParamScope) -> Tensor:
    hidden = ops.gelu(ops.linear(h, scope["fc1.W"], scope["fc1.b"]))
    hidden = ops.layer_norm(hidden, scope["ln.gamma"], scope["ln.beta"])
    return ops.linear(hidden, scope["fc2.W"], scope["fc2.b"])


def shared_encode(h: Tensor, registry: ParamRegistry) -> Tensor:
    """Modality-invariant representation; one parameter set serves every modality."""

    return feedforward_encode(h, registry.scope("shared"))


def private_encode(h: Tensor, modality: str, registry: ParamRegistry) -> Tensor:
    """Modality-specific representation from the private encoder of ``modality``."""

    if modality not in MODALITIES:
        raise ConfigurationError(f"unknown modality {modality!r}; expected one of {MODALITIES}")
    return feedforward_encode(h, registry.scope(f"private.{modality}"))

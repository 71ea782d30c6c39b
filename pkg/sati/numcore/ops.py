"""Differentiable operations over :class:`~sati.numcore.tensor.Tensor`.

Every function accepts tensors or array-likes, returns a new tensor, and records
itself on the active tape through :func:`~sati.numcore.tensor.primitive`.
Saturating operations document where their gradient is cut:

* ``log`` evaluates ``log(max(x, 1e-12))``; below the floor the gradient is zero.
* ``arccos`` clamps its argument to ``[-1 + 1e-7, 1 - 1e-7]``.
* ``l2_norm`` / ``l2_normalize`` map a zero vector to zero with a zero gradient.
"""
from __future__ import annotations

import math
from typing import Any, Optional, Sequence

import numpy as np

from sati.errors import ConfigurationError, ContractError, DimensionError
from sati.numcore.tensor import Tensor, as_tensor, primitive

LOG_FLOOR = 1e-12
ARCCOS_MARGIN = 1e-7
MASK_LOGIT = -1e9

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


# --- elementwise arithmetic -------------------------------------------------

def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return primitive(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return primitive(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    a_data, b_data = a.data, b.data
    return primitive(a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data))


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    a_data, b_data = a.data, b.data
    return primitive(
        a_data / b_data,
        (a, b),
        lambda g: (g / b_data, -g * a_data / (b_data * b_data)),
    )


def neg(x: Any) -> Tensor:
    x = as_tensor(x)
    return primitive(-x.data, (x,), lambda g: (-g,))


def scale(x: Any, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)
    return primitive(x.data * factor, (x,), lambda g: (g * factor,))


def add_scalar(x: Any, value: float) -> Tensor:
    x = as_tensor(x)
    return primitive(x.data + float(value), (x,), lambda g: (g,))


def power(x: Any, exponent: float) -> Tensor:
    x = as_tensor(x)
    data = x.data
    if float(exponent).is_integer():
        exponent = int(exponent)
    return primitive(
        data ** exponent,
        (x,),
        lambda g: (g * exponent * data ** (exponent - 1),),
    )


# --- elementwise functions ---------------------------------------------------

def exp(x: Any) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return primitive(out, (x,), lambda g: (g * out,))


def log(x: Any) -> Tensor:
    """Natural log of ``max(x, 1e-12)``."""

    x = as_tensor(x)
    data = x.data
    live = data > LOG_FLOOR
    clamped = np.where(live, data, LOG_FLOOR)
    return primitive(np.log(clamped), (x,), lambda g: (np.where(live, g / clamped, 0.0),))


def relu(x: Any) -> Tensor:
    x = as_tensor(x)
    live = x.data > 0
    return primitive(np.where(live, x.data, 0.0), (x,), lambda g: (g * live,))


def _gelu_forward(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x ** 3)))


def _gelu_derivative(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def gelu(x: Any) -> Tensor:
    """Tanh-approximated GELU."""

    x = as_tensor(x)
    data = x.data
    return primitive(_gelu_forward(data), (x,), lambda g: (g * _gelu_derivative(data),))


def sigmoid(x: Any) -> Tensor:
    x = as_tensor(x)
    data = x.data
    decay = np.exp(-np.abs(data))
    out = np.where(data >= 0, 1.0 / (1.0 + decay), decay / (1.0 + decay))
    return primitive(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Any) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return primitive(out, (x,), lambda g: (g * (1.0 - out * out),))


def cos(x: Any) -> Tensor:
    x = as_tensor(x)
    data = x.data
    return primitive(np.cos(data), (x,), lambda g: (-g * np.sin(data),))


def arccos(x: Any) -> Tensor:
    """``arccos`` of the argument clamped to ``[-1, 1]``.

    The derivative is zero where ``|x| > 1 - 1e-7`` so it stays finite at exact alignment.
    """

    x = as_tensor(x)
    data = x.data
    inside = np.abs(data) <= 1.0 - ARCCOS_MARGIN
    guarded = np.where(inside, data, 0.0)
    slope = -1.0 / np.sqrt(1.0 - guarded * guarded)
    return primitive(np.arccos(np.clip(data, -1.0, 1.0)), (x,), lambda g: (np.where(inside, g * slope, 0.0),))


# --- reductions ----------------------------------------------------------------

def _normalize_axis(axis: Optional[int | tuple[int, ...]], ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for item in axes:
        if not -ndim <= item < max(ndim, 1):
            raise ContractError(f"axis {item} is out of range for {ndim} dimensions")
    return tuple(sorted(item % ndim for item in axes)) if ndim else ()


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...], keepdims: bool) -> np.ndarray:
    if not keepdims:
        for axis in axes:
            g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x: Any, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    shape = x.shape
    return primitive(
        np.sum(x.data, axis=axes, keepdims=keepdims),
        (x,),
        lambda g: (_expand_reduced(g, shape, axes, keepdims),),
    )


def mean(x: Any, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    shape = x.shape
    count = float(np.prod([shape[a] for a in axes])) if axes else 1.0
    return primitive(
        np.mean(x.data, axis=axes, keepdims=keepdims),
        (x,),
        lambda g: (_expand_reduced(g, shape, axes, keepdims) / count,),
    )


def variance(x: Any, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    """Population variance (``ddof = 0``)."""

    x = as_tensor(x)
    centred = sub(x, mean(x, axis=axis, keepdims=True))
    return mean(mul(centred, centred), axis=axis, keepdims=keepdims)


def l2_norm(x: Any, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is zero."""

    x = as_tensor(x)
    data = x.data
    norm = np.sqrt(np.sum(data * data, axis=axis, keepdims=True))
    safe = np.where(norm > 0, norm, 1.0)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        g = g if keepdims else np.expand_dims(g, axis)
        return (np.where(norm > 0, g * data / safe, 0.0),)

    out = norm if keepdims else np.squeeze(norm, axis=axis)
    return primitive(out, (x,), vjp)


def l2_normalize(x: Any, axis: int = -1) -> Tensor:
    """``x / ||x||`` along ``axis``; zero vectors stay zero."""

    x = as_tensor(x)
    data = x.data
    norm = np.sqrt(np.sum(data * data, axis=axis, keepdims=True))
    live = norm > 0
    safe = np.where(live, norm, 1.0)
    out = np.where(live, data / safe, 0.0)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        radial = np.sum(g * out, axis=axis, keepdims=True)
        return (np.where(live, (g - out * radial) / safe, 0.0),)

    return primitive(out, (x,), vjp)


# --- shape manipulation ----------------------------------------------------------

def reshape(x: Any, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    return primitive(x.data.reshape(tuple(shape)), (x,), lambda g: (g.reshape(original),))


def transpose(x: Any, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return primitive(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def swap_last(x: Any) -> Tensor:
    """Transpose the two trailing axes."""

    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(tensors: Sequence[Any], axis: int = -1) -> Tensor:
    parts = [as_tensor(item) for item in tensors]
    if not parts:
        raise ContractError("concat needs at least one tensor")
    reference = parts[0].shape
    resolved = axis % len(reference)
    for part in parts[1:]:
        if len(part.shape) != len(reference) or any(
            a != b for i, (a, b) in enumerate(zip(part.shape, reference)) if i != resolved
        ):
            raise DimensionError("concat", reference, part.shape)
    bounds = np.cumsum([part.shape[resolved] for part in parts])[:-1]

    def vjp(g: np.ndarray) -> list[np.ndarray]:
        return np.split(g, bounds, axis=resolved)

    return primitive(np.concatenate([part.data for part in parts], axis=resolved), parts, vjp)


def take(x: Any, index: Any) -> Tensor:
    """``x[index]`` for basic or advanced numpy indices."""

    x = as_tensor(x)
    shape = x.shape

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, index, g)
        return (full,)

    return primitive(np.array(x.data[index], dtype=np.float64), (x,), vjp)


def slice_(x: Any, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""

    x = as_tensor(x)
    index: list[Any] = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    return take(x, tuple(index))


def masked_fill(x: Any, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value``; those entries get no gradient."""

    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    keep = ~mask
    return primitive(np.where(mask, float(value), x.data), (x,), lambda g: (g * keep,))


# --- linear algebra and normalisation ------------------------------------------------

def matmul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g @ np.swapaxes(b_data, -1, -2), np.swapaxes(a_data, -1, -2) @ g

    return primitive(a_data @ b_data, (a, b), vjp)


def linear(x: Any, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def layer_norm(x: Any, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the trailing axis to zero mean and unit variance, then scale and shift."""

    x = as_tensor(x)
    centred = sub(x, mean(x, axis=-1, keepdims=True))
    var = mean(mul(centred, centred), axis=-1, keepdims=True)
    normed = mul(centred, power(add_scalar(var, eps), -0.5))
    return add(mul(normed, gamma), beta)


def sum_pool(x: Any, k: int, axis: int = -1) -> Tensor:
    """Non-overlapping sum pooling with window ``k`` along ``axis``."""

    x = as_tensor(x)
    resolved = axis % x.ndim
    width = x.shape[resolved]
    if k < 1 or width % k != 0:
        raise ConfigurationError(f"pool window {k} does not divide width {width}")
    shape = x.shape[:resolved] + (width // k, k) + x.shape[resolved + 1:]
    return sum(reshape(x, shape), axis=resolved + 1)


# --- probability ----------------------------------------------------------------------

def softmax(x: Any, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return primitive(out, (x,), vjp)


def log_softmax(x: Any, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - log_norm
    probs = np.exp(out)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g - probs * np.sum(g, axis=axis, keepdims=True),)

    return primitive(out, (x,), vjp)


# --- training utilities ------------------------------------------------------------------

def stop_gradient(x: Any) -> Tensor:
    x = as_tensor(x)
    return Tensor._wrap(x.data.copy(), False)


def dropout(x: Any, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``rate`` is zero or no generator is given."""

    x = as_tensor(x)
    if rate <= 0.0 or rng is None:
        return x
    if rate >= 1.0:
        raise ConfigurationError(f"dropout rate must be below 1, got {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


def masked_mean(x: Any, mask: np.ndarray) -> Tensor:
    """Mean over axis 1 of a ``(B, L, d)`` tensor restricted to ``mask[b, l]``."""

    x = as_tensor(x)
    mask = np.asarray(mask, dtype=np.float64)
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise DimensionError("masked_mean", x.shape, mask.shape)
    counts = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
    return div(sum(mul(x, mask[:, :, None]), axis=1), counts)


def mse_loss(prediction: Any, target: Any) -> Tensor:
    prediction, target = as_tensor(prediction), as_tensor(target)
    if prediction.shape != target.shape:
        raise DimensionError("mse_loss", prediction.shape, target.shape)
    diff = sub(prediction, target)
    return mean(mul(diff, diff))


def cross_entropy(logits: Any, labels: np.ndarray) -> Tensor:
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError("cross_entropy", logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ContractError(f"class labels must lie in [0, {logits.shape[1]})")
    picked = take(log_softmax(logits, axis=-1), (np.arange(labels.shape[0]), labels))
    return neg(mean(picked))


def _install_operators() -> None:
    Tensor.__add__ = lambda self, other: add(self, other)
    Tensor.__radd__ = lambda self, other: add(other, self)
    Tensor.__sub__ = lambda self, other: sub(self, other)
    Tensor.__rsub__ = lambda self, other: sub(other, self)
    Tensor.__mul__ = lambda self, other: mul(self, other)
    Tensor.__rmul__ = lambda self, other: mul(other, self)
    Tensor.__truediv__ = lambda self, other: div(self, other)
    Tensor.__neg__ = lambda self: neg(self)
    Tensor.__matmul__ = lambda self, other: matmul(self, other)


_install_operators()

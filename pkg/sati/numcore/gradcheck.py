"""Central finite-difference oracle for tape gradients."""
from __future__ import annotations

import math
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from sati.errors import ContractError
from sati.numcore.tensor import Tape, Tensor, backward, no_grad
from sati.schemas import GradCheckReport
from sati.utils.logging_utils import get_logger

logger = get_logger("sati.numcore.gradcheck")


def _as_named(params: Mapping[str, Tensor] | Sequence[Tensor]) -> dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {tensor.name or f"param{index}": tensor for index, tensor in enumerate(params)}


def _evaluate(f: Callable[[], Tensor]) -> float:
    with no_grad():
        value = f()
    if value.shape != ():
        raise ContractError(f"gradient check needs a scalar function, got shape {value.shape}")
    return float(value.data)


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    eps: float = 1e-5,
    tolerance: float = 1e-6,
    *,
    floor: float = 1e-8,
    max_coordinates: Optional[int] = None,
    seed: int = 0,
    name: str = "",
) -> GradCheckReport:
    """Compare tape gradients of ``f`` with ``(f(p+eps) - f(p-eps)) / (2 eps)``.

    ``f`` takes no arguments and reads the current values of ``params``, which
    are perturbed in place one coordinate at a time and restored afterwards.
    The relative error of each coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    When ``max_coordinates`` is set, a seeded subset of coordinates is checked
    per parameter.
    """

    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    named = _as_named(params)

    first, second = _evaluate(f), _evaluate(f)
    if first != second:
        raise ContractError(f"function is not deterministic: {first!r} != {second!r}")

    with Tape() as tape:
        loss = f()
    grads = backward(tape, loss)

    rng = np.random.default_rng(seed)
    max_rel_error: dict[str, float] = {}
    worst_coordinate: dict[str, list[int]] = {}
    for key, tensor in named.items():
        analytic = grads.get_or_zeros(tensor)
        flat_indices = np.arange(tensor.size)
        if max_coordinates is not None and tensor.size > max_coordinates:
            flat_indices = np.sort(rng.choice(tensor.size, size=max_coordinates, replace=False))

        worst, worst_index = 0.0, 0
        for flat in flat_indices:
            index = np.unravel_index(int(flat), tensor.shape) if tensor.shape else ()
            original = tensor.data[index]
            tensor.data[index] = original + eps
            plus = _evaluate(f)
            tensor.data[index] = original - eps
            minus = _evaluate(f)
            tensor.data[index] = original

            numeric = (plus - minus) / (2.0 * eps)
            a = float(analytic[index])
            error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if not math.isfinite(error):
                error = math.inf
            if error > worst:
                worst, worst_index = error, int(flat)
        max_rel_error[key] = float(worst)
        worst_coordinate[key] = [int(i) for i in np.unravel_index(worst_index, tensor.shape)] if tensor.shape else []

    report = GradCheckReport(
        name=name,
        eps=eps,
        tolerance=tolerance,
        max_rel_error=max_rel_error,
        worst_coordinate=worst_coordinate,
    )
    log = logger.info if report.passed else logger.warning
    log(
        "Gradient check finished",
        extra={"context": {"check": name, "max_error": report.max_error, "passed": report.passed}},
    )
    return report

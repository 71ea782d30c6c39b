"""Adam optimizer over a :class:`~sati.numcore.params.ParamRegistry`."""
from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from sati.errors import DimensionError
from sati.numcore.params import ParamRegistry


class Adam:
    """Bias-corrected Adam with per-parameter step counters.

    Parameters whose name starts with one of ``frozen`` prefixes are never
    updated; :attr:`update_counts` records how often every other parameter moved.
    """

    def __init__(
        self,
        registry: ParamRegistry,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        frozen: Iterable[str] = (),
    ) -> None:
        self.registry = registry
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.frozen = tuple(frozen)
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.update_counts: dict[str, int] = {name: 0 for name in registry}

    def is_frozen(self, name: str) -> bool:
        return any(name == prefix or name.startswith(prefix + ".") for prefix in self.frozen)

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, tensor in self.registry.items():
            grad = grads.get(name)
            if grad is None or self.is_frozen(name):
                continue
            if grad.shape != tensor.shape:
                raise DimensionError(f"adam {name}", tensor.shape, grad.shape)
            count = self.update_counts.get(name, 0) + 1
            m = self._m.get(name, np.zeros_like(tensor.data))
            v = self._v.get(name, np.zeros_like(tensor.data))
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            m_hat = m / (1.0 - self.beta1 ** count)
            v_hat = v / (1.0 - self.beta2 ** count)
            tensor.data = tensor.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            self._m[name], self._v[name] = m, v
            self.update_counts[name] = count

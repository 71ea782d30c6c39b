"""Named parameter storage with seeded initialisers and scoped views."""
from __future__ import annotations

import math
from typing import Iterator, Mapping

import numpy as np

from sati.errors import ConfigurationError, DimensionError
from sati.numcore.tensor import Tensor


class ParamRegistry:
    """Ordered mapping from dotted parameter names to trainable tensors.

    Insertion order is the canonical order used by the optimizer, by checkpoints
    and by gradient checks, so building the same model twice with the same seed
    yields the same registry bit for bit.
    """

    def __init__(self, seed: int = 0) -> None:
        self._params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"parameter {name!r} is already registered")
        tensor = Tensor(data, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def glorot(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        """Uniform Glorot initialisation of a ``fan_in x fan_out`` matrix."""

        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self._add(name, self._rng.uniform(-limit, limit, size=(fan_in, fan_out)))

    def zeros(self, name: str, *shape: int) -> Tensor:
        return self._add(name, np.zeros(shape, dtype=np.float64))

    def ones(self, name: str, *shape: int) -> Tensor:
        return self._add(name, np.ones(shape, dtype=np.float64))

    def constant(self, name: str, data: np.ndarray) -> Tensor:
        return self._add(name, np.asarray(data, dtype=np.float64))

    def scope(self, prefix: str) -> "ParamScope":
        return ParamScope(self, prefix)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ConfigurationError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def group_names(self, prefix: str) -> list[str]:
        """Names equal to ``prefix`` or nested below it."""

        return [name for name in self._params if name == prefix or name.startswith(prefix + ".")]

    def num_parameters(self, prefix: str | None = None) -> int:
        names = self._params if prefix is None else self.group_names(prefix)
        return sum(self._params[name].size for name in names)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self._params.items()}

    def restore(self, values: Mapping[str, np.ndarray]) -> None:
        """Copy ``values`` into the registered tensors; names and shapes must match."""

        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise ConfigurationError(
                f"parameter sets differ: missing={sorted(missing)} unexpected={sorted(extra)}"
            )
        for name, tensor in self._params.items():
            data = np.asarray(values[name], dtype=np.float64)
            if data.shape != tensor.shape:
                raise DimensionError(f"restore {name}", tensor.shape, data.shape)
            tensor.data = data.copy()


class ParamScope:
    """Prefix view over a registry, so sub-modules name their weights locally."""

    def __init__(self, registry: ParamRegistry, prefix: str) -> None:
        self.registry = registry
        self.prefix = prefix

    def _full(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def glorot(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        return self.registry.glorot(self._full(name), fan_in, fan_out)

    def zeros(self, name: str, *shape: int) -> Tensor:
        return self.registry.zeros(self._full(name), *shape)

    def ones(self, name: str, *shape: int) -> Tensor:
        return self.registry.ones(self._full(name), *shape)

    def scope(self, name: str) -> "ParamScope":
        return ParamScope(self.registry, self._full(name))

    def __getitem__(self, name: str) -> Tensor:
        return self.registry[self._full(name)]

    def names(self) -> list[str]:
        return self.registry.group_names(self.prefix)

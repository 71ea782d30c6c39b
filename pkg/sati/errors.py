"""Exception hierarchy shared by the numerical core, the model services and the CLI."""
from __future__ import annotations

__all__ = [
    "SatiError",
    "DimensionError",
    "ContractError",
    "ConfigurationError",
    "DatasetError",
    "DivergenceError",
]


class SatiError(Exception):
    """Root of every error raised on purpose by this package."""


class DimensionError(SatiError, ValueError):
    """Raised when operand shapes are incompatible."""

    def __init__(self, op: str, *shapes: tuple[int, ...]) -> None:
        rendered = " vs ".join(str(tuple(shape)) for shape in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")
        self.op = op
        self.shapes = shapes


class ContractError(SatiError, ValueError):
    """Raised when a caller violates a documented precondition."""


class ConfigurationError(SatiError, ValueError):
    """Raised for configuration values that cannot work together."""


class DatasetError(SatiError, ValueError):
    """Raised for malformed or invalid dataset records."""

    def __init__(self, message: str, *, line: int | None = None) -> None:
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class DivergenceError(SatiError, RuntimeError):
    """Raised when a training loss stops being finite."""

    def __init__(self, component: str, value: float, *, epoch: int, step: int) -> None:
        super().__init__(f"loss component {component} became {value} at epoch {epoch}, step {step}")
        self.component = component
        self.value = value

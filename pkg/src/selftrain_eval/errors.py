"""Exception types shared across the package."""

from __future__ import annotations


class RejectedInputError(ValueError):
    """Input violates a documented precondition."""


class NumericalFailureError(FloatingPointError):
    """A non-finite value appeared during a computation."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer


class UndefinedConditionError(ValueError):
    """A condition measurement is undefined on the given instance."""


class CsvParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InfeasibleTargetsError(RejectedInputError):
    """Synthetic-process targets cannot be realized simultaneously."""

    def __init__(self, inequality: str, detail: str = ""):
        msg = f"infeasible targets: {inequality}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.inequality = inequality

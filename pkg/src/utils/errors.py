"""
Exception types raised across the toolkit.

The CLI maps ``ConfigError`` to exit code 2 and ``NumericalError`` to exit code 3.
"""


class DetPomdpError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DetPomdpError, ValueError):
    """Invalid experiment config, or a model/config/checkpoint mismatch."""


class NumericalError(DetPomdpError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable result."""


class ImpossibleObservationError(NumericalError):
    """An observation has zero likelihood under the current belief."""

    def __init__(self, component: int, message: str = ""):
        self.component = component
        super().__init__(
            message or f"Observation on component {component} has zero likelihood"
        )


class TrainingDivergedError(NumericalError):
    """The training cost moving average blew up."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class CapacityError(DetPomdpError, MemoryError):
    """An enumeration would not fit in memory."""


class EpisodeDoneError(DetPomdpError, RuntimeError):
    """``step`` was called on an episode that already reached its horizon."""

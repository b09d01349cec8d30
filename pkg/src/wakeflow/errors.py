"""Exception hierarchy shared across the solver stack."""


class WakeflowError(Exception):
    """Base class for all package errors."""


class DomainError(WakeflowError):
    """Evaluation requested outside the mathematical domain (singular point, empty region)."""


class UsageError(WakeflowError):
    """Inconsistent inputs: mismatched grids, parameter-window violations, bad staggering."""


class GeometryError(WakeflowError):
    """Geometric failure, e.g. a characteristic ray entering the obstacle."""


class IterationError(WakeflowError):
    """An iterative solve failed to reach its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class AccuracyError(WakeflowError):
    """A kernel evaluation could not reach the requested accuracy."""


class ConfigError(WakeflowError):
    """Invalid or missing run-configuration entry."""

    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field

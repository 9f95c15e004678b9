"""Exception types shared across the package."""


class RingsimError(Exception):
    """Base class for all package errors."""


class DimensionError(RingsimError, ValueError):
    """Tensor or accumulator shapes do not satisfy an operation's contract."""


class InputError(RingsimError, ValueError):
    """Numeric inputs are invalid (NaN or infinite values)."""


class ConfigError(RingsimError, ValueError):
    """A configuration value violates a stated rule (divisibility, sign, ...)."""


class ScheduleError(RingsimError, RuntimeError):
    """The executor detected a schedule invariant violation at runtime."""


class TopologyError(RingsimError, ValueError):
    """Traffic was requested between ranks with no route."""

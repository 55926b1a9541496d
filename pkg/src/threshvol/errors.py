"""Exception types shared across the package."""


class ThreshvolError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(ThreshvolError, ValueError):
    """A configuration object or input violates its invariants."""


class DimensionError(ThreshvolError, ValueError):
    """Array lengths do not line up (thresholds vs increments, etc.)."""


class InsufficientDataError(ThreshvolError, ValueError):
    """Not enough observations to produce the requested estimate."""


class NumericalError(ThreshvolError, ArithmeticError):
    """A numerical routine failed to converge or left its valid domain."""


class PreconditionError(ThreshvolError, ValueError):
    """An analytic hypothesis required by a routine does not hold."""


class CsvFormatError(ThreshvolError, ValueError):
    """A CSV input could not be parsed; carries the offending row number."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row

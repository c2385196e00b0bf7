"""Exception hierarchy shared across the package."""


class GpcvaError(Exception):
    """Base class for all package errors."""


class IllConditionedGramError(GpcvaError, ValueError):
    """Cholesky factorization failed even after jitter escalation."""


class InconsistentObservationError(GpcvaError, ValueError):
    """A noise-free update contradicts what the model already interpolates."""


class CalibrationError(GpcvaError, RuntimeError):
    """Credit calibration could not reach its target."""


class GridMismatchError(GpcvaError, ValueError):
    """Exposure dates, models and simulated paths do not line up."""


class ConfigError(GpcvaError):
    """Scenario configuration could not be parsed or validated."""

    def __init__(self, message: str, field: str | None = None, exit_code: int = 3):
        super().__init__(message)
        self.field = field
        self.exit_code = exit_code

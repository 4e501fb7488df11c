"""Exception types shared across the package."""


class EquityHPOError(Exception):
    """Base class for all package errors."""


class SchemaError(EquityHPOError):
    """Input file lacks a required column."""


class DataError(EquityHPOError, ValueError):
    """Input data violates an ordering, contiguity or value rule."""


class DomainError(EquityHPOError, ValueError):
    """Arguments outside an operation's domain (too short, non-positive, ...)."""


class AlignmentError(EquityHPOError, ValueError):
    """Series that must share dates do not."""


class SpecError(EquityHPOError, ValueError):
    """Invalid indicator or hyperparameter specification."""


class TrainingDiverged(EquityHPOError, FloatingPointError):
    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged (non-finite loss) at epoch {epoch}")


class DegenerateError(EquityHPOError, ZeroDivisionError):
    """A statistic's denominator vanished (zero benchmark error, zero SST, ...)."""


class ConfigError(EquityHPOError, ValueError):
    """Run configuration failed validation."""

"""Exception types shared across the package."""


class StamError(Exception):
    """Base class for package-specific failures."""


class ShapeError(StamError, ValueError):
    """Operands have incompatible shapes."""


class ConfigError(StamError, ValueError):
    """A configuration value is invalid or inconsistent."""


class UsageError(StamError, ValueError):
    """An operation was called outside its contract."""


class DataError(StamError, RuntimeError):
    """A dataset file or manifest is missing or malformed."""


class CheckpointError(StamError, RuntimeError):
    """A checkpoint file cannot be read back."""


class DomainError(StamError, ValueError):
    """A numeric argument lies outside the mathematical domain."""


class TrainingDiverged(StamError, RuntimeError):
    """Training aborted on a non-finite loss."""

"""Exception types raised across the package."""


class PolarsimError(Exception):
    """Base class for all package errors."""


class ConfigError(PolarsimError, ValueError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class OrderingError(PolarsimError):
    """Simulated time was asked to move backwards."""


class SelfFollowError(PolarsimError, ValueError):
    pass


class NotARepostError(PolarsimError, ValueError):
    pass


class LifecycleError(PolarsimError):
    """A bot was driven from a phase that does not allow the action."""


class UndefinedMetricError(PolarsimError, ValueError):
    """A metric has no defined value on the given input."""


class TrainingError(PolarsimError, ValueError):
    pass


class FitError(PolarsimError, ValueError):
    pass

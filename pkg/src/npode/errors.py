"""Exception hierarchy shared across the package."""


class NpOdeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(NpOdeError, ValueError):
    pass


class DomainError(NpOdeError, ValueError):
    pass


class ContractError(NpOdeError, ValueError):
    pass


class UnsupportedConfigError(NpOdeError, ValueError):
    pass


class ConfigError(NpOdeError, ValueError):
    pass


class IngestionError(NpOdeError, ValueError):
    pass


class DegenerateColumnError(NpOdeError, ValueError):
    pass


class UndefinedMetricError(NpOdeError, ValueError):
    pass


class IllConditionedKernelError(NpOdeError, RuntimeError):
    pass


class TrainingFailure(NpOdeError, RuntimeError):
    """Raised when the loss becomes non-finite during training."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"training diverged at iteration {iteration}")

"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised when a scenario configuration is malformed or inconsistent."""


class FilterDivergence(RuntimeError):
    """Raised when a filter's numerics fail beyond recovery.

    Attributes
    ----------
    step : int
        1-based time step at which the failure occurred.
    result : object or None
        Partial result accumulated before the failure, when available.
    """

    def __init__(self, step, message=None, result=None):
        self.step = int(step)
        self.result = result
        super().__init__(message or f"filter diverged at step {step}")

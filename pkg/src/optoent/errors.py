"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent input parameters."""


class SolverError(RuntimeError):
    """A matrix-equation or integration routine failed to produce a solution."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class TrajectoryError(RuntimeError):
    """A stochastic trajectory left the physical state space."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

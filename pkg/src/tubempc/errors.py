"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration: wrong dimensions, bad option values, malformed input."""


class ScenarioError(ConfigurationError):
    """Scenario is inconsistent (e.g. robot starts inside an obstacle)."""


class IntegrationError(RuntimeError):
    """Integrator produced a non-finite state or a singular stage system."""

    def __init__(self, message, node=None, stage=None):
        super().__init__(message)
        self.node = node
        self.stage = stage


class NumericalError(RuntimeError):
    """A numerical invariant was violated (e.g. negative quadratic form under a sqrt)."""


class SolverError(RuntimeError):
    """Solver misuse or failure that cannot be expressed as a status code."""

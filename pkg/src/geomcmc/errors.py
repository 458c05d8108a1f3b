"""Exception types raised across the package."""

from __future__ import annotations


class SingularMetricError(ValueError):
    """Raised when metric components (or a Jacobian) cannot be factorized."""


class NonFiniteError(ValueError):
    """Raised when a derivative estimate or model evaluation is not finite."""


class DivergenceError(RuntimeError):
    """Raised when a numerical flow leaves the region where it is well defined.

    Attributes:
        state: Last valid state reached before the divergence, as a tuple of
            arrays (or ``None`` if no valid state was reached).
    """

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


class ConfigError(ValueError):
    """Raised for invalid sampler or experiment configuration."""

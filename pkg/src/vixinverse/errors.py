"""Exception and warning types shared across the package."""

import numpy as np


class DomainError(ValueError):
    """A state or argument lies outside the domain of the process or basis."""


class InvariantError(ValueError):
    """Model parameters violate a required inequality."""


class NotAvailable(LookupError):
    """The requested quantity is not provided for this (model, maturity) pair."""


class ConvergenceError(RuntimeError):
    """A quadrature failed to converge under node doubling."""


class SingularSystemError(np.linalg.LinAlgError):
    """A linear system that should be invertible is numerically singular."""


class TruncationWarning(UserWarning):
    """A truncated series is evaluated outside the region where its tail is negligible."""

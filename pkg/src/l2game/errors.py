"""Exception hierarchy.

Validation problems (bad input, violated hypotheses) derive from
``ValidationError``; numerical breakdowns derive from ``NumericalError``.
The CLI maps the two families to exit codes 2 and 3.
"""


class L2GameError(Exception):
    """Base class for all package errors."""


class ValidationError(L2GameError, ValueError):
    """Rejected input."""


class InvalidHorizon(ValidationError):
    """A horizon was non-positive or outside the signal's support."""


class InvalidTestHorizon(ValidationError):
    """The certification horizon is not strictly below the optimal time."""


class PursuitNotGuaranteed(ValidationError):
    """The pursuer budget does not exceed the evader budget."""


class DivergentTail(ValidationError):
    """The requested decay exponent does not give a square-summable state."""


class NumericalError(L2GameError, ArithmeticError):
    """A numerical procedure broke down."""


class NotPositiveDefinite(NumericalError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, message, block=None, pivot=None):
        super().__init__(message)
        self.block = block
        self.pivot = pivot


class NonConvergence(NumericalError):
    """Root finding failed; ``bracket`` holds the last bracketing state."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket

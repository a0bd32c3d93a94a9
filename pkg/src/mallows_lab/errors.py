"""Exception types shared across the package.

Everything raised on purpose derives from MallowsLabError so callers can
catch library failures without swallowing stdlib bugs.
"""

__all__ = [
    "MallowsLabError",
    "InvalidArgumentError",
    "EnumerationLimitError",
    "PreconditionError",
    "DegenerateInputError",
    "DegenerateContrastError",
    "RecoveryFailure",
    "LearningFailure",
]


class MallowsLabError(Exception):
    pass


class InvalidArgumentError(MallowsLabError, ValueError):
    """Malformed input: bad permutation, weight vector, config, ..."""


class EnumerationLimitError(MallowsLabError, RuntimeError):
    """An operation would enumerate S_n past the configured cutoff."""


class PreconditionError(MallowsLabError, ValueError):
    """A documented precondition of a bound or routine does not hold."""


class DegenerateInputError(MallowsLabError, ValueError):
    """Inputs are degenerate for the requested construction (e.g. a test
    vector target lying in the span it must be projected away from)."""


class DegenerateContrastError(MallowsLabError, RuntimeError):
    """A contrast denominator fell below the numeric floor."""


class RecoveryFailure(MallowsLabError, RuntimeError):
    """Pairwise order recovery produced a non-transitive tournament."""

    def __init__(self, message, triple=None):
        super().__init__(message)
        self.triple = triple


class LearningFailure(MallowsLabError, RuntimeError):
    """No candidate mixture survived testing."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

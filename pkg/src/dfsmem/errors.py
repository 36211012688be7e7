"""Exception hierarchy shared by all modules.

The command line maps ``ValidationError`` (and its subclasses) to exit
code 1 and ``SolverError`` (and ``FitError``) to exit code 2.
"""


class ValidationError(ValueError):
    """Input failed a precondition (non-unitary matrix, bad config key, ...)."""


class InvalidArgument(ValidationError):
    """Argument outside the allowed domain (repeated sites, n = 0, ...)."""


class ProtocolError(ValidationError):
    """Operation not allowed in the current register state (e.g. shelved site)."""


class UndefinedStatistic(ValidationError):
    """A statistic was requested on empty input."""


class SolverError(RuntimeError):
    """A numerical solver did not reach its tolerance."""


class FitError(SolverError):
    """A likelihood or least-squares fit failed to converge."""

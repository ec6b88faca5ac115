"""Exception types shared across the package."""


class PeridynError(Exception):
    """Base class for all package-specific errors."""


class DomainError(PeridynError):
    """A geometric or physical parameter is outside its admissible range."""


class ConfigurationError(PeridynError):
    """Invalid configuration (bad keys, ranges, or incompatible settings).

    ``problems`` optionally carries the full list of collected validation
    messages so callers can report every issue at once.
    """

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems is not None else [message]


class MatrixError(PeridynError):
    """A matrix failed a structural requirement (e.g. not positive definite)."""


class ConvergenceError(PeridynError):
    """An iterative method exceeded its iteration budget.

    Carries the best iterate and the solve report so partial results are
    not lost.
    """

    def __init__(self, message, report=None, best=None):
        super().__init__(message)
        self.report = report
        self.best = best

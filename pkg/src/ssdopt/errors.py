"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid options, dimensions, or preconditions."""


class EvaluationError(RuntimeError):
    """The objective returned a non-finite value.

    The offending probe point is kept on the exception so callers can log it
    or shrink the step around it.
    """

    def __init__(self, message, point):
        super().__init__(message)
        self.point = point


class LineSearchError(RuntimeError):
    """Backtracking exhausted its trial steps without sufficient decrease."""


class BudgetError(RuntimeError):
    """An operation would exceed the evaluation budget."""


class NoSuccessError(RuntimeError):
    """No run in a collection reached the success threshold."""

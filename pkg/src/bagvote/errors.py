"""Exception hierarchy shared across the package.

The CLI maps each class to a distinct exit code, so keep the split
between parse-time problems (bad files) and semantic validation
failures (well-formed but invalid data).
"""


class BagvoteError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(BagvoteError):
    """A file could not be read or does not match its schema."""


class ValidationError(BagvoteError):
    """Well-formed input violates a documented invariant or precondition."""


class DegenerateClassError(BagvoteError):
    """A class-density denominator collapsed below the degeneracy floor.

    ``iteration`` is set when the collapse happened inside the soft-label
    iteration, so diagnostics can say when the positive class died.
    """

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration

"""Exception hierarchy shared by every module.

Validation problems (bad shapes, broken invariants, malformed files) derive
from ``ValueError``; numerical failures (NaN losses, solver non-convergence)
derive from ``ArithmeticError``.  The CLI maps the two families to exit codes
1 and 2.
"""


class ValidationError(ValueError):
    pass


class ModelFormatError(ValidationError):
    pass


class VersionError(ModelFormatError):
    pass


class NumericalError(ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    """Iterative solver stopped before meeting its tolerance.

    ``best`` holds the best iterate seen, so callers can still inspect it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best

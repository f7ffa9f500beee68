"""Exception hierarchy shared by all modules."""


class MartFloorError(Exception):
    """Base class for every error raised by this package."""


class InputError(MartFloorError, ValueError):
    """Inputs are malformed or mutually inconsistent."""


class TreeValidationError(InputError):
    """A scenario tree failed validation.

    ``violations`` lists every problem found, not only the first one.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class SpanError(InputError):
    """A vector that must lie in the span of a support does not."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NAViolationError(MartFloorError):
    """The origin is not in the relative interior of the support hull.

    ``location`` identifies the offending atom or node and ``separator``
    is a direction h with (h, x) >= 0 on the support, > 0 somewhere.
    """

    def __init__(self, message, location=None, separator=None):
        super().__init__(message)
        self.location = location
        self.separator = separator


class SolverError(MartFloorError, RuntimeError):
    """A numerical solver failed (iteration limit, breakdown)."""

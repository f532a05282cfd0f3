"""Exception hierarchy.

Everything raised on bad input derives from :class:`ValidationError`, which
the CLI maps to exit code 2.
"""


class StackDidError(Exception):
    """Base class for package errors."""


class ValidationError(StackDidError, ValueError):
    """Input violates a documented precondition."""


class PanelParseError(ValidationError):
    """Malformed panel or units file."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = list(rows or [])


class PanelConsistencyError(ValidationError):
    """Panel rows contradict each other (e.g. one person in two units)."""


class UnitLookupError(ValidationError, KeyError):
    """Unknown unit identifier."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DegenerateCohortError(ValidationError):
    """A cohort has no treated or no control members."""


class IncompletePanelError(ValidationError):
    """A cohort member lacks an outcome at some study occasion."""

    def __init__(self, message, individual=None, occasion=None):
        super().__init__(message)
        self.individual = individual
        self.occasion = occasion


class CohortMismatchError(ValidationError):
    """Cohorts were built from different panels."""


class SingularDesignError(ValidationError):
    """Regression design is rank deficient beyond the expected collinearity."""


class ConditioningError(ValidationError):
    """Covariance matrix is singular or indefinite."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class FixtureError(ValidationError):
    """Bundled or user-supplied count tables are incomplete."""


class SizeGuardError(ValidationError):
    """Dense oracle would exceed its size guard."""

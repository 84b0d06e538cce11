"""Exception types shared across the package.

The split mirrors the CLI exit codes: validation problems (bad inputs,
mismatched dimensions, unparsable files) versus numerical failures
(covariances that are not positive definite, singular systems).
"""


class ReconciliationError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ReconciliationError, ValueError):
    """Invalid inputs: shapes, labels, file contents, preconditions."""


class StructureError(ValidationError):
    """Invalid aggregation structure (bad weights, non-dividing orders, size cap)."""


class NumericalError(ReconciliationError):
    """A linear-algebra step failed in a way valid inputs should not trigger."""


class NotPositiveDefiniteError(NumericalError):
    """A covariance (or whitened Gram) failed its positive-definite factorization."""


class SingularSystemError(NumericalError):
    """A reconciliation system is singular or rank deficient.

    Attributes:
        deficiency: number of missing ranks, when cheaply computable (else None).
        condition: condition-number estimate of the offending matrix, when available.
    """

    def __init__(self, message, deficiency=None, condition=None):
        super().__init__(message)
        self.deficiency = deficiency
        self.condition = condition

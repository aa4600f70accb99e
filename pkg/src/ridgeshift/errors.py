"""Semantic exception hierarchy.

Public functions raise these instead of bare ValueError so callers can
distinguish contract violations (bad inputs) from numeric failures
(leaving the admissible branch, non-convergence).
"""


class RidgeShiftError(Exception):
    """Base error for this package."""


class InvalidParameterError(RidgeShiftError, ValueError):
    """Inputs violate a contract: bad domain, dimension mismatch, bad config."""


class SingularResolventError(RidgeShiftError):
    """Resolvent shift at or below the negated spectrum edge."""


class BelowMinimumPenaltyError(RidgeShiftError):
    """Ridge penalty at or below the minimum admissible (negative) penalty."""


class BranchViolationError(RidgeShiftError):
    """Implicit regularization level left the admissible analytic branch."""


class SolverFailureError(RidgeShiftError):
    """Root finder failed to converge; message carries diagnostics."""

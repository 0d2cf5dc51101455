"""Semantic exception hierarchy.

Every failure mode that callers are expected to branch on gets its own
class; generic contract violations (bad shapes, malformed inputs) raise
``InvalidInput``.  All classes derive from ``AuditOptError`` so a service
layer can catch the whole family and map it to an exit code or HTTP
status.
"""


class AuditOptError(Exception):
    """Base class for all package errors."""


class InvalidInput(AuditOptError, ValueError):
    """An argument violates its documented contract."""


class DegenerateRate(AuditOptError, ValueError):
    """A probability sits on the boundary where its logit is infinite."""


class DegenerateStratum(AuditOptError):
    """A sampling stratum has zero probability mass under the model."""


class NonFiniteLikelihood(AuditOptError):
    """A record has zero probability under the supplied parameters."""

    def __init__(self, record_index, message=None):
        self.record_index = record_index
        super().__init__(message or f"non-finite log-likelihood at record {record_index}")


class SingularInformation(AuditOptError):
    """The nuisance block of the information matrix is not invertible."""


class SeparationDetected(AuditOptError):
    """A coefficient diverged during fitting (quasi-complete separation)."""


class MaxIterations(AuditOptError):
    """The optimizer hit its iteration cap before converging."""


class NonDivisibleStep(AuditOptError, ValueError):
    """A step size does not divide the allocation budget."""


class InfeasibleBudget(AuditOptError):
    """Even the coarsest candidate grid exceeds the allowed size."""


class NoFeasibleDesign(AuditOptError):
    """Every candidate design in the search space was degenerate."""


class CapacityExceeded(AuditOptError, ValueError):
    """A requested draw exceeds the available records in a stratum."""


class WaveFitFailed(AuditOptError):
    """The interim fit of a multi-wave plan failed."""


class IllegalTransition(AuditOptError):
    """A session action is not allowed in the current state."""

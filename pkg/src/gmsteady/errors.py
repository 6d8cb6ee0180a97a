"""Exception types shared across the package."""


class DomainError(ValueError):
    """A parameter lies outside the domain where a formula is defined."""


class HypothesisError(ValueError):
    """A modelling hypothesis required by an estimate or solver is violated."""


class InfeasibleError(HypothesisError):
    """The explicit constant system cannot be satisfied for the given rates.

    The offending :class:`~gmsteady.analytic.ConstantLedger` is kept on
    ``self.ledger`` so callers can report which inequality failed.
    """

    def __init__(self, message, ledger=None):
        super().__init__(message)
        self.ledger = ledger


class SolverError(RuntimeError):
    """A linear solve missed its residual target."""


class ConvergenceError(RuntimeError):
    """An iteration ran out of steps before meeting its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DegenerateFitError(ValueError):
    """Too few or collinear samples for a least-squares decay fit."""

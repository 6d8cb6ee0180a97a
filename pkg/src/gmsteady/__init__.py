"""Steady states of a nonlocal activator-inhibitor system on R^N.

Closed-form envelope calculus, finite-difference Helmholtz solves,
convolution with exponential, power and Riesz kernels, and the
sub/super-solution and fixed-point solvers built on them.
"""
from .analytic import (ConstantLedger, Envelope, ExponentLedger, Exponents, Kernel,
                       exponent_ledger, helmholtz_of_psi, lambda_threshold, mu_threshold,
                       planned_constants, psi, sigma_of)
from .errors import (ConvergenceError, DegenerateFitError, DomainError, HypothesisError,
                     InfeasibleError, SolverError)
from .grid import EnvelopeTrace, Field, Grid, Zero, helmholtz_solve, sample

__version__ = "0.1.0"

"""Closed-form envelope algebra, kernel families and the constant system.

Everything here is computable without a grid.  The envelope

    Psi_{a,b}(x) = phi(x)^{-a} exp(-b phi(x)),   phi(x) = sqrt(1 + |x|^2)

is the decay profile that sandwiches both components of a steady state, and
the constants ``d1, D1, d2, D2`` describe the invariant set

    d1 Psi_{a,b} <= u <= D1 Psi_{a,b},   d2 Psi_{A,B} <= v <= D2 Psi_{A,B}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import integrate

from .errors import DomainError

__all__ = [
    "Exponents", "Envelope", "Kernel", "ConstantLedger", "ExponentLedger",
    "sigma_of", "phi", "psi", "psi_radial", "helmholtz_bracket", "helmholtz_of_psi",
    "lambda_threshold", "mu_threshold", "planned_constants", "exponent_ledger",
    "sphere_area",
]


# --------------------------------------------------------------------------
# exponents
# --------------------------------------------------------------------------

def _sigma(p, q, m, s):
    return m * q / ((p - 1.0) * (s + 1.0))


@dataclass(frozen=True)
class Exponents:
    """Reaction exponents ``(p, q, m, s)`` of ``u^p/v^q`` and ``u^m/v^s``.

    ``sigma`` is the anti-Turing index and ``t = p(s+1)/q - m`` the exponent
    of lambda in the existence curve ``lambda^t >= c mu``.
    """

    p: float
    q: float
    m: float
    s: float
    sigma: float = field(init=False)
    t: float = field(init=False)

    def __post_init__(self):
        if not self.p > 1:
            raise DomainError(f"p must exceed 1, got {self.p}")
        if not (self.q > 0 and self.m > 0):
            raise DomainError(f"q and m must be positive, got q={self.q}, m={self.m}")
        if not self.s >= 0:
            raise DomainError(f"s must be nonnegative, got {self.s}")
        object.__setattr__(self, "sigma", _sigma(self.p, self.q, self.m, self.s))
        object.__setattr__(self, "t", self.p * (self.s + 1.0) / self.q - self.m)

    @property
    def anti_turing(self) -> bool:
        return self.sigma <= 1.0


def sigma_of(exp: Exponents) -> float:
    """Anti-Turing index ``m q / ((p-1)(s+1))``; ``<= 1`` is the anti-Turing side."""
    if not isinstance(exp, Exponents):
        exp = Exponents(*exp)
    return _sigma(exp.p, exp.q, exp.m, exp.s)


# --------------------------------------------------------------------------
# envelopes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Envelope:
    """Decay profile ``Psi_{a,b}``: polynomial rate ``a``, exponential rate ``b``."""

    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if not (self.a >= 0 and self.b >= 0):
            raise DomainError(f"envelope rates must be nonnegative, got ({self.a}, {self.b})")

    def scaled(self, k: float) -> "Envelope":
        """``Psi_{ka,kb} = Psi_{a,b}^k``."""
        return Envelope(self.a * k, self.b * k)

    def __call__(self, x, N=None):
        return psi(self, x, N)

    @property
    def is_power(self) -> bool:
        return self.b == 0.0


def _radius(x, N=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return np.abs(x)
    if N == 1 and x.shape[-1] != 1:
        return np.abs(x)
    if N is not None and x.shape[-1] != N:
        raise ValueError(f"points must have a trailing axis of length {N}, got shape {x.shape}")
    return np.sqrt(np.sum(x * x, axis=-1))


def phi(x, N=None):
    r = _radius(x, N)
    return np.sqrt(1.0 + r * r)


def psi_radial(env: Envelope, r):
    ph = np.sqrt(1.0 + np.square(np.asarray(r, dtype=float)))
    return ph ** (-env.a) * np.exp(-env.b * ph)


def psi(env: Envelope, x, N=None):
    """Evaluate ``Psi_{a,b}`` at a point or an array of points.

    Scalars are 1D points.  Arrays carry coordinates on the trailing axis,
    except that for ``N=1`` a flat array is read as a list of 1D points.
    """
    ph = phi(x, N)
    out = ph ** (-env.a) * np.exp(-env.b * ph)
    return float(out) if np.ndim(out) == 0 else out


def helmholtz_bracket(env: Envelope, lam, ph, N: int):
    """The factor ``B`` with ``(-Delta + lam) Psi = B * Psi``, as a function of phi."""
    a, b = env.a, env.b
    ph = np.asarray(ph, dtype=float)
    return (lam - b * b
            + b * (N - 2 * a - 1) / ph
            + (b * b + a * (N - a - 2)) / ph ** 2
            + b * (2 * a + 1) / ph ** 3
            + a * (a + 2) / ph ** 4)


def helmholtz_of_psi(env: Envelope, lam: float, x, N: int):
    """Exact ``(-Delta + lambda) Psi_{a,b}`` at ``x`` in ``R^N``."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    ph = phi(x, N)
    out = helmholtz_bracket(env, lam, ph, N) * ph ** (-env.a) * np.exp(-env.b * ph)
    return float(out) if np.ndim(out) == 0 else out


def lambda_threshold(env: Envelope, N: int) -> float:
    """Above this value of lambda, ``lam/2 Psi <= (-Delta+lam) Psi <= 2 lam Psi``."""
    a, b = env.a, env.b
    return max(2 * a + 2 * (a + b) ** 2, N * (a + b))


def mu_threshold(env: Envelope, s: float, N: int) -> float:
    """Threshold for the singular problem whose source decays like ``env``.

    This is :func:`lambda_threshold` of the solution envelope ``env/(1+s)``.
    """
    if not s >= 0:
        raise DomainError(f"s must be nonnegative, got {s}")
    a, b = env.a / (1 + s), env.b / (1 + s)
    return max(2 * a + 2 * (a + b) ** 2, N * (a + b))


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------

def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere in R^N (2 for N=1)."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


_FAMILIES = ("exppoly", "power", "riesz")


@dataclass(frozen=True)
class Kernel:
    """Radial convolution kernel from one of three families.

    ====================  ==============================  =================
    family                J(z)                            parameters
    ====================  ==============================  =================
    ``exppoly``           (1+|z|)^-alpha exp(-beta |z|)   alpha >= 0, beta > 0
    ``power``             (1+|z|)^-alpha                  alpha > N
    ``riesz``             |z|^(theta - N)                 0 < theta < N
    ====================  ==============================  =================

    ``theta`` is the exponent in the bound ``J(z) <= c |z|^(theta-N)`` and
    ``c_bound`` the smallest such ``c`` (also covering the gradient bound).
    """

    family: str
    dim: int
    alpha: float = 0.0
    beta: float = 0.0
    theta: float | None = None
    c_bound: float = field(init=False)

    def __post_init__(self):
        fam = self.family.lower()
        object.__setattr__(self, "family", fam)
        N = self.dim
        if fam not in _FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        if N not in (1, 2, 3):
            raise DomainError(f"dimension must be 1, 2 or 3, got {N}")
        if fam == "exppoly" and not (self.alpha >= 0 and self.beta > 0):
            raise DomainError("exppoly kernel needs alpha >= 0 and beta > 0")
        if fam == "power" and not self.alpha > N:
            raise DomainError(f"power kernel needs alpha > N={N} for integrability, got {self.alpha}")
        theta = self.theta
        if theta is None:
            if fam == "riesz":
                raise DomainError("riesz kernel needs theta")
            theta = N - 0.5
        if not 0 < theta < N:
            raise DomainError(f"theta must lie in (0, {N}), got {theta}")
        object.__setattr__(self, "theta", float(theta))
        object.__setattr__(self, "c_bound", self._growth_constant())

    @classmethod
    def exp_poly(cls, alpha, beta, dim=1, theta=None):
        return cls("exppoly", dim, alpha=alpha, beta=beta, theta=theta)

    @classmethod
    def power(cls, alpha, dim=1, theta=None):
        return cls("power", dim, alpha=alpha, theta=theta)

    @classmethod
    def riesz(cls, theta, dim=1):
        return cls("riesz", dim, theta=theta)

    @property
    def M_J(self) -> float | None:
        """Exponential decay rate of condition (E); only exppoly kernels have one."""
        return self.beta if self.family == "exppoly" else None

    @property
    def integrable(self) -> bool:
        return self.family != "riesz"

    @property
    def singular(self) -> bool:
        return self.family == "riesz"

    def radial(self, r):
        """``J`` as a function of ``|z|``."""
        r = np.asarray(r, dtype=float)
        if self.family == "exppoly":
            return (1.0 + r) ** (-self.alpha) * np.exp(-self.beta * r)
        if self.family == "power":
            return (1.0 + r) ** (-self.alpha)
        with np.errstate(divide="ignore"):
            return r ** (self.theta - self.dim)

    def radial_derivative(self, r):
        r = np.asarray(r, dtype=float)
        if self.family == "exppoly":
            return -self.radial(r) * (self.alpha / (1.0 + r) + self.beta)
        if self.family == "power":
            return -self.alpha * self.radial(r) / (1.0 + r)
        return (self.theta - self.dim) * r ** (self.theta - self.dim - 1)

    def __call__(self, z):
        return self.radial(_radius(z, self.dim))

    def l1_norm(self) -> float:
        """``||J||_1`` over R^N; infinite for the Riesz kernel."""
        if self.family == "riesz":
            return math.inf
        N = self.dim
        f = lambda r: r ** (N - 1) * float(self.radial(r))
        val = integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-12)[0]
        val += integrate.quad(f, 1, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
        return sphere_area(N) * val

    def _growth_constant(self):
        N, th = self.dim, self.theta
        if self.family == "riesz":
            return max(1.0, N - th)
        r = np.geomspace(1e-8, 1e8, 8001)
        g0 = r ** (N - th) * self.radial(r)
        g1 = r ** (N + 1 - th) * np.abs(self.radial_derivative(r))
        return float(max(g0.max(), g1.max()))


# --------------------------------------------------------------------------
# constant system
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantLedger:
    """Ratio bounds in, invariant-set constants out.

    ``alpha, beta`` bound ``rho/Psi_{a,b}``; ``c1, C1`` and ``c2, C2`` bound the
    convolution ratios of ``Psi^p`` and ``Psi^m``.  ``failures`` names each
    feasibility inequality that does not hold.
    """

    alpha: float
    beta: float
    c1: float
    C1: float
    c2: float
    C2: float
    d1: float
    d2: float
    D1: float
    D2: float
    A: float
    B: float
    lam: float
    mu: float
    feasible: bool
    failures: tuple = ()

    def to_dict(self):
        return {
            "alpha": self.alpha, "beta": self.beta,
            "c1": self.c1, "C1": self.C1, "c2": self.c2, "C2": self.C2,
            "d1": self.d1, "d2": self.d2, "D1": self.D1, "D2": self.D2,
            "A": self.A, "B": self.B, "lambda": self.lam, "mu": self.mu,
            "feasible": self.feasible, "failures": list(self.failures),
        }


_RATIO_KEYS = ("alpha", "beta", "c1", "C1", "c2", "C2")


def planned_constants(exp: Exponents, ratios: Mapping[str, float], lam: float, mu: float,
                      env: Envelope | None = None, riesz_theta: float | None = None) -> ConstantLedger:
    """Solve the constant system for ``d1, d2, D1, D2`` in closed form.

    ``d1`` and ``d2`` make the lower envelopes sub-solutions, ``D1`` and ``D2``
    make the upper envelopes super-solutions.  The ledger is feasible when
    ``D1 > d1``, ``D2 > d2`` and ``lam*D1/4 >= beta``; this is the computable
    form of the existence curve.  ``env`` (and ``riesz_theta`` for the Riesz
    kernel) only feed the inhibitor rates ``A, B``.
    """
    missing = [k for k in _RATIO_KEYS if k not in ratios]
    if missing:
        raise DomainError(f"missing ratio bounds: {missing}")
    al, be, c1, C1, c2, C2 = (float(ratios[k]) for k in _RATIO_KEYS)
    if min(al, be, c1, C1, c2, C2) <= 0:
        raise DomainError("ratio bounds must be positive")
    if not (lam > 0 and mu > 0):
        raise DomainError("lambda and mu must be positive")
    p, q, m, s, sg = exp.p, exp.q, exp.m, exp.s, exp.sigma
    if sg > 1:
        raise DomainError(f"sigma={sg:.6g} > 1: the constant system needs the anti-Turing condition")

    base = c2 * al ** m / 2.0 ** (m + 1)
    d1 = al / (2.0 * lam)
    d2 = base ** (1 / (1 + s)) * lam ** (-m / (1 + s)) * mu ** (-1 / (1 + s))
    C3 = (base ** (q / (1 + s)) / (4.0 * C1)) ** (1 / (p - 1))
    D1 = C3 * lam ** (1 / (p - 1) - sg) * mu ** (-sg / m)
    C4 = (2.0 * C2 * C3 ** m) ** (1 / (1 + s))
    D2 = C4 * lam ** (m / (1 + s) * (1 / (p - 1) - sg)) * mu ** (-(sg + 1) / (1 + s))

    failures = []
    if not D1 > d1:
        failures.append("D1>d1")
    if not D2 > d2:
        failures.append("D2>d2")
    if not lam * D1 / 4 >= be:
        failures.append("lambda*D1/4>=beta")

    A = B = float("nan")
    if env is not None:
        if riesz_theta is None:
            A, B = env.a * m / (1 + s), env.b * m / (1 + s)
        else:
            A, B = (env.a * m - riesz_theta) / (1 + s), 0.0
    return ConstantLedger(al, be, c1, C1, c2, C2, d1, d2, D1, D2, A, B, lam, mu,
                          feasible=not failures, failures=tuple(failures))


@dataclass(frozen=True)
class ExponentLedger:
    A: float
    B: float
    ap_minus_Aq: float
    bp_minus_Bq: float
    checks: dict
    feasible: bool
    failures: tuple

    def to_dict(self):
        return {"A": self.A, "B": self.B, "ap_minus_Aq": self.ap_minus_Aq,
                "bp_minus_Bq": self.bp_minus_Bq, "checks": dict(self.checks),
                "feasible": self.feasible, "failures": list(self.failures)}


def exponent_ledger(env: Envelope, exp: Exponents, riesz_theta: float | None = None,
                    N: int | None = None) -> ExponentLedger:
    """Decay-rate bookkeeping for the activator source ``J*u^p/v^q + rho``.

    Integrable kernels: ``A = am/(1+s)``, ``B = bm/(1+s)`` and the source must
    decay at least like ``Psi_{a,b}``.  Riesz kernel ``|z|^(theta-N)``: the
    convolution loses ``theta`` powers, ``A = (am - theta)/(1+s)``, and the
    admissible window for ``a`` plus an exponent balance must hold.  A failed
    inequality marks the ledger infeasible; nothing is raised.
    """
    a, b = env.a, env.b
    p, q, m, s = exp.p, exp.q, exp.m, exp.s
    checks = {}
    if riesz_theta is None:
        A, B = a * m / (1 + s), b * m / (1 + s)
        apq, bpq = a * p - A * q, b * p - B * q
        tol = 1e-12 * max(1.0, abs(a * p), abs(b * p))
        checks["activator_poly_gap"] = apq >= a - tol
        checks["activator_exp_gap"] = bpq >= b - tol
    else:
        if N is None:
            raise DomainError("the Riesz ledger needs the dimension N")
        th = riesz_theta
        A, B = (a * m - th) / (1 + s), 0.0
        apq, bpq = a * p - A * q, 0.0
        checks["riesz_decay_window"] = th / min(m, p) < a < N / max(m, p)
        lhs = a * (p - 1) * (1 - exp.sigma)
        rhs = th * (1 - q / (s + 1))
        checks["riesz_exponent_balance"] = lhs >= rhs - 1e-12 * max(1.0, abs(rhs))
        checks["riesz_activator_gap"] = apq - th >= a - 1e-12 * max(1.0, abs(a * p))
        if b != 0:
            checks["riesz_power_envelope"] = False
    failures = tuple(k for k, ok in checks.items() if not ok)
    return ExponentLedger(A, B, apq, bpq, checks, not failures, failures)


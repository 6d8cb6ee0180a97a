"""Singular scalar solver and the coupled fixed-point solver.

The scalar problem ``-Delta w + mu w = K / w^s`` is solved by damped
monotone iteration between the explicit barriers ``d Psi`` and ``D Psi``.
The coupled solver iterates the de-coupled map

    Tu:  (-Delta + lam) Tu = J*u^p / v^q + rho
    Tv:  (-Delta + mu) Tv  = J*u^m / Tv^s

on the truncated box, checking membership in the envelope sandwich at
every step.  Failure to converge is reported as "no fixed point found";
it says nothing about existence.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .analytic import (ConstantLedger, Envelope, ExponentLedger, Exponents, Kernel,
                       exponent_ledger, lambda_threshold, mu_threshold, planned_constants)
from .convolve import KernelTable, build_table, conv_array
from .errors import ConvergenceError, HypothesisError, InfeasibleError
from .grid import EnvelopeTrace, Field, Grid, helmholtz_solve, laplacian, sample
from .verify import fit_decay

log = logging.getLogger(__name__)

__all__ = [
    "SingularProblem", "CoupledProblem", "SolveReport", "DecoupledStep",
    "sub_super_constants", "solve_singular", "decoupled_map", "fixed_point_solve",
    "measure_ratios", "hypothesis_violations", "multi_start_solve",
]

OMEGA_MIN = 0.1
_SLACK = 1e-12


def _envelope_values(grid: Grid, env: Envelope) -> np.ndarray:
    return sample(grid, env).values


def _ratio_bounds(num, den):
    r = num / den
    return float(r.min()), float(r.max())


# --------------------------------------------------------------------------
# singular scalar problem
# --------------------------------------------------------------------------

def sub_super_constants(c1: float, c2: float, mu: float, s: float):
    """Barrier constants ``(d, D)`` for ``c1 Psi <= K <= c2 Psi``.

    ``d = (c1/(2 mu))^(1/(1+s))`` and ``D = (2 c2/mu)^(1/(1+s))``.
    """
    if not (0 < c1 <= c2):
        raise ValueError(f"need 0 < c1 <= c2, got c1={c1}, c2={c2}")
    if not mu > 0:
        raise ValueError("mu must be positive")
    e = 1.0 / (1.0 + s)
    return (c1 / (2.0 * mu)) ** e, (2.0 * c2 / mu) ** e


@dataclass(frozen=True, eq=False)
class SingularProblem:
    """``-Delta w + mu w = K/w^s`` with ``c1 Psi_env <= K <= c2 Psi_env``."""

    mu: float
    s: float
    K: Field
    env: Envelope
    c1: float
    c2: float

    def __post_init__(self):
        if not (0 < self.c1 <= self.c2):
            raise HypothesisError(f"need 0 < c1 <= c2, got {self.c1}, {self.c2}")
        if not self.s >= 0:
            raise HypothesisError("s must be nonnegative")
        if not self.K.positive:
            raise HypothesisError("the source K must be positive")
        N = self.K.grid.N
        thr = mu_threshold(self.env, self.s, N)
        if not self.mu > thr:
            raise HypothesisError(
                f"mu={self.mu:.6g} must exceed {thr:.6g} for the barrier sandwich "
                f"of a source decaying like Psi_({self.env.a:g},{self.env.b:g})")
        P = _envelope_values(self.K.grid, self.env)
        K = self.K.values
        if np.any(K < self.c1 * P * (1 - _SLACK)) or np.any(K > self.c2 * P * (1 + _SLACK)):
            raise HypothesisError("K is not sandwiched between c1 Psi and c2 Psi")

    @classmethod
    def from_field(cls, K: Field, env: Envelope, mu: float, s: float) -> "SingularProblem":
        """Measure ``c1, c2`` as the extreme nodal ratios ``K/Psi_env``."""
        c1, c2 = _ratio_bounds(K.values, _envelope_values(K.grid, env))
        return cls(mu, s, K, env, c1, c2)

    @property
    def solution_envelope(self) -> Envelope:
        return self.env.scaled(1.0 / (1.0 + self.s))


def _singular_residual(w: Field, K, mu, s):
    src = K / w.values ** s
    r = -laplacian(w).values + mu * w.values - src
    return float(np.max(np.abs(r)) / np.max(np.abs(src)))


def solve_singular(prob: SingularProblem, omega: float = 0.7, tol: float = 1e-10,
                   max_iter: int = 2000, full_output: bool = False):
    """Damped monotone iteration from the super-solution ``D Psi``.

    Each step solves ``(-Delta_h + mu) H = K/w^s`` with the sub-solution
    trace ``d Psi`` as ghost data, relaxes ``w <- (1-omega) w + omega H`` and
    clips to ``[d Psi, D Psi]``.  ``omega`` is halved (down to 0.1) when the
    residual jumps by more than 2x or a two-cycle stalls it.

    Returns the solution field, or ``(field, info)`` with ``full_output``.
    Raises :class:`ConvergenceError` after ``max_iter`` steps.
    """
    if not 0 < omega <= 1:
        raise ValueError(f"omega must lie in (0, 1], got {omega}")
    grid = prob.K.grid
    envw = prob.solution_envelope
    d, D = sub_super_constants(prob.c1, prob.c2, prob.mu, prob.s)
    P = _envelope_values(grid, envw)
    lo, hi = d * P, D * P
    rule = EnvelopeTrace(envw, d)
    K, mu, s = prob.K.values, prob.mu, prob.s
    if s == 0:
        omega = 1.0  # linear problem: one solve is exact
    w = hi.copy()
    hist = []
    clip_events = 0
    clipped = 0
    for it in range(1, max_iter + 1):
        if np.any(w <= 0):
            raise RuntimeError("iterate left the positive cone despite clipping")
        H = helmholtz_solve(mu, Field(grid, K / w ** s, rule)).values
        new = (1.0 - omega) * w + omega * H
        clipped = int(np.count_nonzero(new < lo) + np.count_nonzero(new > hi))
        if clipped:
            clip_events += 1
            log.debug("iteration %d clipped %d nodes", it, clipped)
        w = np.clip(new, lo, hi)
        res = _singular_residual(Field(grid, w, rule), K, mu, s)
        hist.append(res)
        if res <= tol:
            out = Field(grid, w, rule)
            if not full_output:
                return out
            return out, {"iterations": it, "residual": res, "omega": omega, "d": d, "D": D,
                         "clip_events": clip_events, "converged_on_boundary": clipped > 0}
        if len(hist) >= 2 and res > 2.0 * hist[-2] and omega > OMEGA_MIN:
            omega = max(omega / 2, OMEGA_MIN)
        elif len(hist) >= 3 and res >= hist[-3] and omega > OMEGA_MIN:
            omega = max(omega / 2, OMEGA_MIN)
    raise ConvergenceError(
        f"singular solve did not reach tol={tol:g} in {max_iter} iterations "
        f"(last residual {hist[-1]:.3e})", residual=hist[-1], iterations=max_iter)


# --------------------------------------------------------------------------
# coupled problem
# --------------------------------------------------------------------------

def measure_ratios(table: KernelTable, rho: Field, env: Envelope, exp: Exponents) -> dict:
    """Extreme nodal ratios feeding the constant system.

    ``alpha, beta`` for ``rho/Psi_{a,b}``; ``c1, C1`` for
    ``J*Psi^p / Psi_gain`` and ``c2, C2`` for ``J*Psi^m / Psi_gain``, where the
    gain envelope loses ``theta`` powers for the Riesz kernel.
    """
    grid = table.grid
    th = table.kernel.theta if table.kernel.singular else 0.0
    al, be = _ratio_bounds(rho.values, _envelope_values(grid, env))
    out = {"alpha": al, "beta": be}
    for k, lab in ((exp.p, "1"), (exp.m, "2")):
        src = _envelope_values(grid, env.scaled(k))
        gain = _envelope_values(grid, Envelope(env.a * k - th, env.b * k))
        lo, hi = _ratio_bounds(conv_array(table, src), gain)
        out["c" + lab], out["C" + lab] = lo, hi
    return out


def hypothesis_violations(exp: Exponents, kernel: Kernel, env: Envelope,
                          lam: float | None = None, mu: float | None = None) -> list[str]:
    """Human-readable list of violated existence hypotheses (empty if none)."""
    msgs = []
    N = kernel.dim
    p, m = exp.p, exp.m
    if exp.sigma > 1:
        msgs.append(f"sigma={exp.sigma:.6g} > 1 violates the anti-Turing condition sigma <= 1")
    if kernel.singular:
        th = kernel.theta
        if exp.sigma >= 1:
            msgs.append(f"sigma={exp.sigma:.6g}: the Riesz-kernel existence result needs sigma < 1")
        if env.b != 0:
            msgs.append("the Riesz-kernel case needs a power envelope for rho (b = 0)")
        if env.a <= th / min(m, p):
            msgs.append(
                f"a={env.a:g} <= theta/min(m,p)={th / min(m, p):.6g}: Riesz non-existence regime, "
                "J*u^m diverges and no positive solution exists")
        led = exponent_ledger(env, exp, riesz_theta=th, N=N)
        for name in led.failures:
            if name == "riesz_decay_window" and env.a <= th / min(m, p):
                continue
            msgs.append(f"Riesz exponent ledger fails {name}")
    elif env.b > 0:
        if kernel.M_J is None:
            msgs.append("an exponential envelope for rho needs a kernel with exponential decay "
                        "(exppoly family)")
        elif not kernel.M_J > (env.a + env.b) * max(m, p):
            msgs.append(f"kernel decay rate M_J={kernel.M_J:g} must exceed "
                        f"(a+b)*max(m,p)={(env.a + env.b) * max(m, p):.6g}")
    else:
        lo = max(kernel.theta - 1, 0.0) / min(m, p)
        hi = N / max(m, p)
        if not lo < env.a < hi:
            msgs.append(f"power envelope rate a={env.a:g} must lie in ({lo:.6g}, {hi:.6g})")
    if not msgs:
        led = exponent_ledger(env, exp) if not kernel.singular else None
        if led is not None and not led.feasible:
            msgs.append(f"exponent ledger fails {', '.join(led.failures)}")
    if lam is not None:
        thr = lambda_threshold(env, N)
        if not lam > thr:
            msgs.append(f"lambda={lam:g} must exceed the envelope threshold {thr:.6g}")
    if mu is not None:
        A_env = _source_envelope(env, exp, kernel)
        if A_env is not None:
            thr = mu_threshold(A_env, exp.s, N)
            if not mu > thr:
                msgs.append(f"mu={mu:g} must exceed the inhibitor threshold {thr:.6g}")
    return msgs


def _source_envelope(env, exp, kernel):
    th = kernel.theta if kernel.singular else 0.0
    a = env.a * exp.m - th
    if a < 0:
        return None
    return Envelope(a, env.b * exp.m)


@dataclass(frozen=True, eq=False)
class CoupledProblem:
    """Grid-level data for one steady-state solve at rates ``(lam, mu)``."""

    exp: Exponents
    kernel: Kernel
    rho: Field
    env: Envelope
    lam: float
    mu: float
    table: KernelTable
    ratios: dict
    ledger: ConstantLedger
    exp_ledger: ExponentLedger

    @classmethod
    def build(cls, grid: Grid, exp: Exponents, kernel: Kernel, env: Envelope,
              lam: float, mu: float, rho: Field | None = None, table: KernelTable | None = None,
              ratios: dict | None = None) -> "CoupledProblem":
        """Sample ``rho = Psi_env`` by default, measure ratios, plan constants.

        ``table`` and ``ratios`` depend only on the grid, kernel and
        envelopes, so sweeps pass them in to avoid recomputation.
        """
        if rho is None:
            rho = sample(grid, env)
        if table is None:
            table = build_table(kernel, grid)
        if ratios is None:
            ratios = measure_ratios(table, rho, env, exp)
        th = kernel.theta if kernel.singular else None
        sg = exp.sigma
        if sg > 1:
            raise HypothesisError(f"sigma={sg:.6g} > 1 violates the anti-Turing condition sigma <= 1")
        ledger = planned_constants(exp, ratios, lam, mu, env=env, riesz_theta=th)
        eled = exponent_ledger(env, exp, riesz_theta=th, N=grid.N)
        return cls(exp, kernel, rho, env, float(lam), float(mu), table, ratios, ledger, eled)

    @property
    def grid(self) -> Grid:
        return self.rho.grid

    @property
    def inhibitor_env(self) -> Envelope:
        return Envelope(self.ledger.A, self.ledger.B)

    @property
    def source_env(self) -> Envelope:
        """Decay class of ``J*u^m``."""
        return _source_envelope(self.env, self.exp, self.kernel)

    def violations(self) -> list[str]:
        return hypothesis_violations(self.exp, self.kernel, self.env, self.lam, self.mu)

    def in_envelope(self, u: np.ndarray, v: np.ndarray) -> bool:
        L = self.ledger
        Pu = _envelope_values(self.grid, self.env)
        Pv = _envelope_values(self.grid, self.inhibitor_env)
        lo, hi = 1 - 1e-10, 1 + 1e-10
        return bool(np.all(u >= L.d1 * Pu * lo) and np.all(u <= L.D1 * Pu * hi)
                    and np.all(v >= L.d2 * Pv * lo) and np.all(v <= L.D2 * Pv * hi))


@dataclass
class DecoupledStep:
    Tu: Field
    Tv: Field
    singular_info: dict
    in_envelope: bool


def decoupled_map(prob: CoupledProblem, u: Field, v: Field, omega: float = 0.7,
                  inner_tol: float = 1e-10, max_inner: int = 2000) -> DecoupledStep:
    """One application of ``(u, v) -> (Tu, Tv)``."""
    if not (u.positive and v.positive):
        raise HypothesisError("u and v must be positive")
    grid, exp = prob.grid, prob.exp
    uu = u.values
    rhs = conv_array(prob.table, uu ** exp.p) / v.values ** exp.q + prob.rho.values
    Tu = helmholtz_solve(prob.lam, Field(grid, rhs), EnvelopeTrace(prob.env, prob.ledger.d1))
    K = Field(grid, conv_array(prob.table, uu ** exp.m))
    sprob = SingularProblem.from_field(K, prob.source_env, prob.mu, exp.s)
    Tv, info = solve_singular(sprob, omega=omega, tol=inner_tol, max_iter=max_inner,
                              full_output=True)
    inside = prob.in_envelope(Tu.values, Tv.values)
    if not inside:
        log.info("de-coupled map left the envelope sandwich")
    return DecoupledStep(Tu, Tv, info, inside)


def system_residuals(prob: CoupledProblem, u: Field, v: Field):
    """Relative max-norm residuals of both equations of the steady system."""
    exp = prob.exp
    fu = conv_array(prob.table, u.values ** exp.p) / v.values ** exp.q + prob.rho.values
    ru = -laplacian(u).values + prob.lam * u.values - fu
    fv = conv_array(prob.table, u.values ** exp.m) / v.values ** exp.s
    rv = -laplacian(v).values + prob.mu * v.values - fv
    return (float(np.max(np.abs(ru)) / np.max(np.abs(fu))),
            float(np.max(np.abs(rv)) / np.max(np.abs(fv))))


@dataclass
class SolveReport:
    """Outcome of a fixed-point run; ``to_dict`` gives the JSON schema."""

    converged: bool
    iterations: int
    residual_u: float
    residual_v: float
    in_envelope: list
    fitted_decay_u: tuple
    fitted_decay_v: tuple
    constants: ConstantLedger
    converged_on_boundary: bool = False
    message: str = ""
    u: Field | None = field(default=None, repr=False)
    v: Field | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_u": self.residual_u,
            "residual_v": self.residual_v,
            "in_envelope": list(self.in_envelope),
            "fitted_decay_u": list(self.fitted_decay_u),
            "fitted_decay_v": list(self.fitted_decay_v),
            "constants": self.constants.to_dict(),
        }


def _decay(w: Field):
    L = w.grid.L
    try:
        fit = fit_decay(w, (L / 4, L / 2))
        return (fit["a_est"], fit["b_est"])
    except ValueError:
        return (float("nan"), float("nan"))


def fixed_point_solve(prob: CoupledProblem, tol: float = 1e-8, max_iter: int = 300,
                      omega: float = 0.7, inner_tol: float = 1e-10, start=None) -> SolveReport:
    """Picard iteration of the de-coupled map from the sandwich midpoint.

    Raises :class:`HypothesisError` before iterating if a threshold or
    exponent hypothesis fails and :class:`InfeasibleError` if the constant
    ledger is infeasible.  Non-convergence is returned, not raised.
    ``start`` optionally overrides the initial pair ``(u0, v0)`` as arrays.
    """
    bad = prob.violations()
    if bad:
        raise HypothesisError("; ".join(bad))
    L = prob.ledger
    if not L.feasible:
        raise InfeasibleError(
            f"constant system infeasible at lambda={prob.lam:g}, mu={prob.mu:g}: "
            f"fails {', '.join(L.failures)}", ledger=L)
    grid = prob.grid
    Pu = _envelope_values(grid, prob.env)
    Pv = _envelope_values(grid, prob.inhibitor_env)
    if start is None:
        u0, v0 = np.sqrt(L.d1 * L.D1) * Pu, np.sqrt(L.d2 * L.D2) * Pv
    else:
        u0, v0 = (np.asarray(a, dtype=float) for a in start)
    u = Field(grid, u0, EnvelopeTrace(prob.env, L.d1))
    v = Field(grid, v0, EnvelopeTrace(prob.inhibitor_env, L.d2))
    history = [prob.in_envelope(u.values, v.values)]
    converged = on_boundary = False
    message = ""
    it = 0
    for it in range(1, max_iter + 1):
        try:
            step = decoupled_map(prob, u, v, omega=omega, inner_tol=inner_tol)
        except ConvergenceError as exc:
            message = f"inner singular solve failed: {exc}"
            it -= 1
            break
        du = np.max(np.abs(step.Tu.values - u.values)) / np.max(np.abs(step.Tu.values))
        dv = np.max(np.abs(step.Tv.values - v.values)) / np.max(np.abs(step.Tv.values))
        u, v = step.Tu, step.Tv
        history.append(step.in_envelope)
        on_boundary = step.singular_info["converged_on_boundary"]
        if du <= tol and dv <= tol:
            converged = history[-1]
            message = "converged" if converged else "converged outside the envelope sandwich"
            break
    else:
        message = f"no fixed point found in {max_iter} iterations"
    ru, rv = system_residuals(prob, u, v)
    return SolveReport(converged, it, ru, rv, history, _decay(u), _decay(v), L,
                       converged_on_boundary=on_boundary and converged, message=message,
                       u=u, v=v)


def multi_start_solve(prob: CoupledProblem, tol: float = 1e-8, max_iter: int = 300, **kw):
    """Run from the midpoint and both corners of the sandwich.

    Returns ``(reports, multi_fixed_point)``; the flag is set when two
    converged runs differ by more than ``1e3 * tol`` in relative sup-norm.
    """
    L = prob.ledger
    Pu = _envelope_values(prob.grid, prob.env)
    Pv = _envelope_values(prob.grid, prob.inhibitor_env)
    starts = [None, (L.d1 * Pu, L.d2 * Pv), (L.D1 * Pu, L.D2 * Pv)]
    reports = [fixed_point_solve(prob, tol=tol, max_iter=max_iter, start=s, **kw) for s in starts]
    good = [r for r in reports if r.converged]
    multi = False
    for r in good[1:]:
        for ref, cur in ((good[0].u, r.u), (good[0].v, r.v)):
            if np.max(np.abs(ref.values - cur.values)) > 1e3 * tol * ref.sup():
                multi = True
    return reports, multi

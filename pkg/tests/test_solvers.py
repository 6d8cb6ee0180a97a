import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmsteady.analytic import Envelope, Exponents, Kernel, helmholtz_of_psi, psi
from gmsteady.errors import ConvergenceError, HypothesisError, InfeasibleError
from gmsteady.grid import Field, Grid, box_half_width, sample
from gmsteady.solvers import (CoupledProblem, SingularProblem, decoupled_map, fixed_point_solve,
                              hypothesis_violations, multi_start_solve, solve_singular,
                              sub_super_constants)

EXP = Exponents(3, 2, 1, 1)
ENV = Envelope(1, 1)
KERNEL = Kernel.exp_poly(1, 8)


@pytest.fixture(scope="module")
def grid257():
    return Grid(1, box_half_width(ENV), 257)


@pytest.mark.parametrize("args, d, D", [
    ((2, 2, 1, 1), 1.0, 2.0),
    ((1, 8, 4, 1), 0.125 ** 0.5, 2.0),
])
def test_sub_super_constants(args, d, D):
    got = sub_super_constants(*args)
    assert got == pytest.approx((d, D), rel=1e-14)


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_sub_super_ratio_linear_case(c, mu):
    d, D = sub_super_constants(c, c, mu, 0)
    assert d == pytest.approx(c / (2 * mu)) and D / d == pytest.approx(4.0)


def test_sub_super_rejects():
    with pytest.raises(ValueError):
        sub_super_constants(2, 1, 1, 0)


def _manufactured(n, s=1, mu=20.0):
    w_env = Envelope(1, 1)
    g = Grid(1, 8.0, n)
    x = g.axis()
    K = helmholtz_of_psi(w_env, mu, x, 1) * psi(w_env, x, 1) ** s
    prob = SingularProblem.from_field(Field(g, K), w_env.scaled(1 + s), mu, s)
    return prob, psi(w_env, x, 1)


def test_singular_manufactured_second_order():
    errs = []
    for n in (129, 257, 513):
        prob, exact = _manufactured(n)
        errs.append(np.max(np.abs(solve_singular(prob).values - exact)))
    assert np.all(np.log2(np.array(errs[:-1]) / errs[1:]) >= 1.9)


def test_singular_linear_case_one_iteration():
    g = Grid(1, 8.0, 257)
    K = Field(g, helmholtz_of_psi(ENV, 40.0, g.axis(), 1))
    w, info = solve_singular(SingularProblem.from_field(K, ENV, 40.0, 0), full_output=True)
    assert info["iterations"] == 1 and info["residual"] <= 1e-10


def test_singular_sandwich_for_exact_envelope_source():
    g = Grid(1, 10.0, 257)
    c = 3.0
    K = sample(g, lambda x: c * psi(Envelope(2, 2), x, 1))
    prob = SingularProblem.from_field(K, Envelope(2, 2), 12.0, 1)
    w = solve_singular(prob)
    d, D = sub_super_constants(prob.c1, prob.c2, prob.mu, prob.s)
    ratio = w.values / sample(g, Envelope(1, 1)).values
    assert np.all(ratio >= d * (1 - 1e-12)) and np.all(ratio <= D * (1 + 1e-12))


def test_singular_omega_independence():
    prob, _ = _manufactured(257)
    a = solve_singular(prob, omega=1.0)
    b = solve_singular(prob, omega=0.5)
    assert np.max(np.abs(a.values - b.values)) <= 10 * 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_singular_monotone_in_source(seed):
    rng = np.random.default_rng(seed)
    g = Grid(1, 8.0, 129)
    base = sample(g, Envelope(2, 2)).values
    K1 = base * (1 + rng.random(g.shape))
    K2 = K1 * (1 + rng.random(g.shape) * rng.integers(0, 2, g.shape))
    env = Envelope(2, 2)
    w1 = solve_singular(SingularProblem.from_field(Field(g, K1), env, 12.0, 1))
    w2 = solve_singular(SingularProblem.from_field(Field(g, K2), env, 12.0, 1))
    # exact order up to the iteration tolerance
    assert np.all(w2.values >= w1.values * (1 - 1e-9))


def test_singular_problem_gates():
    g = Grid(1, 8.0, 129)
    K = sample(g, Envelope(2, 2))
    with pytest.raises(HypothesisError):
        SingularProblem.from_field(K, Envelope(2, 2), 1.0, 1)
    with pytest.raises(HypothesisError):
        SingularProblem(10.0, 1, K, Envelope(2, 2), 2.0, 3.0)
    with pytest.raises(ValueError):
        solve_singular(SingularProblem.from_field(K, Envelope(2, 2), 12.0, 1), omega=0.0)


def test_singular_nonconvergence_raises():
    prob, _ = _manufactured(129)
    with pytest.raises(ConvergenceError) as info:
        solve_singular(prob, max_iter=2)
    assert info.value.iterations == 2 and info.value.residual > 0


@pytest.fixture(scope="module")
def problem(grid257):
    return CoupledProblem.build(grid257, EXP, KERNEL, ENV, 60.0, 4.0)


def test_decoupled_corners(problem):
    L = problem.ledger
    g = problem.grid
    Pu = sample(g, ENV).values
    Pv = sample(g, problem.inhibitor_env).values
    low = decoupled_map(problem, Field(g, L.d1 * Pu), Field(g, L.D2 * Pv))
    assert np.all(low.Tu.values >= L.d1 * Pu)
    high = decoupled_map(problem, Field(g, L.D1 * Pu), Field(g, L.d2 * Pv))
    assert np.all(high.Tu.values <= L.D1 * Pu)
    assert low.in_envelope and high.in_envelope


def test_decoupled_positive_without_rho(problem):
    g = problem.grid
    zero_rho = CoupledProblem.build(g, EXP, KERNEL, ENV, 60.0, 4.0, rho=Field(g, np.zeros(g.shape)),
                                    table=problem.table, ratios=problem.ratios)
    L = problem.ledger
    step = decoupled_map(zero_rho, Field(g, L.d1 * sample(g, ENV).values),
                         Field(g, L.D2 * sample(g, problem.inhibitor_env).values))
    assert np.all(step.Tu.values >= 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_envelope_trapping(problem, seed):
    rng = np.random.default_rng(seed)
    L = problem.ledger
    g = problem.grid
    Pu = sample(g, ENV).values
    Pv = sample(g, problem.inhibitor_env).values
    u = Pu * np.exp(rng.uniform(np.log(L.d1), np.log(L.D1), g.shape))
    v = Pv * np.exp(rng.uniform(np.log(L.d2), np.log(L.D2), g.shape))
    assert decoupled_map(problem, Field(g, u), Field(g, v)).in_envelope


def test_fixed_point_end_to_end(problem):
    rep = fixed_point_solve(problem)
    assert rep.converged and max(rep.residual_u, rep.residual_v) <= 1e-5
    assert all(rep.in_envelope)
    A, B = problem.ledger.A, problem.ledger.B
    assert rep.fitted_decay_v[0] == pytest.approx(A, rel=0.1)
    assert rep.fitted_decay_v[1] == pytest.approx(B, rel=0.1)
    d = rep.to_dict()
    assert set(d) == {"converged", "iterations", "residual_u", "residual_v", "in_envelope",
                      "fitted_decay_u", "fitted_decay_v", "constants"}


def test_fixed_point_gates(grid257, problem):
    below = CoupledProblem.build(grid257, EXP, KERNEL, ENV, 9.0, 4.0, table=problem.table,
                                 ratios=problem.ratios)
    with pytest.raises(HypothesisError, match="lambda"):
        fixed_point_solve(below)
    infeasible = CoupledProblem.build(grid257, EXP, KERNEL, ENV, 60.0, 1e4, table=problem.table,
                                      ratios=problem.ratios)
    with pytest.raises(InfeasibleError) as info:
        fixed_point_solve(infeasible)
    assert info.value.ledger.failures


def test_turing_side_rejected(grid257):
    with pytest.raises(HypothesisError, match="anti-Turing"):
        CoupledProblem.build(grid257, Exponents(2, 3, 2, 0), KERNEL, ENV, 60.0, 4.0)


def test_nonconvergence_is_data(problem):
    rep = fixed_point_solve(problem, max_iter=2)
    assert not rep.converged and "no fixed point found" in rep.message


def test_multi_start_agrees(problem):
    reports, multi = multi_start_solve(problem)
    assert all(r.converged for r in reports) and not multi


def test_hypothesis_messages():
    riesz = Kernel.riesz(0.5)
    msgs = hypothesis_violations(EXP, riesz, Envelope(0.4, 0))
    assert any("non-existence regime" in m for m in msgs)
    msgs = hypothesis_violations(EXP, Kernel.exp_poly(1, 2), ENV)
    assert any("M_J" in m for m in msgs)
    msgs = hypothesis_violations(EXP, Kernel.power(3), ENV)
    assert any("exponential decay" in m for m in msgs)
    assert hypothesis_violations(EXP, KERNEL, ENV, 60.0, 4.0) == []

import math

import numpy as np
import pytest
from scipy import integrate

from gmsteady.analytic import Envelope, Kernel
from gmsteady.convolve import build_table
from gmsteady.errors import DegenerateFitError, HypothesisError
from gmsteady.grid import Field, Grid, sample
from gmsteady.verify import (CHECKS, certify_condition_E, condition_E_growth, fit_decay,
                             nonexistence_probe, riesz_origin_value, run_check, verify_conv_exp,
                             verify_conv_pow, verify_envelope_sandwich, verify_riesz_estimate)


def test_conv_exp_bounded_and_stable():
    rep = verify_conv_exp(Kernel.exp_poly(1, 3), Envelope(1, 1), Grid(1, 20.0, 257))
    assert rep.bounded and rep.stable_under_refinement


def test_conv_exp_sharp_mode_at_moment_boundary():
    k = Kernel.exp_poly(1, 2)
    g = Grid(1, 20.0, 257)
    with pytest.raises(HypothesisError):
        verify_conv_exp(k, Envelope(1, 1), g)
    rep = verify_conv_exp(k, Envelope(1, 1), g, sharp=True)
    assert rep.bounded and rep.stable_under_refinement
    with pytest.raises(HypothesisError):
        verify_conv_exp(k, Envelope(0, 2), g, sharp=True)


def test_conv_exp_constant_input_gives_l1_norm():
    k = Kernel.exp_poly(0, 4)
    g = Grid(1, 20.0, 257)
    rep = verify_conv_exp(k, Envelope(0, 0), g)
    # interior nodes sit at least L/2 from the box edge, so the ratio is the table mass
    assert rep.sup_ratio == pytest.approx(rep.inf_ratio, rel=1e-12)
    assert rep.inf_ratio == pytest.approx(build_table(k, g).total_weight, rel=1e-12)
    assert rep.refined_inf == pytest.approx(k.l1_norm(), rel=0.01)


def test_conv_pow():
    rep = verify_conv_pow(Kernel.power(2), 0.5, Grid(1, 40.0, 257))
    assert rep.bounded and rep.stable_under_refinement
    with pytest.raises(HypothesisError):
        verify_conv_pow(Kernel.power(2), 1.0, Grid(1, 40.0, 257))


def test_conv_pow_small_rate_near_constant():
    k = Kernel.power(3)
    rep = verify_conv_pow(k, 0.01, Grid(1, 200.0, 2001))
    assert rep.sup_ratio / rep.inf_ratio < 1.1
    assert rep.sup_ratio == pytest.approx(k.l1_norm(), rel=0.05)


def test_riesz_origin_value_is_4pi():
    assert riesz_origin_value(0.5, 1.5, 2) == pytest.approx(4 * math.pi, rel=1e-14)
    # independent adaptive quadrature of the radial integral
    ref = 2 * math.pi * integrate.quad(lambda r: r ** -0.5 * (1 + r) ** -1.5, 0, np.inf)[0]
    assert riesz_origin_value(0.5, 1.5, 2) == pytest.approx(ref, rel=1e-9)


def test_riesz_estimate_gate():
    with pytest.raises(HypothesisError):
        verify_riesz_estimate(0.5, 1.0, Grid(1, 20.0, 257))


def test_riesz_estimate_small_grid():
    rep = verify_riesz_estimate(0.5, 1.5, Grid(2, 20.0, 65))
    assert rep.bounded
    assert rep.extras["I0_exact"] == pytest.approx(4 * math.pi)


@pytest.mark.parametrize("theta,a,m,N,x", [(0.5, 0.4, 1, 1, 1.0), (1.2, 0.5, 2, 2, [1.0, 0.5]),
                                           (2.5, 0.5, 2, 3, [0.0, 1.0, 0.0])])
def test_probe_exponent(theta, a, m, N, x):
    res = nonexistence_probe(theta, a, m, N, x)
    gap = theta - a * m
    assert res["fitted_growth_exponent"] == pytest.approx(gap, rel=0.05)
    assert res["model"] == "power"
    assert np.all(np.diff(res["values"]) > 0)


def test_probe_borderline_and_gate():
    assert nonexistence_probe(0.4, 0.4, 1, 1, 1.0)["model"] == "log"
    with pytest.raises(HypothesisError, match="integrable regime"):
        nonexistence_probe(0.5, 0.6, 1, 1, 1.0)


def test_probe_matches_closed_form_1d():
    # T(L) in 1D against direct adaptive quadrature of the defining integral
    th, a, m, x = 0.5, 0.4, 1, 1.0
    Ls = [20.0, 40.0, 80.0, 160.0, 320.0]
    res = nonexistence_probe(th, a, m, 1, x, Ls)
    f = lambda y: abs(x - y) ** (th - 1) * abs(y) ** (-a * m)
    for L, T in zip(Ls, res["values"]):
        ref = integrate.quad(f, 2, L, limit=200)[0] + integrate.quad(f, -L, -2, limit=200)[0]
        assert T == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("a,b,N,lam", [(1, 1, 1, 20.0), (0, 0, 1, 1.0), (1, 1, 1, 10.01),
                                       (2, 0.5, 2, 2 * 15.5), (0.5, 2, 3, 26.0)])
def test_envelope_sandwich(a, b, N, lam):
    assert verify_envelope_sandwich(Envelope(a, b), lam, N, 10_000, seed=1)


def test_envelope_sandwich_gate():
    with pytest.raises(HypothesisError):
        verify_envelope_sandwich(Envelope(1, 1), 10.0, 1)


@pytest.mark.parametrize("env, scale", [(Envelope(2, 0), 1.0), (Envelope(1, 1), 3.0)])
def test_fit_decay_recovers_model(env, scale):
    g = Grid(1, 20.0, 513)
    fit = fit_decay(Field(g, scale * sample(g, env).values), (5.0, 10.0))
    assert fit["a_est"] == pytest.approx(env.a, abs=0.02)
    assert fit["b_est"] == pytest.approx(env.b, abs=0.02)
    assert fit["r_squared"] > 0.999


def test_fit_decay_degenerate():
    g = Grid(1, 20.0, 65)
    with pytest.raises(DegenerateFitError):
        fit_decay(sample(g, Envelope(1, 1)), (5.0, 5.3))


def test_condition_E():
    rep = certify_condition_E(Kernel.exp_poly(0, 1), 0.5, Grid(1, 20.0, 257))
    assert rep.bounded and rep.stable_under_refinement
    with pytest.raises(HypothesisError):
        certify_condition_E(Kernel.power(2), 0.5, Grid(1, 20.0, 257))
    with pytest.raises(HypothesisError):
        certify_condition_E(Kernel.exp_poly(0, 1), 0.0, Grid(1, 20.0, 257))


def test_condition_E_growth_for_power_kernel():
    assert condition_E_growth(Kernel.power(2), 0.5, Grid(1, 40.0, 257))["grows"]


@pytest.mark.parametrize("name", sorted(CHECKS))
def test_default_checks_pass(name):
    if name == "riesz_estimate":
        res = run_check(name, {"n": 65, "L": 20.0})
    else:
        res = run_check(name)
    assert res["passed"], res
    assert {"name", "hypotheses", "params", "result", "passed"} <= set(res)


def test_run_check_rejects_unknown():
    with pytest.raises(KeyError):
        run_check("no_such_check")
    with pytest.raises(ValueError):
        run_check("conv_exp", {"bogus": 1})


def test_condition_E_expected_rejection_passes():
    res = run_check("condition_E", {"kernel": {"family": "power", "alpha": 2}, "L": 40.0})
    assert res["passed"] and "expected_rejection" in res["result"]

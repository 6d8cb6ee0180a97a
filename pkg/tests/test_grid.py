import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmsteady.analytic import Envelope, helmholtz_of_psi, psi
from gmsteady.errors import SolverError
from gmsteady.grid import (EnvelopeTrace, Field, Grid, Zero, box_half_width, helmholtz_solve,
                           laplacian, monotone_check, read_field, read_field_csv, sample,
                           write_field, write_field_csv)


def test_grid_basics():
    g = Grid(2, 4.0, 17)
    assert g.h == pytest.approx(0.5)
    assert g.shape == (17, 17) and g.size == 289
    assert g.points()[g.center].tolist() == [0.0, 0.0]
    assert g.refined().n == 33 and g.refined().h == pytest.approx(g.h / 2)


@pytest.mark.parametrize("args", [(4, 1.0, 17), (1, 0.0, 17), (1, 1.0, 18), (1, 1.0, 15)])
def test_grid_rejects(args):
    with pytest.raises(ValueError):
        Grid(*args)


def test_sample_examples():
    g = Grid(1, 5.0, 33)
    assert np.all(sample(g, lambda x: 1.0).values == 1.0)
    assert np.all(sample(g, Envelope(0, 0)).values == 1.0)
    w = sample(g, Envelope(1, 1)).values
    assert np.array_equal(w, w[::-1])
    assert np.all(np.diff(w[g.center[0]:]) < 0)
    with pytest.raises(ValueError), np.errstate(divide="ignore"):
        sample(g, lambda x: 1.0 / x[..., 0])


def test_field_is_immutable_copy():
    g = Grid(1, 1.0, 17)
    arr = np.ones(17)
    f = Field(g, arr)
    arr[0] = 5.0
    assert f.values[0] == 1.0
    with pytest.raises(ValueError):
        f.values[0] = 2.0
    with pytest.raises(ValueError):
        Field(g, np.full(17, np.nan))


def test_laplacian_of_constant_with_matching_trace():
    g = Grid(2, 3.0, 17)
    w = Field(g, np.full(g.shape, 2.5), EnvelopeTrace(Envelope(0, 0), 2.5))
    assert np.allclose(laplacian(w).values, 0.0, atol=1e-12)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_laplacian_exact_on_quadratics(N):
    g = Grid(N, 2.0, 17)
    x = g.points()
    vals = np.sum(x ** 2, axis=-1) + 3 * x[..., 0] + 1
    lap = laplacian(Field(g, vals)).values
    inner = (slice(1, -1),) * N
    assert np.allclose(lap[inner], 2.0 * N, atol=1e-10)


def test_laplacian_psi_second_order():
    env = Envelope(1, 1)
    errs = []
    for n in (65, 129, 257):
        g = Grid(1, 8.0, n)
        x = g.axis()
        w = Field(g, psi(env, x, 1), EnvelopeTrace(env))
        exact = -(helmholtz_of_psi(env, 1.0, x, 1) - psi(env, x, 1))
        errs.append(np.max(np.abs(laplacian(w).values - exact)))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders > 1.9)


def test_helmholtz_constant_and_zero():
    g = Grid(2, 3.0, 33)
    lam = 3.0
    w = helmholtz_solve(lam, Field(g, np.full(g.shape, lam)), EnvelopeTrace(Envelope(0, 0), 1.0))
    assert np.allclose(w.values, 1.0, atol=1e-12)
    z = helmholtz_solve(lam, Field(g, np.zeros(g.shape)), Zero())
    assert np.all(z.values == 0.0)


@pytest.mark.parametrize("N,ns", [(1, (129, 257, 513)), (2, (33, 65, 129))])
def test_helmholtz_manufactured_order(N, ns):
    env, lam = Envelope(1, 1), 20.0
    errs = []
    for n in ns:
        g = Grid(N, 8.0, n)
        x = g.points()
        rhs = Field(g, helmholtz_of_psi(env, lam, x, N))
        w = helmholtz_solve(lam, rhs, EnvelopeTrace(env))
        errs.append(np.max(np.abs(w.values - psi(env, x, N))))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders >= 1.9), orders


def test_helmholtz_rejects_bad_lambda():
    g = Grid(1, 1.0, 17)
    with pytest.raises(ValueError):
        helmholtz_solve(0.0, Field(g, np.ones(17)))


def test_solver_error_is_runtime_error():
    assert issubclass(SolverError, RuntimeError)


def test_monotone_examples():
    g = Grid(1, 4.0, 65)
    one, zero = Field(g, np.ones(g.shape)), Field(g, np.zeros(g.shape))
    assert monotone_check(2.0, one, zero, Zero(), Zero())
    assert monotone_check(2.0, one, one, Zero(), Zero())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_comparison_principle_random(seed):
    rng = np.random.default_rng(seed)
    g = Grid(1, 5.0, 129)
    r2 = rng.standard_normal(g.shape) * 10 ** rng.uniform(-3, 3)
    r1 = r2 + np.abs(rng.standard_normal(g.shape)) * rng.integers(0, 2, g.shape)
    s2 = rng.uniform(0, 2)
    b1, b2 = EnvelopeTrace(Envelope(1, 1), s2 + rng.uniform(0, 1)), EnvelopeTrace(Envelope(1, 1), s2)
    lam = 10 ** rng.uniform(-2, 3)
    assert monotone_check(lam, Field(g, r1), Field(g, r2), b1, b2)


def test_box_half_width():
    env = Envelope(1, 1)
    L = box_half_width(env)
    assert psi(env, L) / psi(env, 0.0) == pytest.approx(1e-8, rel=1e-6)
    with pytest.raises(ValueError):
        box_half_width(Envelope(1, 0))


@pytest.mark.parametrize("N", [1, 2, 3])
def test_binary_roundtrip(tmp_path, N):
    g = Grid(N, 2.5, 17)
    w = Field(g, np.random.default_rng(1).random(g.shape))
    path = tmp_path / "w.field"
    write_field(path, w)
    data = path.read_bytes()
    assert len(data) == 24 + 8 * g.size
    assert np.frombuffer(data[:16], "<i8").tolist() == [N, 17]
    back = read_field(path)
    assert back.grid == g and np.array_equal(back.values, w.values)


@pytest.mark.parametrize("N", [1, 2])
def test_csv_roundtrip(tmp_path, N):
    g = Grid(N, 1.5, 17)
    w = sample(g, Envelope(1, 2))
    path = tmp_path / "w.csv"
    write_field_csv(path, w, header_lines=["note"])
    back = read_field_csv(path)
    assert back.grid == g and np.array_equal(back.values, w.values)

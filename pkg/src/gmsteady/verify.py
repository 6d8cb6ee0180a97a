"""Numerical checks of the convolution and envelope estimates.

The two-sided bounds are existence statements about constants, so the
checks measure extreme ratios on interior nodes (``|x| <= L/2``) and ask
that they stay finite, positive and stable within a factor of two under
one grid refinement.  Closed-form checks need no grid at all.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special

from .analytic import (Envelope, Kernel, helmholtz_bracket, helmholtz_of_psi,
                       lambda_threshold, phi, psi, sphere_area)
from .convolve import build_table, conv_array, holder_diagnostic
from .errors import DegenerateFitError, DomainError, HypothesisError
from .grid import Field, Grid, sample

__all__ = [
    "RatioReport", "verify_conv_exp", "verify_conv_pow", "verify_riesz_estimate",
    "nonexistence_probe", "verify_envelope_sandwich", "fit_decay", "certify_condition_E",
    "condition_E_growth", "riesz_origin_value", "kernel_from_spec", "run_check", "CHECKS",
]

REFINE_FACTOR = 2.0


@dataclass
class RatioReport:
    inf_ratio: float
    sup_ratio: float
    sample_count: int
    grid_meta: dict
    stable_under_refinement: bool
    refined_inf: float = math.nan
    refined_sup: float = math.nan
    extras: dict = field(default_factory=dict)

    @property
    def bounded(self) -> bool:
        return bool(0 < self.inf_ratio <= self.sup_ratio < math.inf)

    def to_dict(self) -> dict:
        return asdict(self)


def _interior(grid: Grid):
    return grid.radius() <= grid.L / 2 + 1e-12


def _ratio_report(grid: Grid, ratio_on, method="auto", extras=None) -> RatioReport:
    """``ratio_on(grid, method)`` returns the nodal ratio array."""
    out = []
    for g in (grid, grid.refined()):
        r = ratio_on(g, method)[_interior(g)]
        out.append((float(r.min()), float(r.max()), r.size))
    (i0, s0, cnt), (i1, s1, _) = out

    def close(x, y):
        return x > 0 and y > 0 and math.isfinite(x) and math.isfinite(y) \
            and max(x / y, y / x) <= REFINE_FACTOR

    stable = close(i0, i1) and close(s0, s1)
    return RatioReport(i0, s0, cnt, grid.meta(), stable, i1, s1, dict(extras or {}))


def _check_grid(kernel: Kernel, grid: Grid):
    if kernel.dim != grid.N:
        raise DomainError(f"kernel is {kernel.dim}-dimensional, grid is {grid.N}-dimensional")


def verify_conv_exp(kernel: Kernel, env: Envelope, grid: Grid, sharp: bool = False) -> RatioReport:
    """Ratio ``(J*Psi_{a,b}) / Psi_{a,b}`` for an exponentially decaying kernel.

    The default precondition is ``a + b < M_J``.  With ``sharp=True`` only
    ``b < M_J`` is required: the polynomial factor never changes which
    exponential rate dominates the convolution.
    """
    _check_grid(kernel, grid)
    if kernel.M_J is None:
        raise HypothesisError("two-sided exponential bounds need a kernel with exponential decay")
    if sharp:
        if not env.b < kernel.M_J:
            raise HypothesisError(f"need b < M_J, got b={env.b:g}, M_J={kernel.M_J:g}")
    elif not env.a + env.b < kernel.M_J:
        raise HypothesisError(f"need a+b < M_J, got a+b={env.a + env.b:g}, M_J={kernel.M_J:g}")

    def ratio(g, method):
        f = sample(g, env).values
        return conv_array(build_table(kernel, g), f, method) / f

    return _ratio_report(grid, ratio)


def verify_conv_pow(kernel: Kernel, a: float, grid: Grid) -> RatioReport:
    """Ratio ``(J*Phi_a) / Phi_a`` with ``Phi_a = (1+|x|^2)^(-a/2)``."""
    _check_grid(kernel, grid)
    if kernel.singular:
        raise HypothesisError("power-weight bounds need an integrable kernel")
    if not 0 < a < grid.N:
        raise HypothesisError(f"need 0 < a < N={grid.N}, got a={a:g}")
    env = Envelope(a, 0.0)

    def ratio(g, method):
        f = sample(g, env).values
        return conv_array(build_table(kernel, g), f, method) / f

    return _ratio_report(grid, ratio)


def riesz_origin_value(theta: float, kappa: float, N: int) -> float:
    """``int |y|^(theta-N) (1+|y|)^(-kappa) dy`` over R^N, a Beta integral."""
    return sphere_area(N) * float(special.beta(theta, kappa - theta))


def verify_riesz_estimate(theta: float, kappa: float, grid: Grid) -> RatioReport:
    """Ratio ``I(x) / (1+|x|)^(theta-kappa)`` for the truncated Riesz potential.

    ``extras`` records ``I0`` (the grid value at the origin) and the
    whole-space value ``I0_exact``.
    """
    N = grid.N
    if not 0 < theta < kappa < N:
        raise HypothesisError(f"need 0 < theta < kappa < N={N}, got theta={theta:g}, kappa={kappa:g}")
    kernel = Kernel.riesz(theta, N)
    I0 = {}

    def ratio(g, method):
        r = g.radius()
        I = conv_array(build_table(kernel, g), (1.0 + r) ** (-kappa), method)
        I0.setdefault("I0", float(I[g.center]))
        return I / (1.0 + r) ** (theta - kappa)

    rep = _ratio_report(grid, ratio, method="fft")
    rep.extras = {"I0": I0["I0"], "I0_exact": riesz_origin_value(theta, kappa, N)}
    return rep


# --------------------------------------------------------------------------
# divergence probe
# --------------------------------------------------------------------------

def _angular_riesz(theta, N, rho, r):
    """Integral of ``|x - r w|^(theta-N)`` over the unit sphere, ``|x| = rho``."""
    e = theta - N
    if N == 1:
        return (r - rho) ** e + (r + rho) ** e
    if N == 2:
        f = lambda t: (r * r + rho * rho - 2 * r * rho * math.cos(t)) ** (e / 2)
        return 2.0 * integrate.quad(f, 0.0, math.pi, epsabs=0, epsrel=1e-12)[0]
    f = lambda t: (r * r + rho * rho - 2 * r * rho * math.cos(t)) ** (e / 2) * math.sin(t)
    return 2.0 * math.pi * integrate.quad(f, 0.0, math.pi, epsabs=0, epsrel=1e-12)[0]


def nonexistence_probe(theta: float, a: float, m: float, N: int, x, L_list=None) -> dict:
    """Growth of ``T(L) = int_{2|x|<|y|<L} |x-y|^(theta-N) |y|^(-a m) dy``.

    The exponent is the log-log slope of the increments of ``T`` between
    consecutive ``L`` values, which removes the additive constant.  A power
    law ``c L^e + d`` and a logarithm ``c log L + d`` are then fitted to ``T``
    and the smaller residual picks the model.  Near-ties, and exponents so
    small that ``L^e`` moves by under 1% across the range, go to the logarithm.
    """
    if not 0 < theta < N:
        raise HypothesisError(f"the Riesz kernel needs 0 < theta < N={N}")
    if a * m > theta:
        raise HypothesisError(
            f"a*m={a * m:g} > theta={theta:g}: integrable regime, the divergence probe "
            "applies only when a*m <= theta (Riesz non-existence regime)")
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    rho = float(np.sqrt(np.sum(xv ** 2)))
    if rho <= 0:
        raise DomainError("the probe point must differ from the origin")
    r0 = 2.0 * rho
    if L_list is None:
        L_list = np.geomspace(50.0 * r0, 5000.0 * r0, 9)
    Ls = np.sort(np.asarray(L_list, dtype=float))
    if len(Ls) < 5 or Ls[-1] < 10 * Ls[0]:
        raise DomainError("need at least 5 values of L spanning one decade")
    if Ls[0] <= r0:
        raise DomainError(f"every L must exceed 2|x|={r0:g}")
    g = lambda r: r ** (N - 1 - a * m) * _angular_riesz(theta, N, rho, r)
    edges = np.concatenate([[r0], Ls])
    pieces = [integrate.quad(g, lo, hi, epsabs=0, epsrel=1e-12, limit=200)[0]
              for lo, hi in zip(edges[:-1], edges[1:])]
    T = np.cumsum(pieces)
    inc = np.asarray(pieces[1:])
    mids = np.sqrt(Ls[1:] * Ls[:-1])
    widths = np.log(Ls[1:] / Ls[:-1])
    slope = float(np.polyfit(np.log(mids), np.log(inc / widths), 1)[0])

    def rss(basis):
        X = np.column_stack([basis, np.ones_like(T)])
        coef, *_ = np.linalg.lstsq(X, T, rcond=None)
        return float(np.sum((X @ coef - T) ** 2))

    rss_log = rss(np.log(Ls))
    rss_pow = rss(Ls ** slope) if abs(slope) > 1e-12 else rss_log
    # over the swept range a power law this flat is indistinguishable from log L
    flat = abs(slope) * math.log(Ls[-1] / Ls[0]) < 0.01
    model = "log" if flat or rss_log <= 2.0 * rss_pow else "power"
    return {"fitted_growth_exponent": slope, "values": T.tolist(), "L": Ls.tolist(),
            "model": model, "rss_power": rss_pow, "rss_log": rss_log,
            "expected_exponent": theta - a * m}


# --------------------------------------------------------------------------
# closed-form sandwich and decay fitting
# --------------------------------------------------------------------------

def _random_points(N, count, rng):
    # half on a moderate range, half log-spread to reach the far field
    r = np.concatenate([rng.uniform(0.0, 10.0, count - count // 2),
                        10.0 ** rng.uniform(-3.0, 4.0, count // 2)])
    g = rng.standard_normal((count, N))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * r[:, None]


def verify_envelope_sandwich(env: Envelope, lam: float, N: int, sample_count: int = 10_000,
                             seed: int = 0) -> bool:
    """Whether ``lam/2 Psi <= (-Delta + lam) Psi <= 2 lam Psi`` at random points.

    Checked on the values and on the bracket ``(-Delta+lam)Psi / Psi`` itself,
    which stays meaningful where ``Psi`` underflows.
    """
    thr = lambda_threshold(env, N)
    if not lam > thr:
        raise HypothesisError(f"lambda={lam:g} must exceed the envelope threshold {thr:.6g}")
    rng = np.random.default_rng(seed)
    pts = _random_points(N, sample_count, rng)
    x = pts[:, 0] if N == 1 else pts
    P = psi(env, x, N)
    H = helmholtz_of_psi(env, lam, x, N)
    br = helmholtz_bracket(env, lam, phi(x, N), N)
    # subnormal values round independently; the bracket check covers those points
    normal = P >= np.finfo(float).tiny
    Hn, Pn = H[normal], P[normal]
    ok_vals = np.all(Hn >= 0.5 * lam * Pn) and np.all(Hn <= 2.0 * lam * Pn)
    ok_br = np.all(br >= 0.5 * lam) and np.all(br <= 2.0 * lam)
    return bool(ok_vals and ok_br)


def fit_decay(w: Field, annulus) -> dict:
    """Least squares ``log w = -a log phi - b phi + c`` over annulus nodes."""
    r_in, r_out = annulus
    grid = w.grid
    r = grid.radius()
    mask = (r >= r_in) & (r <= r_out)
    vals = w.values[mask]
    if np.any(vals <= 0):
        raise DomainError("w must be positive on the annulus")
    ph = np.sqrt(1.0 + r[mask] ** 2)
    if len(np.unique(np.round(ph, 12))) < 3:
        raise DegenerateFitError(f"annulus [{r_in:g}, {r_out:g}] holds fewer than 3 distinct radii")
    X = np.column_stack([-np.log(ph), -ph, np.ones_like(ph)])
    y = np.log(vals)
    coef, _, rank, sv = np.linalg.lstsq(X, y, rcond=None)
    if rank < 3 or sv[-1] / sv[0] < 1e-13:
        raise DegenerateFitError("annulus too thin to separate the power and exponential rates")
    resid = y - X @ coef
    tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / tot if tot > 0 else 1.0
    return {"a_est": float(coef[0]), "b_est": float(coef[1]), "r_squared": r2,
            "count": int(mask.sum())}


# --------------------------------------------------------------------------
# condition (E)
# --------------------------------------------------------------------------

def _exp_weight_ratio(kernel, b):
    def ratio(g, method):
        wgt = np.exp(-b * g.radius())
        return conv_array(build_table(kernel, g), wgt, method) / wgt
    return ratio


def certify_condition_E(kernel: Kernel, b: float, grid: Grid) -> RatioReport:
    """Ratio ``(J * e^{-b|y|}) / e^{-b|x|}``; needs ``0 < b < M_J``."""
    _check_grid(kernel, grid)
    if kernel.M_J is None:
        raise HypothesisError(
            f"{kernel.family} kernel has no exponential decay rate: it satisfies the power-weight "
            "condition but not the exponential-weight one")
    if not 0 < b < kernel.M_J:
        raise HypothesisError(f"need 0 < b < M_J={kernel.M_J:g}, got b={b:g}")
    return _ratio_report(grid, _exp_weight_ratio(kernel, b))


def condition_E_growth(kernel: Kernel, b: float, grid: Grid) -> dict:
    """Exponential-weight ratio at ``|x| = L/4`` and ``|x| = L/2`` on the first axis."""
    _check_grid(kernel, grid)
    if not b > 0:
        raise HypothesisError("need b > 0")
    R = _exp_weight_ratio(kernel, b)(grid, "auto")
    ax = grid.axis()
    c = grid.center
    out = {}
    for key, target in (("ratio_quarter", grid.L / 4), ("ratio_half", grid.L / 2)):
        idx = list(c)
        idx[0] = int(np.argmin(np.abs(ax - target)))
        out[key] = float(R[tuple(idx)])
    out["grows"] = out["ratio_half"] > out["ratio_quarter"]
    return out


# --------------------------------------------------------------------------
# batch runner
# --------------------------------------------------------------------------

def kernel_from_spec(spec: dict, dim: int) -> Kernel:
    """Build a kernel from ``{"family": ..., "alpha", "beta", "theta"}``."""
    allowed = {"family", "alpha", "beta", "theta"}
    extra = set(spec) - allowed
    if extra:
        raise ValueError(f"unknown kernel keys: {sorted(extra)}")
    if "family" not in spec:
        raise ValueError("kernel spec needs a family")
    kw = {k: float(spec[k]) for k in ("alpha", "beta", "theta") if k in spec}
    return Kernel(str(spec["family"]), int(dim), **kw)


def _grid_of(p):
    return Grid(int(p["N"]), float(p["L"]), int(p["n"]))


def _check_envelope_sandwich(p, seed):
    env = Envelope(p["a"], p["b"])
    lam = p["lam"] if p.get("lam") is not None else 2.0 * lambda_threshold(env, p["N"])
    lam = max(lam, 1e-12)
    ok = verify_envelope_sandwich(env, lam, p["N"], p["sample_count"], seed=seed)
    return {"lambda": lam, "all_points_pass": ok}, ok


def _ratio_result(rep: RatioReport):
    return rep.to_dict(), rep.bounded and rep.stable_under_refinement


def _check_conv_exp(p, seed):
    k = kernel_from_spec(p["kernel"], p["N"])
    env = Envelope(p["a"], p["b"])
    return _ratio_result(verify_conv_exp(k, env, _grid_of(p), sharp=bool(p["sharp"])))


def _check_conv_pow(p, seed):
    k = kernel_from_spec(p["kernel"], p["N"])
    return _ratio_result(verify_conv_pow(k, p["a"], _grid_of(p)))


def _check_riesz(p, seed):
    rep = verify_riesz_estimate(p["theta"], p["kappa"], _grid_of(p))
    res, ok = _ratio_result(rep)
    e = rep.extras
    ok = ok and abs(e["I0"] - e["I0_exact"]) <= 0.05 * e["I0_exact"]
    return res, ok


def _check_condition_E(p, seed):
    k = kernel_from_spec(p["kernel"], p["N"])
    g = _grid_of(p)
    try:
        rep = certify_condition_E(k, p["b"], g)
    except HypothesisError as exc:
        if k.M_J is not None:
            raise
        growth = condition_E_growth(k, p["b"], g)
        return {"expected_rejection": str(exc), **growth}, growth["grows"]
    return _ratio_result(rep)


def _check_probe(p, seed):
    res = nonexistence_probe(p["theta"], p["a"], p["m"], p["N"], p["x"], p.get("L_list"))
    gap = p["theta"] - p["a"] * p["m"]
    if gap >= 0.05:
        ok = abs(res["fitted_growth_exponent"] - gap) <= 0.05 * gap
    elif gap == 0:
        ok = res["model"] == "log"
    else:
        ok = res["fitted_growth_exponent"] > -1e-3
    return res, ok


def _check_holder(p, seed):
    g0 = _grid_of(p)
    k = Kernel.riesz(p["theta"], g0.N)
    env = Envelope(p["a"], p["b"])
    vals = []
    for g in (g0, g0.refined()):
        d = holder_diagnostic(build_table(k, g), sample(g, env), p["r"], p["pair_count"], seed=seed)
        vals.append(d)
    q0, q1 = vals[0]["quotient_sup"], vals[1]["quotient_sup"]
    ok = 0 < q0 < math.inf and 0 < q1 < math.inf and max(q0 / q1, q1 / q0) <= REFINE_FACTOR
    return {"coarse": vals[0], "refined": vals[1], "grid_meta": g0.meta()}, ok


_GRID1 = {"N": 1, "L": 20.0, "n": 257}

CHECKS = {
    "envelope_sandwich": (_check_envelope_sandwich,
                          {"a": 1.0, "b": 1.0, "N": 1, "lam": None, "sample_count": 10_000}),
    "conv_exp": (_check_conv_exp,
                 {"kernel": {"family": "exppoly", "alpha": 1.0, "beta": 3.0}, "a": 1.0, "b": 1.0,
                  "sharp": False, **_GRID1}),
    "conv_pow": (_check_conv_pow,
                 {"kernel": {"family": "power", "alpha": 3.0}, "a": 0.5, **_GRID1, "L": 40.0}),
    "riesz_estimate": (_check_riesz,
                       {"theta": 0.5, "kappa": 1.5, "N": 2, "L": 40.0, "n": 257}),
    "condition_E": (_check_condition_E,
                    {"kernel": {"family": "exppoly", "alpha": 0.0, "beta": 1.0}, "b": 0.5,
                     **_GRID1}),
    "nonexistence_probe": (_check_probe,
                           {"theta": 0.5, "a": 0.4, "m": 1.0, "N": 1, "x": 1.0, "L_list": None}),
    "holder": (_check_holder,
               {"theta": 0.5, "r": 4.0, "a": 1.0, "b": 1.0, "pair_count": 2000,
                "N": 1, "L": 10.0, "n": 257}),
}

_HYPOTHESES = {
    "envelope_sandwich": "lambda above the envelope threshold",
    "conv_exp": "a + b < M_J (b < M_J in sharp mode)",
    "conv_pow": "0 < a < N, integrable kernel",
    "riesz_estimate": "0 < theta < kappa < N",
    "condition_E": "0 < b < M_J; kernels without M_J must show ratio growth",
    "nonexistence_probe": "a*m <= theta",
    "holder": "theta - 1 < N/r < theta",
}


def run_check(name: str, params: dict | None = None, seed: int = 0) -> dict:
    """Run one named check; returns ``{name, hypotheses, params, result, passed}``.

    Unknown parameter names are errors.  Hypothesis violations propagate.
    """
    if name not in CHECKS:
        raise KeyError(f"unknown check {name!r}; known: {sorted(CHECKS)}")
    fn, defaults = CHECKS[name]
    params = dict(params or {})
    extra = set(params) - set(defaults)
    if extra:
        raise ValueError(f"unknown parameters for {name}: {sorted(extra)}")
    p = {**defaults, **params}
    result, ok = fn(p, seed)
    return {"name": name, "hypotheses": _HYPOTHESES[name], "params": p,
            "result": result, "passed": bool(ok)}

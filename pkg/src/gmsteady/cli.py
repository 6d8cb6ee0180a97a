"""Command-line entry point: ``gmsteady {solve,sweep,verify,probe} --config FILE``.

Exit codes: 0 success, 1 configuration or hypothesis violation,
2 non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analytic import Envelope, Exponents, Kernel, psi
from .convolve import build_table
from .errors import ConvergenceError, DomainError, HypothesisError, InfeasibleError, SolverError
from .grid import Field, Grid, box_half_width, sample, write_field
from .solvers import CoupledProblem, fixed_point_solve, hypothesis_violations, measure_ratios
from .verify import fit_decay, kernel_from_spec, nonexistence_probe, run_check

log = logging.getLogger("gmsteady")

EXIT_OK, EXIT_CONFIG, EXIT_NOCONV = 0, 1, 2


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

_TOP = {"problem", "rates", "solver", "output", "seed", "checks", "probe"}
_PROBLEM = {"N", "L", "n", "kernel", "exponents", "envelope", "rho"}
_EXPONENTS = {"p", "q", "m", "s"}
_RATES = {"lambda", "mu"}
_RANGE = {"min", "max", "count", "spacing"}
_SOLVER = {"tol", "max_iter", "omega", "residual_tol", "inner_tol"}
_OUTPUT = {"directory", "formats"}
_FORMATS = {"field", "csv", "json"}
_PROBE = {"theta", "a", "m", "N", "x", "L_list"}

SOLVER_DEFAULTS = {"tol": 1e-8, "max_iter": 300, "omega": 0.7, "residual_tol": 1e-5,
                   "inner_tol": 1e-10}


def _keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = set(block) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def _need(block, key, where):
    if key not in block:
        raise ConfigError(f"{where} is missing {key!r}")
    return block[key]


@dataclass
class Problem:
    grid: Grid
    exp: Exponents
    kernel: Kernel
    env: Envelope
    rho_alpha: float
    rho_beta: float

    def rho(self) -> Field:
        """``rho = Psi (alpha + (beta - alpha)/phi)``, between ``alpha Psi`` and ``beta Psi``."""
        a, b = self.rho_alpha, self.rho_beta
        N = self.grid.N

        def f(x):
            r2 = np.sum(x ** 2, axis=-1)
            ph = np.sqrt(1.0 + r2)
            return psi(self.env, x, N) * (a + (b - a) / ph)

        return sample(self.grid, f)


def parse_problem(block) -> Problem:
    _keys(block, _PROBLEM, "problem")
    N = int(_need(block, "N", "problem"))
    ex = _need(block, "exponents", "problem")
    _keys(ex, _EXPONENTS, "problem.exponents")
    exp = Exponents(*(float(_need(ex, k, "problem.exponents")) for k in ("p", "q", "m", "s")))
    en = _need(block, "envelope", "problem")
    _keys(en, {"a", "b"}, "problem.envelope")
    env = Envelope(float(en.get("a", 0.0)), float(en.get("b", 0.0)))
    kernel = kernel_from_spec(_need(block, "kernel", "problem"), N)
    L = block.get("L", "auto")
    if L == "auto":
        if env.b <= 0:
            raise ConfigError("L='auto' needs an exponential envelope (b > 0); set L for power envelopes")
        L = box_half_width(env)
    n = int(_need(block, "n", "problem"))
    grid = Grid(N, float(L), n)
    rho = block.get("rho", {})
    _keys(rho, {"alpha", "beta"}, "problem.rho")
    ra, rb = float(rho.get("alpha", 1.0)), float(rho.get("beta", 1.0))
    if not 0 < ra <= rb:
        raise ConfigError(f"rho bounds need 0 < alpha <= beta, got {ra}, {rb}")
    return Problem(grid, exp, kernel, env, ra, rb)


def _axis(spec, name):
    if isinstance(spec, (int, float)):
        return np.array([float(spec)])
    _keys(spec, _RANGE, f"rates.{name}")
    lo, hi = float(_need(spec, "min", f"rates.{name}")), float(_need(spec, "max", f"rates.{name}"))
    count = int(_need(spec, "count", f"rates.{name}"))
    spacing = spec.get("spacing", "log")
    if count < 1 or not 0 < lo <= hi:
        raise ConfigError(f"rates.{name} needs 0 < min <= max and count >= 1")
    if spacing == "log":
        return np.geomspace(lo, hi, count)
    if spacing == "linear":
        return np.linspace(lo, hi, count)
    raise ConfigError(f"rates.{name}.spacing must be 'log' or 'linear'")


def parse_rates(block):
    _keys(block, _RATES, "rates")
    return _axis(_need(block, "lambda", "rates"), "lambda"), _axis(_need(block, "mu", "rates"), "mu")


def parse_solver(block):
    _keys(block, _SOLVER, "solver")
    out = {**SOLVER_DEFAULTS, **block}
    out["max_iter"] = int(out["max_iter"])
    if not 0 < out["omega"] <= 1:
        raise ConfigError("solver.omega must lie in (0, 1]")
    return out


def parse_output(block, override=None):
    _keys(block, _OUTPUT, "output")
    fmts = set(block.get("formats", sorted(_FORMATS)))
    if fmts - _FORMATS:
        raise ConfigError(f"unknown output formats: {sorted(fmts - _FORMATS)}")
    d = override or block.get("directory", "out")
    return Path(d), fmts


def load_config(path):
    raw = Path(path).read_bytes()
    try:
        cfg = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config is not valid UTF-8 JSON: {exc}") from exc
    _keys(cfg, _TOP, "config")
    return cfg, hashlib.sha256(raw).hexdigest()


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: tuples to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _header(sha, grid=None, tolerances=None, seed=None):
    return {"config_sha256": sha, "grid": grid.meta() if grid else None,
            "tolerances": tolerances, "seed": seed}


def _header_lines(header):
    return [f"{k}={json.dumps(_clean(v), sort_keys=True)}" for k, v in header.items()]


def _write_json(path, header, body):
    text = json.dumps(_clean({"header": header, **body}), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _write_csv(path, header, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in _header_lines(header):
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(columns)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else "nan"
    return "" if v is None else str(v)


def _tolerances(solver):
    return {k: solver[k] for k in ("tol", "residual_tol", "inner_tol")}


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _gate(prob: Problem, lam=None, mu=None):
    bad = hypothesis_violations(prob.exp, prob.kernel, prob.env, lam, mu)
    if bad:
        raise HypothesisError("; ".join(bad))


def cmd_solve(cfg, sha, args) -> int:
    prob = parse_problem(_need(cfg, "problem", "config"))
    lams, mus = parse_rates(_need(cfg, "rates", "config"))
    if lams.size != 1 or mus.size != 1:
        raise ConfigError("solve needs scalar rates.lambda and rates.mu; use sweep for ranges")
    lam, mu = float(lams[0]), float(mus[0])
    solver = parse_solver(cfg.get("solver", {}))
    outdir, fmts = parse_output(cfg.get("output", {}), args.out)
    _gate(prob, lam, mu)
    cp = CoupledProblem.build(prob.grid, prob.exp, prob.kernel, prob.env, lam, mu, rho=prob.rho())
    rep = fixed_point_solve(cp, tol=solver["tol"], max_iter=solver["max_iter"],
                            omega=solver["omega"], inner_tol=solver["inner_tol"])
    header = _header(sha, prob.grid, _tolerances(solver), _seed(cfg, args))
    outdir.mkdir(parents=True, exist_ok=True)
    ok = rep.converged and max(rep.residual_u, rep.residual_v) <= solver["residual_tol"]
    if "json" in fmts:
        _write_json(outdir / "report.json", header,
                    {"report": rep.to_dict(), "message": rep.message,
                     "converged_on_boundary": rep.converged_on_boundary, "accepted": ok})
    if "field" in fmts:
        write_field(outdir / "u.field", rep.u)
        write_field(outdir / "v.field", rep.v)
    if "csv" in fmts:
        _write_decay_csv(outdir / "decay.csv", header, rep.u, rep.v)
    print(f"{rep.message}; residuals u={rep.residual_u:.3e} v={rep.residual_v:.3e}")
    return EXIT_OK if ok else EXIT_NOCONV


def _write_decay_csv(path, header, u: Field, v: Field):
    """Annulus nodes ordered by radius: coordinates, log values and fitted shapes."""
    g = u.grid
    r = g.radius()
    mask = (r >= g.L / 4) & (r <= g.L / 2)
    fits = []
    for w in (u, v):
        try:
            fits.append(fit_decay(w, (g.L / 4, g.L / 2)))
        except ValueError:
            fits.append(None)
    order = np.argsort(r[mask], kind="stable")
    pts = g.points()[mask][order]
    rr = r[mask][order]
    ph = np.sqrt(1 + rr ** 2)
    cols = []
    for w, f in zip((u, v), fits):
        cols.append(np.log(w.values[mask][order]))
        cols.append(np.full_like(ph, math.nan) if f is None
                    else -f["a_est"] * np.log(ph) - f["b_est"] * ph)
    rows = [list(pts[i]) + [rr[i]] + [c[i] for c in cols] for i in range(len(rr))]
    head = dict(header)
    head["fit"] = {"u": fits[0], "v": fits[1]}
    names = ["x", "y", "z"][: g.N] + ["r", "log_u", "fit_shape_u", "log_v", "fit_shape_v"]
    _write_csv(path, head, names, rows)


# sweep workers keep their problem data between cells
_SWEEP_CTX = {}


def _sweep_init(cfg):
    prob = parse_problem(cfg["problem"])
    rho = prob.rho()
    table = build_table(prob.kernel, prob.grid)
    ratios = measure_ratios(table, rho, prob.env, prob.exp)
    _SWEEP_CTX.update(prob=prob, rho=rho, table=table, ratios=ratios,
                      solver=parse_solver(cfg.get("solver", {})))


def _sweep_cell(lam, mu):
    c = _SWEEP_CTX
    prob, solver = c["prob"], c["solver"]
    nan = math.nan
    if hypothesis_violations(prob.exp, prob.kernel, prob.env, lam, mu):
        return (lam, mu, False, False, 0, nan, nan)
    cp = CoupledProblem.build(prob.grid, prob.exp, prob.kernel, prob.env, lam, mu,
                              rho=c["rho"], table=c["table"], ratios=c["ratios"])
    if not cp.ledger.feasible:
        return (lam, mu, False, False, 0, nan, nan)
    try:
        rep = fixed_point_solve(cp, tol=solver["tol"], max_iter=solver["max_iter"],
                                omega=solver["omega"], inner_tol=solver["inner_tol"])
    except InfeasibleError:
        return (lam, mu, False, False, 0, nan, nan)
    ok = rep.converged and max(rep.residual_u, rep.residual_v) <= solver["residual_tol"]
    return (lam, mu, True, bool(ok), rep.iterations, rep.residual_u, rep.residual_v)


def _cell_job(args):
    return _sweep_cell(*args)


def frontier(rows, mus):
    """Smallest converged lambda per mu (None where no cell converged)."""
    out = []
    for mu in mus:
        lams = [r[0] for r in rows if r[1] == mu and r[3]]
        out.append((float(mu), min(lams) if lams else None))
    return out


def frontier_slope(front):
    pts = [(math.log(m), math.log(l)) for m, l in front if l is not None]
    if len(pts) < 2 or len({p[0] for p in pts}) < 2:
        return math.nan
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def cmd_sweep(cfg, sha, args) -> int:
    prob = parse_problem(_need(cfg, "problem", "config"))
    lams, mus = parse_rates(_need(cfg, "rates", "config"))
    solver = parse_solver(cfg.get("solver", {}))
    outdir, _ = parse_output(cfg.get("output", {}), args.out)
    bad = hypothesis_violations(prob.exp, prob.kernel, prob.env)
    if bad:
        raise HypothesisError("; ".join(bad))
    header = _header(sha, prob.grid, _tolerances(solver), _seed(cfg, args))
    jobs = [(float(l), float(m)) for m in mus for l in lams]
    rows = {}
    outdir.mkdir(parents=True, exist_ok=True)
    cols = ["lambda", "mu", "feasible", "converged", "iterations", "residual_u", "residual_v"]

    def flush():
        ordered = [rows[j] for j in jobs if j in rows]
        _write_csv(outdir / "existence_map.csv", header, cols, ordered)
        front = frontier(ordered, [float(m) for m in mus])
        slope = frontier_slope(front)
        inv_t = 1.0 / prob.exp.t if prob.exp.t != 0 else math.nan
        _write_csv(outdir / "frontier.csv", header,
                   ["mu", "lambda_star", "loglog_slope", "inverse_t"],
                   [(m, l, slope, inv_t) for m, l in front])
        return ordered

    try:
        if args.threads > 1:
            with ProcessPoolExecutor(args.threads, initializer=_sweep_init,
                                     initargs=(cfg,)) as pool:
                for job, res in zip(jobs, pool.map(_cell_job, jobs)):
                    rows[job] = res
        else:
            _sweep_init(cfg)
            for job in jobs:
                rows[job] = _sweep_cell(*job)
    except KeyboardInterrupt:
        flush()
        print(f"interrupted: flushed {len(rows)} of {len(jobs)} cells", file=sys.stderr)
        return EXIT_NOCONV
    ordered = flush()
    conv = sum(1 for r in ordered if r[3])
    print(f"{len(ordered)} cells, {conv} converged")
    return EXIT_OK


def _check_list(cfg):
    checks = cfg.get("checks")
    if not checks:
        raise ConfigError("verify needs a nonempty 'checks' list")
    out = []
    for item in checks:
        if isinstance(item, str):
            out.append((item, {}))
        elif isinstance(item, dict):
            _keys(item, {"name", "params"}, "checks entry")
            out.append((str(_need(item, "name", "checks entry")), dict(item.get("params", {}))))
        else:
            raise ConfigError("each check is a name or {name, params}")
    return out


def cmd_verify(cfg, sha, args) -> int:
    outdir, _ = parse_output(cfg.get("output", {}), args.out)
    checks = _check_list(cfg)
    seed = _seed(cfg, args)
    results = []
    for name, params in checks:
        try:
            results.append(run_check(name, params, seed=seed))
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from exc
        r = results[-1]
        print(f"{'PASS' if r['passed'] else 'FAIL'} {name}")
    outdir.mkdir(parents=True, exist_ok=True)
    all_ok = all(r["passed"] for r in results)
    _write_json(outdir / "verify_report.json", _header(sha, seed=seed),
                {"checks": results, "passed": all_ok})
    return EXIT_OK if all_ok else EXIT_CONFIG


def _probe_params(cfg):
    p = dict(cfg.get("probe", {}))
    _keys(p, _PROBE, "probe")
    if "problem" in cfg:
        prob = parse_problem(cfg["problem"])
        if not prob.kernel.singular:
            raise HypothesisError("the divergence probe needs a Riesz kernel")
        p.setdefault("theta", prob.kernel.theta)
        p.setdefault("a", prob.env.a)
        p.setdefault("m", prob.exp.m)
        p.setdefault("N", prob.grid.N)
    for k in ("theta", "a", "m", "N"):
        _need(p, k, "probe")
    N = int(p["N"])
    p.setdefault("x", [1.0] + [0.0] * (N - 1))
    return p


def cmd_probe(cfg, sha, args) -> int:
    p = _probe_params(cfg)
    outdir, _ = parse_output(cfg.get("output", {}), args.out)
    res = nonexistence_probe(float(p["theta"]), float(p["a"]), float(p["m"]), int(p["N"]),
                             p["x"], p.get("L_list"))
    header = _header(sha, seed=_seed(cfg, args))
    header.update({"fitted_growth_exponent": res["fitted_growth_exponent"], "model": res["model"],
                   "expected_exponent": res["expected_exponent"]})
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(outdir / "probe.csv", header, ["L", "T"], zip(res["L"], res["values"]))
    print(f"fitted exponent {res['fitted_growth_exponent']:.6f} ({res['model']} growth)")
    return EXIT_OK


def _seed(cfg, args):
    if args.seed is not None:
        return int(args.seed)
    return int(cfg.get("seed", 0))


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "verify": cmd_verify, "probe": cmd_probe}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="gmsteady", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="UTF-8 JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides output.directory)")
        sp.add_argument("--seed", type=int, help="random seed (overrides config seed)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg, sha = load_config(args.config)
        return COMMANDS[args.command](cfg, sha, args)
    except (ConvergenceError, SolverError) as exc:
        print(f"no fixed point found: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except (ConfigError, HypothesisError, DomainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Subcommands: ``solve``, ``sweep``, ``verify``, ``simulate``, ``kappabar``.
Values may come from a flat ``key = value`` file given by ``--config``;
flags on the command line win. Exit codes: 0 success, 2 invalid input,
3 solver failure, 4 verification failure.
"""
import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .dynamics import (
    EmptyBinError,
    ModelParams,
    evolve_semigroup,
    fit_exponent,
    quadratic_form_check,
    simulate_paths,
)
from .kernels import StepStrategy, constant_strategy
from .specfun import DomainError
from .spectral import (
    eigen_step,
    kappa_bar,
    kappa_bar_residual,
    log_derivative_residuals,
    optimal_strategy,
    rayleigh_eigen,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# serialization


def format_float(x):
    """17 significant digits; non-finite values use the JSON-ish spellings."""
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = "%.17g" % x
    # keep integral values (and -0) readable as floats
    return s if any(c in s for c in ".en") else s + ".0"


def _plain(v):
    if isinstance(v, np.ndarray):
        return [_plain(a) for a in v.tolist()]
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, dict):
        return {str(k): _plain(a) for k, a in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(a) for a in v]
    return v


def to_json(obj, indent=None):
    """JSON text with every float written by :func:`format_float`."""
    obj = _plain(obj)
    pad = "" if indent is None else "\n"

    def enc(v, depth):
        sep = pad + (" " * indent * (depth + 1) if indent else "")
        end = pad + (" " * indent * depth if indent else "")
        if isinstance(v, bool) or v is None:
            return json.dumps(v)
        if isinstance(v, float):
            return format_float(v)
        if isinstance(v, (int, str)):
            return json.dumps(v)
        if isinstance(v, dict):
            items = [sep + json.dumps(k) + ": " + enc(a, depth + 1) for k, a in v.items()]
            return "{" + ",".join(items) + end + "}" if items else "{}"
        if isinstance(v, list):
            items = [sep + enc(a, depth + 1) for a in v]
            return "[" + ",".join(items) + end + "]" if items else "[]"
        raise TypeError(f"cannot serialize {type(v).__name__}")

    return enc(obj, 0)


def _cell(v):
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, list):
        return ";".join(_cell(a) for a in v)
    return str(v)


def to_csv(records):
    """RFC-4180 CSV with a header row built from the union of record keys."""
    records = [_plain(r) for r in records]
    keys = []
    for r in records:
        for k in r:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(keys)
    for r in records:
        w.writerow([_cell(r.get(k)) for k in keys])
    return buf.getvalue()


def parse_csv(text):
    """Inverse of :func:`to_csv` for numeric cells (strings stay strings)."""
    rows = list(csv.reader(io.StringIO(text)))
    head, body = rows[0], rows[1:]
    out = []
    for row in body:
        rec = {}
        for k, v in zip(head, row):
            try:
                rec[k] = float(v) if any(c in v for c in ".eEnN") else int(v)
            except ValueError:
                rec[k] = v
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# config


def read_config(path):
    """Flat ``key = value`` (or ``key: value``) lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            for sep in ("=", ":"):
                if sep in line:
                    k, v = line.split(sep, 1)
                    break
            else:
                raise CliError(f"{path}:{lineno}: expected key = value", EXIT_INVALID)
            out[k.strip().lstrip("-").replace("-", "_")] = v.strip()
    return out


def _floats(text):
    """``"a,b,c"`` or ``"start:stop:count[:log]"`` to a float list."""
    text = str(text)
    if ":" in text:
        parts = text.split(":")
        lo, hi, num = float(parts[0]), float(parts[1]), int(parts[2])
        if len(parts) > 3 and parts[3] == "log":
            return list(np.geomspace(lo, hi, num))
        return list(np.linspace(lo, hi, num))
    return [float(t) for t in text.split(",") if t.strip()]


def _common(p):
    p.add_argument("--n", type=str, help="dimension in (0, 2); sweeps accept lists")
    p.add_argument("--V", type=str, help="ratio sqrt(r2/r1) >= 1; sweeps accept lists")
    p.add_argument("--r1", type=float)
    p.add_argument("--r2", type=float)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--y", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-3, help="cross-check tolerance")
    p.add_argument("--grid", type=int, default=4000)
    p.add_argument("--paths", type=int, default=10**6)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", type=str)
    p.add_argument("--config", type=str)
    p.add_argument("--no-timing", action="store_true", help="omit wall time so records are reproducible")


def build_parser():
    parser = argparse.ArgumentParser(prog="bessel-switch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="optimal exponent and cutoff")
    _common(p)
    p = sub.add_parser("sweep", help="solve over grids of n and V")
    _common(p)
    p.add_argument("--rate-fit", action="store_true", help="append the log-log fit of n - eta against V")
    p = sub.add_parser("verify", help="cross-check the exponent by independent methods")
    _common(p)
    p.add_argument("--perturb", type=float, default=1.2, help="cutoff factor for the bracket check")
    p = sub.add_parser("simulate", help="Monte Carlo tail exponent")
    _common(p)
    p.add_argument("--strategy", choices=("optimal", "constant", "step"), default="optimal")
    p.add_argument("--cutoff", type=float, help="cutoff for --strategy step")
    p.add_argument("--eps-top", type=float, help="largest epsilon (default 0.2 sqrt(r1 T))")
    p = sub.add_parser("kappabar", help="limit cutoff over a grid of n")
    _common(p)
    return parser


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cfg = read_config(known.config)
        probe = parser.parse_args(argv)
        sp = parser._subparsers._group_actions[0].choices[probe.command]
        valid = {a.dest for a in sp._actions}
        bad = sorted(set(cfg) - valid)
        if bad:
            raise CliError(f"unknown config keys: {', '.join(bad)}", EXIT_INVALID)
        for k in ("no_timing", "rate_fit"):
            if k in cfg:
                cfg[k] = cfg[k].lower() in ("1", "true", "yes", "on")
        sp.set_defaults(**cfg)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# validation


def _check_n(n):
    if not (0.0 < n < 2.0):
        raise CliError(f"n={n!r} invalid: n must lie in (0, 2)", EXIT_INVALID)
    return n


def _rates(args, V=None):
    """``(r1, r2)`` from ``--r1/--r2`` or ``--V`` (with ``r1 = 1`` by default)."""
    if args.r1 is not None and args.r2 is not None:
        r1, r2 = args.r1, args.r2
    else:
        V = float(_floats(args.V)[0]) if V is None and args.V is not None else V
        if V is None:
            raise CliError("give --V or both --r1 and --r2", EXIT_INVALID)
        r1 = 1.0 if args.r1 is None else args.r1
        r2 = r1 * V * V
    if not (r1 > 0.0 and r2 >= r1 and math.isfinite(r2)):
        raise CliError(f"need 0 < r1 <= r2 (V >= 1), got r1={r1!r}, r2={r2!r}", EXIT_INVALID)
    return r1, r2


def _single_n(args):
    if args.n is None:
        raise CliError("--n is required", EXIT_INVALID)
    vals = _floats(args.n)
    if len(vals) != 1:
        raise CliError("this command takes a single --n", EXIT_INVALID)
    return _check_n(vals[0])


def _params(args):
    n = _single_n(args)
    r1, r2 = _rates(args)
    if not args.T > 0.0:
        raise CliError(f"T={args.T!r} invalid: T must be > 0", EXIT_INVALID)
    if not args.y >= 0.0:
        raise CliError(f"y={args.y!r} invalid: y must be >= 0", EXIT_INVALID)
    return ModelParams(n, r1, r2, args.T, args.y)


def _base(command):
    return {"schema": SCHEMA_VERSION, "version": __version__, "command": command}


# ---------------------------------------------------------------------------
# commands


def _solve_record(n, r1, r2):
    strat, sol = optimal_strategy(ModelParams(n, r1, r2))
    rec = {
        "n": n, "r1": r1, "r2": r2, "V": sol.V,
        "eta": sol.eta, "kappa": sol.kappa, "E": sol.eigenvalue_E, "gamma": sol.gamma,
        "cutoff_c": sol.kappa * math.sqrt(r1),
        "residual_eq1": sol.residual_eq1, "residual_eq2": sol.residual_eq2,
        "degenerate": sol.degenerate,
    }
    if not sol.degenerate:
        rec["log_n_minus_eta"] = math.log(n - sol.eta)
    return rec


def cmd_solve(args):
    p = _params(args)
    try:
        rec = _solve_record(p.n, p.r1, p.r2)
    except DomainError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    except (RuntimeError, ArithmeticError) as exc:
        raise CliError(f"solver failure: {exc}", EXIT_SOLVER)
    return [dict(_base("solve"), **rec)]


def _sweep_point(n, V):
    try:
        rec = _solve_record(n, 1.0, V * V)
        rec["status"] = "ok"
    except Exception as exc:  # recorded, the sweep goes on
        rec = {"n": n, "r1": 1.0, "r2": V * V, "V": V, "status": f"error: {exc}".splitlines()[0]}
    return rec


def cmd_sweep(args):
    if args.n is None or args.V is None:
        raise CliError("sweep needs --n and --V (lists or start:stop:count[:log])", EXIT_INVALID)
    ns = [_check_n(n) for n in _floats(args.n)]
    Vs = _floats(args.V)
    if any(not V >= 1.0 for V in Vs):
        raise CliError("V must be >= 1", EXIT_INVALID)
    jobs = [(n, V) for n in ns for V in Vs]
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        recs = list(pool.map(lambda a: _sweep_point(*a), jobs))
    out = [dict(_base("sweep"), **r) for r in recs]
    if args.rate_fit:
        for n in ns:
            pts = [(math.log(r["V"]), r["log_n_minus_eta"]) for r in recs
                   if r["n"] == n and r["status"] == "ok" and "log_n_minus_eta" in r]
            if len(pts) >= 2:
                x, y = np.array(pts).T
                A = np.column_stack([x, np.ones_like(x)])
                coef, *_ = np.linalg.lstsq(A, y, rcond=None)
                resid = y - A @ coef
                se = (math.sqrt(float(resid @ resid) / (x.size - 2) / np.sum((x - x.mean()) ** 2))
                      if x.size > 2 else float("nan"))
                out.append(dict(_base("sweep-rate-fit"), n=n, slope=float(coef[0]), stderr=se,
                                expected=n - 2.0, points=int(x.size)))
    return out


def cmd_kappabar(args):
    if args.n is None:
        raise CliError("--n is required", EXIT_INVALID)
    ns = [_check_n(n) for n in _floats(args.n)]

    def one(n):
        k = kappa_bar(n)
        return dict(_base("kappabar"), n=n, kappa_bar=k, residual=kappa_bar_residual(n, k),
                    ratio_sqrt_n=k / math.sqrt(n),
                    ratio_log=k / math.sqrt(2.0 * math.log(1.0 / (2.0 - n))) if n > 1.0 else float("nan"))

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        return list(pool.map(one, ns))


def _check(rows, method, value, reference, tol, passed=None):
    diff = value - reference
    ok = abs(diff) <= tol if passed is None else passed
    rows.append({"method": method, "value": value, "reference": reference, "difference": diff,
                 "tolerance": tol, "pass": bool(ok)})


def cmd_verify(args):
    p = _params(args)
    n, rows = p.n, []
    f0 = lambda x: np.where(x < 3.0, np.exp(-x * x), 0.0)
    try:
        strat, sol = optimal_strategy(p)
        E_ref = sol.eigenvalue_E
        if sol.degenerate:
            R = constant_strategy(p.r1) if p.r1 == p.r2 else strat
            es = eigen_step(n, p.r1, p.r1, 1.0)
        else:
            R = strat
            es = eigen_step(n, p.r1, p.r2, strat.cutoff_c)
        _check(rows, "eigen_step", es.eigenvalue_E, E_ref, 1e-8)
        ray = rayleigh_eigen(n, R, args.grid)
        _check(rows, "rayleigh_eigen", ray.eigenvalue, E_ref, max(args.tol * 0.1, 5 * ray.error_estimate))
        run = evolve_semigroup(n, R, f0, grid=args.grid)
        _check(rows, "evolve_semigroup (2 x decay rate)", 2.0 * run.decay_rate, E_ref, args.tol)
        qf = quadratic_form_check(n, R, lambda x: (1 + x * x) * np.exp(-x * x))
        _check(rows, "quadratic_form_check", qf["residual"], 0.0, 1e-6)
        if not sol.degenerate:
            nr = max(log_derivative_residuals(sol))
            _check(rows, "log-derivative form", nr, 0.0, 1e-8)
            pert = eigen_step(n, p.r1, p.r2, strat.cutoff_c * args.perturb)
            _check(rows, f"perturbed cutoff x{args.perturb:g} (below optimum)", pert.eigenvalue_E, E_ref,
                   0.0, passed=pert.eigenvalue_E < E_ref)
    except DomainError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    except (RuntimeError, ArithmeticError) as exc:
        raise CliError(f"solver failure: {exc}", EXIT_SOLVER)
    base = dict(_base("verify"), n=n, r1=p.r1, r2=p.r2, eta=sol.eta, kappa=sol.kappa, E=E_ref)
    recs = [dict(base, **r) for r in rows]
    if not all(r["pass"] for r in rows):
        raise _VerifyFailure(recs)
    return recs


class _VerifyFailure(Exception):
    def __init__(self, records):
        super().__init__("verification failed")
        self.records = records


def cmd_simulate(args):
    p = _params(args)
    if args.paths < 10**4:
        raise CliError("--paths must be >= 10000", EXIT_INVALID)
    try:
        if args.strategy == "optimal":
            R, sol = optimal_strategy(p)
            target = p.n - sol.eta
        elif args.strategy == "constant":
            R, target = constant_strategy(p.r2), p.n
        else:
            if args.cutoff is None:
                raise CliError("--strategy step needs --cutoff", EXIT_INVALID)
            R, target = StepStrategy(p.r1, p.r2, args.cutoff), float("nan")
        dt = p.T / 1000.0 if args.dt is None else args.dt
        x = simulate_paths(p, R, args.paths, dt=dt, seed=args.seed, threads=args.threads)
        top = args.eps_top or 0.2 * math.sqrt(p.r1 * p.T)
        fit = fit_exponent(x, top=top)
    except DomainError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    except EmptyBinError as exc:
        raise CliError(f"{exc}; lower --eps-top or raise --paths", EXIT_INVALID)
    lo, hi = fit.ci(3.0)
    return [dict(_base("simulate"), n=p.n, r1=p.r1, r2=p.r2, T=p.T, y=p.y, strategy=args.strategy,
                 paths=args.paths, dt=dt, seed=args.seed, slope=fit.slope, stderr=fit.stderr,
                 ci_low=lo, ci_high=hi, target=target, eps=fit.eps_grid, counts=fit.counts_or_mass)]


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "verify": cmd_verify,
            "simulate": cmd_simulate, "kappabar": cmd_kappabar}


def _emit(records, args):
    if args.format == "csv":
        text = to_csv(records)
    else:
        text = to_json(records if len(records) != 1 or args.command in ("sweep", "kappabar", "verify")
                       else records[0], indent=1) + "\n"
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        records = COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except _VerifyFailure as exc:
        records, code = exc.records, EXIT_VERIFY
        for r in records:
            if not r["pass"]:
                print(f"FAIL {r['method']}: difference {r['difference']:.3e} > {r['tolerance']:.3e}",
                      file=sys.stderr)
    if not args.no_timing:
        wall = time.perf_counter() - t0
        records = [dict(r, wall_time=wall) for r in records]
    _emit(records, args)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end acceptance checks, one verdict line per criterion.

Tolerances and runtime budgets are pinned here; the per-module suites
cover the same ground in finer detail.
"""
import json
import math
import time

import numpy as np
import pytest

from bessel_switch import cli
from bessel_switch.dynamics import (
    ModelParams,
    evolve_semigroup,
    fit_exponent,
    quadratic_form_check,
    simulate_paths,
)
from bessel_switch.kernels import StepStrategy, TabulatedStrategy, constant_strategy, green_function, green_row_integral
from bessel_switch.quadrature import integrate
from bessel_switch.specfun import bessel_i, bessel_ive, bessel_k, bessel_kve, s_kernel, s_kernel_deriv
from bessel_switch.spectral import (
    eigen_step,
    kappa_bar,
    log_derivative_residuals,
    optimal_strategy,
    rayleigh_eigen,
    solve_optimal,
)

DIMS = (0.5, 1.0, 1.5)


def _gauss(x):
    return np.exp(-x * x)


def test_constant_rate_ground_truth(verdict):
    t0 = time.perf_counter()
    worst = {"eigen_step": 0.0, "rayleigh_eigen": 0.0, "evolve_semigroup": 0.0}
    for n in DIMS:
        for r in (1.0, 2.5):
            R = constant_strategy(r)
            worst["eigen_step"] = max(worst["eigen_step"], abs(eigen_step(n, r, r, math.sqrt(n * r)).eigenvalue_E + n))
            # a rate jump of relative size 1e-5 still goes through the Wronskian matching
            near = eigen_step(n, r, r * (1 + 1e-5), math.sqrt(n * r)).eigenvalue_E
            worst["eigen_step"] = max(worst["eigen_step"], abs(near + n))
            worst["rayleigh_eigen"] = max(worst["rayleigh_eigen"], abs(rayleigh_eigen(n, R).eigenvalue + n))
            run = evolve_semigroup(n, R, _gauss)
            worst["evolve_semigroup"] = max(worst["evolve_semigroup"], abs(2.0 * run.decay_rate + n))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 60.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"
    verdict("1 constant-rate eigenvalue -n, |dE| <= 1e-4, < 1 min", ok, detail)
    assert ok


def test_optimality_system_matches_wronskian(verdict):
    t0 = time.perf_counter()
    gap = res = 0.0
    for n in DIMS:
        for V in (1.5, 2.0, 5.0):
            sol = solve_optimal(n, V)
            es = eigen_step(n, 1.0, V * V, sol.kappa)
            gap = max(gap, abs(es.eigenvalue_E - (sol.eta - n)))
            res = max(res, abs(sol.residual_eq1), abs(sol.residual_eq2))
    elapsed = time.perf_counter() - t0
    ok = gap <= 1e-8 and res < 1e-9 and elapsed < 120.0
    verdict("2 eta - n equals step eigenvalue to 1e-8, residuals < 1e-9, < 2 min", ok,
            f"gap {gap:.1e}, residual {res:.1e}; {elapsed:.1f}s")
    assert ok


def test_limit_suite(verdict):
    t0 = time.perf_counter()
    parts = {}
    a = [solve_optimal(n, 1.0 + 1e-3) for n in DIMS]
    parts["a"] = all(s.eta < 0.05 and abs(s.kappa - math.sqrt(s.n)) < 0.05 for s in a)
    b = [(solve_optimal(n, 1e3), kappa_bar(n)) for n in DIMS]
    parts["b"] = all(s.n - s.eta < 0.05 * s.n and kb - s.kappa < 0.05 * kb for s, kb in b)
    slopes = []
    Vs = np.geomspace(1e2, 1e3, 6)
    for n in DIMS:
        y = [math.log(n - solve_optimal(n, V).eta) for V in Vs]
        slopes.append(np.polyfit(np.log(Vs), y, 1)[0] - (n - 2.0))
    parts["c"] = max(map(abs, slopes)) <= 0.1
    kb = [kappa_bar(n) for n in np.arange(0.25, 1.76, 0.25)]
    ratio = kappa_bar(0.01) / math.sqrt(0.01)
    parts["d"] = bool(np.all(np.diff(kb) > 0.0)) and 0.95 < ratio < 1.05
    elapsed = time.perf_counter() - t0
    ok = all(parts.values()) and elapsed < 300.0
    detail = " ".join(f"({k}) {'ok' if v else 'FAIL'}" for k, v in parts.items())
    detail += f"; slope offsets {max(map(abs, slopes)):.1e}, kbar(0.01)/0.1 = {ratio:.4f}; {elapsed:.1f}s"
    verdict("3 limits V -> 1, V -> inf, slope n - 2, kappa_bar, < 5 min", ok, detail)
    assert ok


def test_variational_optimality(verdict):
    t0 = time.perf_counter()
    n, r1, r2 = 1.0, 1.0, 4.0
    sol = solve_optimal(n, 2.0)
    c_star = sol.kappa * math.sqrt(r1)
    best = eigen_step(n, r1, r2, c_star)
    cs = np.geomspace(0.3 * c_star, 3.0 * c_star, 20)
    results = [eigen_step(n, r1, r2, c) for c in cs]
    Es = np.array([r.eigenvalue_E for r in results])
    i = int(np.argmax(Es))
    lo, hi = cs[max(i - 1, 0)], cs[min(i + 1, cs.size - 1)]
    at_max = lo <= c_star <= hi and best.eigenvalue_E >= Es.max()
    off = np.array([abs(r.inflection_x - c) / c for r, c in zip(results, cs)])
    infl = abs(best.inflection_x - c_star) / c_star < 1e-5 and bool(np.all(off >= 1e-5))
    knots = np.linspace(0.004, 6.0, 1500)
    smooth = TabulatedStrategy.from_function(lambda x: r1 + (r2 - r1) / (1.0 + np.exp(-(x - c_star) / 0.2)),
                                             knots, r1, r2)
    ray = rayleigh_eigen(n, smooth)
    margin = best.eigenvalue_E - ray.eigenvalue
    below = margin > 5.0 * ray.error_estimate
    elapsed = time.perf_counter() - t0
    ok = at_max and infl and below and elapsed < 180.0
    verdict("4 cutoff c* maximizes E, inflection at c* only, sigmoid strictly worse, < 3 min", ok,
            f"argmax c={cs[i]:.4f} vs c*={c_star:.4f}, min off-c* inflection gap {off.min():.1e}, "
            f"sigmoid margin {margin:.2e} vs error {ray.error_estimate:.1e}; {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_dynamic_exponent_triangle(verdict):
    t0 = time.perf_counter()
    p = ModelParams(1.0, 1.0, 4.0)
    R, sol = optimal_strategy(p)
    target = p.n - sol.eta
    top = 0.2 * math.sqrt(p.r1 * p.T)
    fit = fit_exponent(simulate_paths(p, R, 10**6, seed=20240611), top=top)
    mc_ok = abs(fit.slope - target) <= 3.0 * fit.stderr
    run = evolve_semigroup(p.n, R, _gauss)
    pde_gap = abs(run.decay_rate - 0.5 * (sol.eta - p.n))
    const = fit_exponent(simulate_paths(p, constant_strategy(p.r2), 10**6, seed=20240612), top=top)
    const_ok = abs(const.slope - p.n) <= 3.0 * const.stderr
    elapsed = time.perf_counter() - t0
    ok = mc_ok and pde_gap <= 1e-3 and const_ok and elapsed < 600.0
    verdict("5 MC slope n - eta (3 sigma), semigroup rate (eta - n)/2 to 1e-3, constant slope n, < 10 min", ok,
            f"MC {fit.slope:.4f} +- {fit.stderr:.4f} vs {target:.4f}; semigroup gap {pde_gap:.1e}; "
            f"constant {const.slope:.4f} +- {const.stderr:.4f}; {elapsed:.0f}s")
    assert ok


def _bessel_identity_worst():
    import mpmath
    from scipy import special

    rel = lambda a, b: float(np.max(np.abs(a / b - 1.0)))
    worst = 0.0
    x = np.geomspace(1e-3, 80.0, 41)
    for nu in np.linspace(-0.9, 1.0, 20):
        # Wronskian I_nu K_{nu+1} + I_{nu+1} K_nu = 1/x in scaled form
        w = bessel_ive(nu, x) * bessel_kve(nu + 1.0, x) + bessel_ive(nu + 1.0, x) * bessel_kve(nu, x)
        worst = max(worst, rel(w * x, 1.0))
        if abs(nu) > 0.05:
            # K_{nu+1} - K_{nu-1} = (2 nu / x) K_nu
            k = bessel_kve(nu + 1.0, x) - bessel_kve(nu - 1.0, x)
            worst = max(worst, rel(k, 2.0 * nu / x * bessel_kve(nu, x)))
        worst = max(worst, rel(bessel_ive(nu, x), special.ive(nu, x)), rel(bessel_kve(nu, x), special.kve(nu, x)))
        # derivative identity against a 30-digit numerical derivative
        xs = x[::4]
        for sign, fn in ((-1, mpmath.besseli), (1, mpmath.besselk)):
            with mpmath.workdps(30):
                ref = np.array([float(mpmath.diff(lambda t: t ** -nu * fn(nu, t), t)) for t in xs])
            worst = max(worst, rel(s_kernel_deriv(sign, nu, xs), ref))
    for nu in np.linspace(0.05, 1.0, 10):
        # I_{nu-1} - I_{nu+1} = (2 nu / x) I_nu
        lhs = bessel_i(nu - 1.0, x) - bessel_i(nu + 1.0, x)
        worst = max(worst, rel(lhs, 2.0 * nu / x * bessel_i(nu, x)))
    return max(worst, rel(bessel_k(0.5, x), np.sqrt(np.pi / (2 * x)) * np.exp(-x)))


def test_identity_suites(verdict):
    t0 = time.perf_counter()
    bessel = _bessel_identity_worst()
    sol = solve_optimal(1.0, 2.0)
    step = StepStrategy(1.0, 4.0, sol.kappa)
    funcs = [
        _gauss,
        lambda x: (1.0 + x * x) * np.exp(-x * x),
        lambda x: np.cos(x) * np.exp(-x * x / 3.0),
        lambda x: np.exp(-x * x) / (1.0 + x * x),
        lambda x: np.exp(-x ** 4),
    ]
    qf = max(quadratic_form_check(1.0, step, f)["residual"] for f in funcs)
    qf = max(qf, quadratic_form_check(0.5, constant_strategy(1.5), funcs[1])["residual"])
    green = 0.0
    for n in (0.5, 1.5):
        for z in (0.3, sol.kappa, 2.5):
            ref = green_row_integral(n, step, z)
            top = math.sqrt(z * z + sol.kappa ** 2 + 85.0 * 2.0 * 4.0)
            num, _ = integrate(lambda x: green_function(n, step, x, z), 0.0, top, rel_tol=1e-12,
                               points=(z, sol.kappa))
            green = max(green, abs(num / ref - 1.0))
    logd = max(max(log_derivative_residuals(solve_optimal(n, V))) for n in DIMS for V in (1.5, 2.0, 5.0))
    elapsed = time.perf_counter() - t0
    ok = bessel <= 1e-9 and qf < 1e-6 and green <= 1e-8 and logd <= 1e-8 and elapsed < 60.0
    verdict("6 Bessel identities 1e-9, quadratic form 1e-6, Green row 1e-8, log-derivative form 1e-8, < 1 min",
            ok, f"bessel {bessel:.1e}, qf {qf:.1e}, green {green:.1e}, logd {logd:.1e}; {elapsed:.1f}s")
    assert ok


def test_determinism_and_io(verdict, tmp_path):
    outs = []
    for k in range(2):
        for cmd in (["solve", "--n", "1", "--V", "2"],
                    ["simulate", "--n", "1", "--V", "2", "--paths", "20000", "--seed", "7"]):
            path = tmp_path / f"{cmd[0]}{k}.json"
            assert cli.main([*cmd, "--no-timing", "--out", str(path)]) == 0
            outs.append(path.read_bytes())
    same_cli = outs[0] == outs[2] and outs[1] == outs[3]
    p = ModelParams(1.0, 1.0, 4.0)
    R, _ = optimal_strategy(p)
    a = simulate_paths(p, R, 30000, seed=3, chunk=8192)
    b = simulate_paths(p, R, 30000, seed=3, chunk=8192, threads=2)
    same_mc = a.tobytes() == b.tobytes()

    rng = np.random.default_rng(0)
    vals = np.concatenate([rng.standard_normal(200) * 10.0 ** rng.integers(-300, 300, 200),
                           [0.1, 1 / 3, 5e-324, 1.7976931348623157e308, -0.0]])
    recs = [{"k": i, "x": float(v), "tag": "a,b"} for i, v in enumerate(vals)]
    back_json = json.loads(cli.to_json(recs))
    back_csv = cli.parse_csv(cli.to_csv(recs))
    lossless = all(
        np.float64(r["x"]).tobytes() == np.float64(j["x"]).tobytes() == np.float64(c["x"]).tobytes()
        and r["k"] == j["k"] == c["k"] and c["tag"] == "a,b"
        for r, j, c in zip(recs, back_json, back_csv)
    )
    ok = same_cli and same_mc and lossless
    verdict("7 bit-identical reruns, lossless 17-digit CSV/JSON round-trip", ok,
            f"cli {same_cli}, threads {same_mc}, round-trip {lossless}")
    assert ok

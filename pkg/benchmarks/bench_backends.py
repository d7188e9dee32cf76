"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_backends.py [--repeat 5] [--quick]

Each row reports the best of ``--repeat`` runs after one warm-up call, so
numba compilation is excluded.
"""
import argparse
import time

import numpy as np

from bessel_switch import _tridiag
from bessel_switch.dynamics import ModelParams, _simulate_chunk, time_grid
from bessel_switch.kernels import DEFAULT_SPEC, _y_eval_nb, _y_eval_np
from bessel_switch.specfun import _evaluate
from bessel_switch.spectral import assemble, make_grid, optimal_strategy


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(quick):
    p = ModelParams(1.0, 1.0, 4.0)
    R, _ = optimal_strategy(p)
    xs = np.geomspace(1e-3, 50.0, 20000)

    def bessel(backend):
        return lambda: [_evaluate(fid, 0.37, xs, backend) for fid in range(4)]

    def ykernel(fn):
        args = [(s, -0.5, 0.49, x) for s in (-1, 1) for x in np.linspace(0.05, 4.0, 100)]

        def run():
            for sign, nu, eta, x in args:
                alpha = eta - (nu + abs(nu)) if sign > 0 else eta
                fn(float(sign), nu, eta, alpha, x, DEFAULT_SPEC.z_max(x), DEFAULT_SPEC.abs_tol,
                   DEFAULT_SPEC.rel_tol, DEFAULT_SPEC.max_subdivisions)
        return run

    grid = make_grid(R, 4000)
    kd, ke, mass = assemble(1.0, R, grid)
    s = 1.0 / np.sqrt(mass)
    d, e = kd * s * s, ke * s[:-1] * s[1:]
    v0 = np.sqrt(mass) * np.exp(-0.5 * grid[:-1] ** 2 / 4.0)
    g0 = np.exp(-grid[:-1] ** 2)
    steps = 500 if quick else 2000

    def inverse(backend):
        return lambda: _tridiag.inverse_iteration(d, e, v0, tol=1e-9, backend=backend)

    def march(backend):
        return lambda: _tridiag.implicit_march(kd, ke, mass, g0, 1e-2, steps, backend=backend)

    paths = 2000 if quick else 20000
    taus = time_grid(1.0, 1e-3, 0.0025)
    seq = np.random.SeedSequence(0)

    def mc(use_numba):
        return lambda: _simulate_chunk(seq, paths, p, R.breaks, R.vals, taus, "exact", use_numba)

    yield "bessel I/K/S kernels, 4 x 20000 points", bessel("numba"), bessel("numpy")
    yield "Y kernel quadrature, 200 evaluations", ykernel(_y_eval_nb), ykernel(_y_eval_np)
    yield "inverse iteration, 4000 nodes", inverse("numba"), inverse("numpy")
    yield f"implicit march, 4000 nodes x {steps} steps", march("numba"), march("numpy")
    yield f"Monte Carlo chunk, {paths} paths", mc(True), mc(False)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args(argv)
    print(f"{'case':<44} {'numba [s]':>11} {'numpy [s]':>11} {'speedup':>8}")
    for label, fast, slow in cases(args.quick):
        tn = best_of(fast, args.repeat)
        tp = best_of(slow, args.repeat)
        print(f"{label:<44} {tn:11.4g} {tp:11.4g} {tp / tn:8.1f}")


if __name__ == "__main__":
    main()

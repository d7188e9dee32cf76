import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bessel_switch.dynamics import (
    EmptyBinError,
    ModelParams,
    default_eps_grid,
    evolve_semigroup,
    fit_exponent,
    quadratic_form_check,
    simulate_paths,
    symmetric_form_check,
    time_grid,
)
from bessel_switch.kernels import StepStrategy, constant_strategy
from bessel_switch.specfun import DomainError
from bessel_switch.spectral import optimal_strategy, solve_optimal

gauss = lambda x: np.exp(-x * x)


# --- semigroup ----------------------------------------------------------------


@pytest.mark.parametrize("n", [0.5, 1.0, 1.5])
def test_semigroup_constant_rate(n):
    run = evolve_semigroup(n, constant_strategy(1.0), gauss)
    assert 2 * run.decay_rate == pytest.approx(-n, abs=1e-4)
    assert run.fit_residual < 1e-6


def test_semigroup_optimal_rate_and_time_step():
    R, sol = optimal_strategy(ModelParams(1.0, 1.0, 4.0))
    a = evolve_semigroup(1.0, R, gauss, dt=1e-2)
    b = evolve_semigroup(1.0, R, gauss, dt=5e-3)
    assert abs(a.decay_rate - b.decay_rate) < 1e-4
    assert a.decay_rate == pytest.approx(0.5 * sol.eigenvalue_E, abs=1e-4)


def test_semigroup_functionals_agree():
    R = StepStrategy(1.0, 3.0, 1.0)
    rates = [evolve_semigroup(0.8, R, gauss, functional=f).decay_rate for f in ("eigvec", "point", "mass")]
    assert max(rates) - min(rates) < 2e-3


def test_semigroup_schemes_agree():
    R = StepStrategy(1.0, 3.0, 1.0)
    bdf = evolve_semigroup(0.8, R, gauss, dt=5e-3).decay_rate
    euler = evolve_semigroup(0.8, R, gauss, dt=5e-3, scheme="euler").decay_rate
    assert abs(bdf - euler) < 1e-3


def test_neumann_conserves_mass():
    run = evolve_semigroup(1.0, StepStrategy(1.0, 4.0, 1.0), gauss, s_max=5.0, functional="mass",
                           outer="neumann")
    assert np.max(np.abs(run.mass / run.mass[0] - 1.0)) < 1e-9


def test_semigroup_backends_agree():
    R = StepStrategy(1.0, 4.0, 1.0)
    a = evolve_semigroup(1.0, R, gauss, s_max=4.0, grid=800, backend="numba")
    b = evolve_semigroup(1.0, R, gauss, s_max=4.0, grid=800, backend="numpy")
    np.testing.assert_allclose(a.history, b.history, rtol=1e-10, atol=1e-12)


def test_semigroup_rejects_bad_input():
    with pytest.raises(DomainError):
        evolve_semigroup(1.0, constant_strategy(1.0), lambda x: -gauss(x))
    with pytest.raises(DomainError):
        evolve_semigroup(1.0, constant_strategy(1.0), gauss, functional="median")


# --- time grid ----------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(T=st.floats(0.1, 10.0), k=st.integers(1000, 20000), ds=st.floats(1e-3, 0.05))
def test_time_grid_shape(T, k, ds):
    dt = T / k
    tau = time_grid(T, dt, ds)
    steps = -np.diff(tau)
    switch = max(0.01 * T, dt / ds)
    head = tau[:-1] > switch * (1 + 1e-12)
    assert tau[0] == T and np.all(steps > 0)
    assert np.all(steps[head] <= dt * (1 + 1e-9))
    np.testing.assert_allclose(steps[~head], ds * tau[:-1][~head], rtol=1e-9)
    assert 0 < tau[-1] <= 1e-19 * T


def test_time_grid_validation():
    with pytest.raises(DomainError):
        time_grid(1.0, 0.01)
    with pytest.raises(DomainError):
        time_grid(1.0, 1e-3, ds=1.5)


# --- Monte Carlo --------------------------------------------------------------


@pytest.mark.parametrize("n,scheme", [(0.7, "exact"), (1.4, "exact"), (1.4, "euler")])
def test_constant_rate_second_moment(n, scheme):
    # the squared radius has mean y^2 + n r T
    p = ModelParams(n, 2.0, 2.0, T=1.0, y=0.5)
    x = simulate_paths(p, constant_strategy(2.0), 100_000, seed=5, scheme=scheme)
    x2 = x * x
    assert abs(x2.mean() - (0.25 + 2.0 * n)) < 4 * x2.std() / math.sqrt(x2.size)


def test_constant_rate_law():
    # at y = 0 the final radius is sqrt(r T) times a chi variable with n degrees
    p = ModelParams(0.6, 1.5, 1.5)
    x = simulate_paths(p, constant_strategy(1.5), 50_000, seed=11)
    assert stats.kstest(x * x / 1.5, stats.chi2(0.6).cdf).pvalue > 1e-3


def test_reproducible_and_thread_independent():
    p = ModelParams(1.0, 1.0, 4.0)
    R, _ = optimal_strategy(p)
    a = simulate_paths(p, R, 20_000, seed=9, chunk=4096)
    b = simulate_paths(p, R, 20_000, seed=9, chunk=4096, threads=3)
    c = simulate_paths(p, R, 20_000, seed=10, chunk=4096)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_backends_same_law():
    p = ModelParams(0.8, 1.0, 4.0)
    R = StepStrategy(1.0, 4.0, 1.0)
    a = simulate_paths(p, R, 40_000, seed=1, backend="numba")
    b = simulate_paths(p, R, 40_000, seed=2, backend="numpy")
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_parabolic_scale_invariance():
    # (T, y) -> (4T, 2y) doubles every radius
    R = StepStrategy(1.0, 4.0, 1.1)
    a = simulate_paths(ModelParams(1.0, 1.0, 4.0, T=1.0, y=0.3), R, 10_000, seed=4)
    b = simulate_paths(ModelParams(1.0, 1.0, 4.0, T=4.0, y=0.6), R, 10_000, seed=4)
    np.testing.assert_allclose(b, 2.0 * a, rtol=1e-9)


def test_simulate_validation():
    p = ModelParams(1.0, 1.0, 4.0)
    with pytest.raises(DomainError):
        simulate_paths(p, constant_strategy(1.0), 20_000)
    with pytest.raises(DomainError):
        simulate_paths(p, constant_strategy(4.0), 100)
    with pytest.raises(DomainError):
        ModelParams(1.0, 2.0, 1.0)
    with pytest.raises(DomainError):
        ModelParams(1.0, 1.0, 2.0, T=0.0)


# --- exponent fits ------------------------------------------------------------


def test_fit_exact_power():
    eps = 0.5 ** np.arange(10)
    fit = fit_exponent(eps ** 2, eps)
    assert fit.slope == pytest.approx(2.0, abs=1e-12) and fit.stderr < 1e-12


def test_fit_power_with_correction():
    eps = 0.1 * 0.5 ** np.arange(12)
    fit = fit_exponent(eps ** 1.3 * (1 + 0.1 * eps), eps)
    assert fit.slope == pytest.approx(1.3, abs=5e-3)


def test_fit_samples_coverage():
    # samples with P(x <= eps) = eps^a; the GLS error bar should be honest
    a, hits = 0.7, 0
    for seed in range(40):
        x = np.random.default_rng(seed).random(50_000) ** (1 / a)
        fit = fit_exponent(x, top=0.5)
        hits += abs(fit.slope - a) <= 2 * fit.stderr
    assert 32 <= hits <= 40


def test_fit_empty_bin():
    x = np.random.default_rng(0).random(10_000) + 0.1
    with pytest.raises(EmptyBinError):
        fit_exponent(x, eps_grid=[0.5, 0.2, 0.05, 0.01])


def test_default_eps_grid():
    x = np.random.default_rng(0).random(10_000)
    eps = default_eps_grid(x, 0.5, min_hits=50)
    assert eps[0] == 0.5 and np.all(np.diff(eps) < 0)
    assert np.count_nonzero(x <= eps[-1]) >= 50


# --- identities ---------------------------------------------------------------


@pytest.mark.parametrize("n", [0.5, 1.0, 1.5])
def test_quadratic_form(n):
    sol = solve_optimal(n, 2.0)
    R = StepStrategy(1.0, 4.0, sol.kappa)
    out = quadratic_form_check(n, R, lambda x: (1 + x * x) * np.exp(-x * x))
    assert out["residual"] < 1e-8
    if n != 1.0:
        # the cross term carries the factor (2 - n), not one
        assert out["residual_unit_factor"] > 1e-3


def test_quadratic_form_exact_derivatives():
    R = constant_strategy(1.0)
    f = lambda x: np.exp(-x * x)
    df = lambda x: -2 * x * np.exp(-x * x)
    d2f = lambda x: (4 * x * x - 2) * np.exp(-x * x)
    assert quadratic_form_check(0.7, R, f, df, d2f)["residual"] < 1e-11


def test_symmetric_form():
    R = StepStrategy(1.0, 2.5, 0.8)
    out = symmetric_form_check(1.3, R, lambda x: np.exp(-x * x), lambda x: np.cos(x) * np.exp(-x * x / 2))
    assert out["residual_symmetry"] < 1e-8 and out["residual_energy"] < 1e-8

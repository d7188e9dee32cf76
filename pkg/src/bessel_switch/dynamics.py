"""Dynamic checks of the exponent: semigroup evolution, Monte Carlo, identities.

Original coordinates ``(x, t)`` on ``[0, T]`` map to stationary ones by
``z = x / sqrt(T - t)`` and ``s = log(T / (T - t))``. A parabolic strategy is
``D(x, t) = R(x / sqrt(T - t))`` for a stationary profile ``R``.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend, _tridiag
from ._backend import njit
from .kernels import _check_n
from .quadrature import adaptive_numpy
from .spectral import _solve_discrete, assemble, make_grid
from .specfun import DomainError

__all__ = [
    "ModelParams",
    "ExponentFit",
    "SemigroupRun",
    "InstabilityError",
    "EmptyBinError",
    "evolve_semigroup",
    "time_grid",
    "simulate_paths",
    "default_eps_grid",
    "fit_exponent",
    "quadratic_form_check",
    "symmetric_form_check",
]


class InstabilityError(RuntimeError):
    """The evolved functional grew or lost positivity."""


class EmptyBinError(ValueError):
    """An epsilon bin has no samples."""


@dataclass(frozen=True)
class ModelParams:
    """Dimension, rate bounds, horizon and start radius."""

    n: float
    r1: float
    r2: float
    T: float = 1.0
    y: float = 0.0

    def __post_init__(self):
        _check_n(self.n)
        if not (0.0 < self.r1 <= self.r2 and math.isfinite(self.r2)):
            raise DomainError(f"need 0 < r1 <= r2, got r1={self.r1!r}, r2={self.r2!r}")
        if not (self.T > 0.0 and math.isfinite(self.T)):
            raise DomainError(f"T must be > 0, got {self.T!r}")
        if not (self.y >= 0.0 and math.isfinite(self.y)):
            raise DomainError(f"y must be >= 0, got {self.y!r}")

    @property
    def V(self):
        return math.sqrt(self.r2 / self.r1)


# ---------------------------------------------------------------------------
# semigroup


@dataclass(frozen=True)
class SemigroupRun:
    """Result of :func:`evolve_semigroup`.

    ``history`` has columns ``s`` and the log of the chosen functional;
    ``mass`` is the weighted total ``sum_i M_i g_i`` at the same times.
    """

    grid: np.ndarray
    time_step: float
    decay_rate: float
    history: np.ndarray
    fit_residual: float
    mass: np.ndarray = field(repr=False)
    functional: str = "eigvec"


def _line_fit(s, y):
    A = np.column_stack([s, np.ones_like(s)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2)))


def evolve_semigroup(n, R, f0, s_max=20.0, dt=1e-2, grid=4000, x_max=None, functional="eigvec",
                     scheme="bdf2", outer="dirichlet", record_every=None, backend=None):
    """Evolve ``g(s) = exp(s L / 2) f0`` and read off the decay rate.

    Parameters
    ----------
    f0 : callable or array_like
        Initial data, evaluated on the grid nodes (nonnegative).
    functional : {"eigvec", "point", "mass"}
        ``eigvec`` projects on the discrete principal eigenvector,
        ``point`` follows ``g(0)`` and ``mass`` the weighted total.
    scheme : {"bdf2", "euler"}
    outer : {"dirichlet", "neumann"}
        Condition at the outer edge; ``neumann`` conserves the mass.

    The decay rate is the least-squares slope of the log functional over the
    second half of the run; it approximates half the principal eigenvalue.
    """
    n = _check_n(n)
    nodes = make_grid(R, int(grid), x_max) if np.ndim(grid) == 0 else np.asarray(grid, dtype=float)
    kd, ke, mass = assemble(n, R, nodes, outer)
    m = kd.size
    x = nodes[:m]
    g0 = np.asarray(f0(x) if callable(f0) else f0, dtype=float)
    if g0.size == nodes.size and m < nodes.size:
        g0 = g0[:m]
    if g0.shape != (m,) or np.any(g0 < 0.0):
        raise DomainError("f0 must be nonnegative on the grid")
    nsteps = int(round(s_max / dt))
    if nsteps < 4:
        raise DomainError("s_max / dt too small")
    every = record_every or max(1, nsteps // 400)
    psi = np.zeros(m)
    if functional == "eigvec":
        if outer != "dirichlet":
            raise DomainError("eigvec functional needs the Dirichlet outer condition")
        _, psi, _, _ = _solve_discrete(n, R, nodes, backend)
    elif functional not in ("point", "mass"):
        raise DomainError(f"unknown functional {functional!r}")
    if scheme not in ("bdf2", "euler"):
        raise DomainError(f"unknown scheme {scheme!r}")
    rec, _ = _tridiag.implicit_march(kd, ke, mass, g0, dt, nsteps, scheme == "bdf2", every, psi, 0, backend)
    row = {"eigvec": 0, "point": 1, "mass": 2}[functional]
    vals = rec[row]
    s = dt * every * np.arange(vals.size)
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0.0):
        raise InstabilityError(f"{functional} functional lost positivity")
    logv = np.log(vals)
    half = s >= 0.5 * s[-1]
    rate, resid = _line_fit(s[half], logv[half])
    if outer == "dirichlet" and rate >= 0.0:
        raise InstabilityError(f"functional grows (rate {rate:.3g}) where decay is expected")
    return SemigroupRun(nodes, dt, rate, np.column_stack([s, logv]), resid, rec[2], functional)


# ---------------------------------------------------------------------------
# Monte Carlo


def time_grid(T, dt, ds=0.0025, tail_fraction=0.01, tau_final=None):
    """Time to go ``tau = T - t`` at the step boundaries, decreasing.

    Steps are at most ``dt`` until ``tau`` reaches
    ``switch = max(tail_fraction T, dt / ds)``, then geometric with ratio
    ``1 - ds``, so the step in stationary time never exceeds about ``ds``. The
    grid stops at ``tau_final``. Working in ``tau`` keeps the tail
    representable far below ``eps * T``.
    """
    if not (0.0 < dt <= T / 1000.0):
        raise DomainError(f"dt={dt!r} must be in (0, T/1000]")
    if not (0.0 < ds < 1.0):
        raise DomainError(f"ds={ds!r} must be in (0, 1)")
    tau_final = 1e-19 * T if tau_final is None else float(tau_final)
    switch = max(tail_fraction * T, dt / ds)
    nu = int(math.ceil((T - switch) / dt))
    uniform = T - np.linspace(0.0, T - switch, nu + 1)
    q = 1.0 - ds
    ng = int(math.ceil(math.log(tau_final / switch) / math.log(q)))
    tail = switch * q ** np.arange(1, ng + 1)
    return np.concatenate([uniform, tail])


@njit(cache=True, nogil=True)
def _euler_step_nb(rho, z, tau, h, n, breaks, vals):
    sq_tau = math.sqrt(tau)
    for i in range(rho.shape[0]):
        r = rho[i]
        rp = r if r > 0.0 else 0.0
        arg = math.sqrt(rp) / sq_tau
        j = np.searchsorted(breaks, arg)
        D = vals[j]
        r = r + n * D * h + 2.0 * math.sqrt(D * rp * h) * z[i]
        rho[i] = r if r > 0.0 else 0.0


def _euler_step_np(rho, z, tau, h, n, breaks, vals):
    rp = np.maximum(rho, 0.0)
    D = vals[np.searchsorted(breaks, np.sqrt(rp) / math.sqrt(tau))]
    np.maximum(rho + n * D * h + 2.0 * np.sqrt(D * rp * h) * z, 0.0, out=rho)


_NONC_SWITCH = 1e12


@njit(cache=True, nogil=True)
def _seed_nb(seed):
    np.random.seed(seed)


@njit(cache=True, nogil=True)
def _ncx2_nb(df, lam, z):
    """Noncentral chi-square draw; ``z`` is a standard normal used when ``df >= 1``."""
    if df >= 1.0:
        # (sqrt(lam) + Z)^2 plus an independent central chi-square with df - 1
        g = math.sqrt(lam) + z
        if df > 1.0:
            return g * g + 2.0 * np.random.gamma(0.5 * (df - 1.0), 1.0)
        return g * g
    if lam > 1e12:
        return lam + df + math.sqrt(2.0 * df + 4.0 * lam) * np.random.standard_normal()
    k = np.random.poisson(0.5 * lam) if lam > 0.0 else 0
    return 2.0 * np.random.gamma(0.5 * df + k, 1.0)


@njit(cache=True, nogil=True)
def _exact_step_nb(rho, z, tau, h, n, breaks, vals):
    sq_tau = math.sqrt(tau)
    for i in range(rho.shape[0]):
        D = vals[np.searchsorted(breaks, math.sqrt(rho[i]) / sq_tau)]
        s = D * h
        rho[i] = s * _ncx2_nb(n, rho[i] / s, z[i])


def _ncx2_np(rng, df, lam, z):
    if df >= 1.0:
        g = np.sqrt(lam) + z
        extra = 2.0 * rng.standard_gamma(0.5 * (df - 1.0), lam.size) if df > 1.0 else 0.0
        return g * g + extra
    big = lam > _NONC_SWITCH
    out = np.empty(lam.size)
    # numpy's Poisson-mixture sampler fails for huge noncentrality; there
    # the moment-matched normal is exact to O(lam^-1/2) relative skew
    out[~big] = rng.noncentral_chisquare(df, lam[~big])
    lb = lam[big]
    out[big] = lb + df + np.sqrt(2.0 * df + 4.0 * lb) * rng.standard_normal(lb.size)
    return out


def _exact_step_np(rng, rho, z, tau, h, n, breaks, vals):
    s = vals[np.searchsorted(breaks, np.sqrt(rho) / math.sqrt(tau))] * h
    rho[:] = s * _ncx2_np(rng, n, rho / s, z)


def _transition(rng, rho, tau, h, n, breaks, vals, scheme, use_numba, need_z):
    z = rng.standard_normal(rho.size) if need_z else np.zeros(rho.size)
    if scheme == "euler":
        (_euler_step_nb if use_numba else _euler_step_np)(rho, z, tau, h, n, breaks, vals)
    elif use_numba:
        _exact_step_nb(rho, z, tau, h, n, breaks, vals)
    else:
        _exact_step_np(rng, rho, z, tau, h, n, breaks, vals)


def _simulate_chunk(seed_seq, size, params, breaks, vals, taus, scheme, use_numba):
    n = params.n
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    if use_numba:
        # numba keeps its own per-thread generator for gamma/Poisson draws
        _seed_nb(int(seed_seq.generate_state(1)[0]))
    need_z = scheme == "euler" or n >= 1.0
    r2 = np.full(1, float(vals[-1]))
    none = np.empty(0)
    # beyond this stationary radius a return below the last break has
    # probability about exp(-40); such paths finish at constant rate r2
    last = float(breaks[-1]) if breaks.size else 0.0
    z2cut = last * last + 80.0 * float(vals[-1])
    out = np.empty(size)
    idx = np.arange(size)
    rho = np.full(size, params.y * params.y)
    for k in range(taus.size - 1):
        tau, nxt = taus[k], taus[k + 1]
        _transition(rng, rho, tau, tau - nxt, n, breaks, vals, scheme, use_numba, need_z)
        done = rho > z2cut * nxt
        if done.any():
            fin = rho[done]
            _transition(rng, fin, nxt, nxt, n, none, r2, "exact", use_numba, n >= 1.0)
            out[idx[done]] = np.sqrt(fin)
            keep = ~done
            rho, idx = rho[keep], idx[keep]
    _transition(rng, rho, taus[-1], taus[-1], n, none, r2, "exact", use_numba, n >= 1.0)
    out[idx] = np.sqrt(rho)
    return out


def simulate_paths(params, R, n_paths=10**6, dt=None, ds=0.0025, seed=0, threads=1, chunk=2**16,
                   tau_final=None, scheme="exact", backend=None):
    """Final radii ``x_T`` under the parabolic strategy ``D = R(x / sqrt(T - t))``.

    The squared radius is advanced on :func:`time_grid`. ``scheme="exact"``
    freezes the rate at the start of each step and draws the exact
    squared-Bessel transition (noncentral chi-square); ``scheme="euler"`` is
    full-truncation Euler. Paths far outside the last rate change, and all
    paths over the final stretch ``tau_final``, finish with the exact
    transition at rate ``r2``.

    Paths are split into chunks with independent streams spawned from
    ``seed``, so the output does not depend on ``threads``. The two backends
    draw from different generators and agree only in distribution.
    """
    dt = params.T / 1000.0 if dt is None else float(dt)
    if n_paths < 10**4:
        raise DomainError("n_paths must be >= 1e4")
    if scheme not in ("exact", "euler"):
        raise DomainError(f"unknown scheme {scheme!r}")
    if not np.isclose(R.vals[-1], params.r2) or np.min(R.vals) < params.r1 * (1 - 1e-12):
        raise DomainError("strategy values must lie in [r1, r2] and end at r2")
    taus = time_grid(params.T, dt, ds, tau_final=tau_final)
    breaks = np.ascontiguousarray(R.breaks, dtype=float)
    vals = np.ascontiguousarray(R.vals, dtype=float)
    sizes = [chunk] * (n_paths // chunk) + ([n_paths % chunk] if n_paths % chunk else [])
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    use_numba = _backend.USE_NUMBA if backend is None else backend == "numba"
    job = lambda a: _simulate_chunk(a[0], a[1], params, breaks, vals, taus, scheme, use_numba)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, zip(seqs, sizes)))
    else:
        parts = [job(a) for a in zip(seqs, sizes)]
    return np.concatenate(parts)


@dataclass(frozen=True)
class ExponentFit:
    """Power-law fit ``mass(eps) ~ eps^slope``.

    ``counts_or_mass`` holds hit counts (sample input) or the given masses.
    """

    slope: float
    stderr: float
    eps_grid: np.ndarray
    counts_or_mass: np.ndarray
    intercept: float = float("nan")
    n_samples: int = 0

    def ci(self, k=3.0):
        return self.slope - k * self.stderr, self.slope + k * self.stderr


def default_eps_grid(samples, top, ratio=0.5, min_hits=50, max_points=40):
    """Geometric grid from ``top`` down while each bin keeps ``min_hits`` samples."""
    xs = np.sort(np.asarray(samples, dtype=float))
    eps = []
    e = float(top)
    while len(eps) < max_points and np.searchsorted(xs, e, side="right") >= min_hits:
        eps.append(e)
        e *= ratio
    return np.array(eps)


def fit_exponent(data, eps_grid=None, top=None, kind=None):
    """Slope of ``log mass(eps)`` against ``log eps``.

    ``data`` is either a sample of final radii (``kind="samples"``) or the
    masses at ``eps_grid`` (``kind="mass"``); by default arrays whose length
    differs from ``eps_grid`` are samples.

    For samples the fit is generalized least squares with the binomial
    covariance of the nested events ``{x <= eps}``,
    ``Cov(log p_i, log p_j) = (1/p_max - 1) / N``. Masses are fitted by
    ordinary least squares with the residual-based standard error.
    """
    data = np.asarray(data, dtype=float)
    if kind is None:
        kind = "mass" if eps_grid is not None and data.shape == np.shape(eps_grid) else "samples"
    if kind == "samples":
        N = data.size
        if eps_grid is None:
            if top is None:
                raise DomainError("give eps_grid or top")
            eps_grid = default_eps_grid(data, top)
        eps = np.asarray(eps_grid, dtype=float)
        xs = np.sort(data)
        counts = np.searchsorted(xs, eps, side="right")
        if np.any(counts == 0):
            good = eps[counts > 0]
            hint = f"; nonempty down to eps={good.min():.3g}" if good.size else ""
            raise EmptyBinError("empty epsilon bin" + hint)
        p = counts / N
        y = np.log(p)
        pmax = np.maximum.outer(p, p)
        cov = (1.0 / pmax - 1.0) / N
        out = counts
    elif kind == "mass":
        eps = np.asarray(eps_grid, dtype=float)
        if np.any(data <= 0.0):
            raise EmptyBinError("masses must be positive")
        y = np.log(data)
        cov = None
        out = data
        N = 0
    else:
        raise DomainError(f"unknown kind {kind!r}")
    if eps.size < 4:
        raise DomainError("need at least 4 epsilon values")
    if np.any(np.diff(eps) >= 0.0):
        raise DomainError("eps_grid must be strictly decreasing")
    X = np.column_stack([np.log(eps), np.ones_like(eps)])
    if cov is None:
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        dof = eps.size - 2
        s2 = float(resid @ resid) / dof
        var = s2 * np.linalg.inv(X.T @ X)[0, 0]
    else:
        # tiny ridge keeps the top bin (p close to 1) from making cov singular
        cov = cov + np.eye(eps.size) * 1e-15 * np.max(np.diag(cov))
        ci = np.linalg.solve(cov, X)
        A = X.T @ ci
        coef = np.linalg.solve(A, ci.T @ y)
        var = np.linalg.inv(A)[0, 0]
    return ExponentFit(float(coef[0]), float(math.sqrt(max(var, 0.0))), eps, out, float(coef[1]), int(N))


# ---------------------------------------------------------------------------
# quadratic-form identities


def _fd(f, x, order):
    # eighth-order central differences
    h = 1e-3 * np.maximum(1.0, np.abs(x))
    if order == 1:
        c = (4 / 5, -1 / 5, 4 / 105, -1 / 280)
        return sum(ck * (f(x + k * h) - f(x - k * h)) for k, ck in enumerate(c, 1)) / h
    c0, c = -205 / 72, (8 / 5, -1 / 5, 8 / 315, -1 / 560)
    return (c0 * f(x) + sum(ck * (f(x + k * h) + f(x - k * h)) for k, ck in enumerate(c, 1))) / h ** 2


def _derivs(f, df, d2f):
    df = df or (lambda x: _fd(f, x, 1))
    d2f = d2f or (lambda x: _fd(f, x, 2))
    return f, df, d2f


def _radial_integral(n, g, R, x_max, rel_tol=1e-12):
    """``int_0^x_max x^(n-1) g(x) dx`` for ``g`` smooth on each rate piece."""
    pts = [b for b in R.breaks if 0.0 < b < x_max]
    x1 = min([1.0, *pts])
    # x = x1 u^(1/n) on the first piece removes the endpoint singularity
    f0 = lambda u: g(x1 * np.power(u, 1.0 / n)) * (x1 ** n / n)
    v0, _, _, ok0 = adaptive_numpy(f0, np.array([0.0, 0.5, 1.0]), 1e-300, rel_tol)
    brk = np.array(sorted({x1, *pts, x_max}))
    f1 = lambda x: np.power(x, n - 1.0) * g(x)
    v1, _, _, ok1 = adaptive_numpy(f1, brk, 1e-300, rel_tol)
    return v0 + v1


def _generator_parts(n, R, f, df, d2f):
    e = lambda x: np.exp(R.drift_integral(x))
    lap = lambda x: d2f(x) + (n - 1.0) / x * df(x)
    Lf = lambda x: x * df(x) + R.rate(x) * lap(x)
    return e, lap, Lf


def quadratic_form_check(n, R, f, df=None, d2f=None, x_max=None):
    """Compare ``||L f||^2`` with ``||R Delta_n f||^2 - (2 - n) int p f'^2`` in ``L^2(w)``.

    Derivatives are finite-differenced when not supplied. Returns a dict
    with both sides, the relative residual and, for reference, the residual
    when the factor ``(2 - n)`` is replaced by one.
    """
    n = _check_n(n)
    f, df, d2f = _derivs(f, df, d2f)
    x_max = (float(R.breaks[-1]) if R.breaks.size else 0.0) + 12.0 if x_max is None else x_max
    e, lap, Lf = _generator_parts(n, R, f, df, d2f)
    lhs = _radial_integral(n, lambda x: e(x) / R.rate(x) * Lf(x) ** 2, R, x_max)
    rdf = _radial_integral(n, lambda x: e(x) * R.rate(x) * lap(x) ** 2, R, x_max)
    pf = _radial_integral(n, lambda x: e(x) * df(x) ** 2, R, x_max)
    rhs = rdf - (2.0 - n) * pf
    rhs_unit = rdf - pf
    return {
        "lhs": lhs,
        "rhs": rhs,
        "residual": abs(lhs - rhs) / abs(lhs),
        "residual_unit_factor": abs(lhs - rhs_unit) / abs(lhs),
    }


def symmetric_form_check(n, R, f, g, df=None, d2f=None, dg=None, d2g=None, x_max=None):
    """``<g, L f>_w``, ``<L g, f>_w`` and ``-int p g' f'``; returns relative residuals."""
    n = _check_n(n)
    f, df, d2f = _derivs(f, df, d2f)
    g, dg, d2g = _derivs(g, dg, d2g)
    x_max = (float(R.breaks[-1]) if R.breaks.size else 0.0) + 12.0 if x_max is None else x_max
    e, _, Lf = _generator_parts(n, R, f, df, d2f)
    _, _, Lg = _generator_parts(n, R, g, dg, d2g)
    a = _radial_integral(n, lambda x: e(x) / R.rate(x) * g(x) * Lf(x), R, x_max)
    b = _radial_integral(n, lambda x: e(x) / R.rate(x) * Lg(x) * f(x), R, x_max)
    c = -_radial_integral(n, lambda x: e(x) * dg(x) * df(x), R, x_max)
    scale = max(abs(a), abs(c))
    return {"gLf": a, "Lgf": b, "energy": c,
            "residual_symmetry": abs(a - b) / scale, "residual_energy": abs(a - c) / scale}

"""Principal eigenvalue of the rate-switching generator.

Three independent routes are provided:

* the smooth-pasting solver :func:`eigen_step` for a step strategy,
* the nested transcendental solver :func:`solve_optimal` for the optimal
  exponent and cutoff,
* the discretized Rayleigh-quotient solver :func:`rayleigh_eigen` for any
  piecewise-constant strategy.

Lengths are in stationary coordinates; ``V = sqrt(r2 / r1)``.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _tridiag
from .kernels import (
    QuadratureSpec,
    StepStrategy,
    _check_n,
    _y_raw,
    constant_strategy,
    l_fundamental,
    l_log_derivative,
)
from .quadrature import adaptive_numpy
from .specfun import DomainError

__all__ = [
    "BracketError",
    "UniquenessError",
    "ConvergenceError",
    "OptimalSolution",
    "EigenResult",
    "DiscretizedEig",
    "SOLVER_SPEC",
    "kappa_bar",
    "kappa_bar_residual",
    "kappa_of_eta",
    "solve_optimal",
    "second_equation_literal",
    "log_derivative_residuals",
    "h_ratio",
    "eigen_step",
    "eigenfunction_eval",
    "eigenfunction_log_derivative",
    "make_grid",
    "assemble",
    "rayleigh_eigen",
    "optimal_strategy",
]

SOLVER_SPEC = QuadratureSpec(rel_tol=1e-13, abs_tol=1e-300)
_XTOL = 1e-14
_RTOL = 4.0 * np.finfo(float).eps
DEGENERATE_GAP = 1e-4


class BracketError(RuntimeError):
    """No sign change where theory guarantees one; ``samples`` holds ``(x, f(x))`` pairs."""

    def __init__(self, message, samples=()):
        rows = "\n".join(f"  {a:.17g}  {b:.17g}" for a, b in samples)
        super().__init__(message + ("\n" + rows if rows else ""))
        self.samples = list(samples)


class UniquenessError(RuntimeError):
    """More than one sign change of the pasting condition."""


class ConvergenceError(RuntimeError):
    """Inverse iteration stalled."""


def _margin(n):
    return 1e-6 * n


def _root(f, a, b, fa=None, fb=None):
    return brentq(f, a, b, xtol=_XTOL, rtol=_RTOL, maxiter=300)


# ---------------------------------------------------------------------------
# limit cutoff


def kappa_bar_residual(n, kappa):
    """Residual of the limit-cutoff equation at ``kappa``."""
    return _kbar_residual(_check_n(n), float(kappa))


def _kbar_residual(n, kappa):
    # kappa^(2-n) int_0^kappa a^(n-1) e^((a^2-kappa^2)/2) da - 1, with a = kappa u^(1/n)
    k2 = kappa * kappa

    def f(u):
        return np.exp(0.5 * k2 * (np.power(u, 2.0 / n) - 1.0))

    val, _, _, _ = adaptive_numpy(f, np.array([0.0, 0.5, 1.0]), abs_tol=1e-300, rel_tol=1e-15)
    return k2 / n * val - 1.0


def kappa_bar(n):
    """Limit cutoff as ``V -> inf``: root of ``kappa^(2-n) int_0^kappa a^(n-1) e^((a^2-kappa^2)/2) da = 1``.

    The residual is negative at ``sqrt(n)`` and positive beyond the root, so
    the upper end of the bracket is found by geometric expansion.
    """
    n = _check_n(n)
    f = lambda k: _kbar_residual(n, k)
    lo = math.sqrt(n)
    flo = f(lo)
    hi = lo
    samples = [(lo, flo)]
    for _ in range(200):
        hi *= 1.25
        fhi = f(hi)
        samples.append((hi, fhi))
        if fhi > 0.0:
            break
        lo, flo = hi, fhi
    else:
        raise BracketError(f"kappa_bar: no sign change for n={n:g}", samples)
    return _root(f, lo, hi)


# ---------------------------------------------------------------------------
# optimal (eta, kappa)


def _check_eta(n, eta):
    eta = float(eta)
    if not (0.0 < eta < n):
        raise DomainError(f"eta={eta!r} outside (0, n={n:g})")
    return eta


def _eq2_reduced(n, eta, kappa, spec=SOLVER_SPEC):
    a, _ = _y_raw(-1, 0.5 * n, eta, kappa, spec)
    b, _ = _y_raw(-1, 0.5 * (n - 2.0), eta, kappa, spec)
    return kappa * kappa * a / b - 1.0


def kappa_of_eta(n, eta):
    """Cutoff solving the second optimality equation for given ``eta``.

    Integrating the inner integral by parts turns the equation into
    ``kappa^2 Y-_{n/2,eta}(kappa) = Y-_{(n-2)/2,eta}(kappa)``, which is what
    is solved here; :func:`second_equation_literal` evaluates the original
    double-integral form.
    """
    n = _check_n(n)
    eta = _check_eta(n, eta)
    d = _margin(n)
    f = lambda k: _eq2_reduced(n, eta, k)
    lo, hi = math.sqrt(n) * (1.0 - d), kappa_bar(n) * (1.0 + d)
    flo, fhi = f(lo), f(hi)
    samples = [(lo, flo), (hi, fhi)]
    for _ in range(60):
        if flo < 0.0 < fhi:
            return _root(f, lo, hi)
        if flo >= 0.0:
            lo *= 0.9
            flo = f(lo)
            samples.append((lo, flo))
        if fhi <= 0.0:
            hi *= 1.1
            fhi = f(hi)
            samples.append((hi, fhi))
    raise BracketError(f"kappa_of_eta: no sign change for n={n:g}, eta={eta:g}", samples)


def _eq1_residual(n, eta, u, spec=SOLVER_SPEC):
    a, _ = _y_raw(1, 0.5 * n, eta + 2.0, u, spec)
    b, _ = _y_raw(1, 0.5 * (n - 2.0), eta, u, spec)
    u2 = u * u
    return a / b - (n - eta - u2) / u2


def _eq1_relative(n, eta, u):
    # both sides grow like V^2, so report the residual relative to them
    a, _ = _y_raw(1, 0.5 * n, eta + 2.0, u, SOLVER_SPEC)
    b, _ = _y_raw(1, 0.5 * (n - 2.0), eta, u, SOLVER_SPEC)
    return _eq1_residual(n, eta, u) / max(abs(a / b), 1.0)


def second_equation_literal(n, eta, kappa):
    """Residual of the double-integral form of the second equation.

    ``kappa^(2-n) int_0^kappa Y-(a) a^(n-1) e^((a^2-kappa^2)/2) da / Y-(kappa) - 1``
    with ``Y- = Y-_{(n-2)/2,eta}``.
    """
    n = _check_n(n)
    nu = 0.5 * (n - 2.0)
    k2 = kappa * kappa
    spec = SOLVER_SPEC

    def f(u):
        a = kappa * np.power(u, 1.0 / n)
        y = np.array([_y_raw(-1, nu, eta, float(ai), spec)[0] for ai in a])
        return y * np.exp(0.5 * k2 * (np.power(u, 2.0 / n) - 1.0))

    val, _, _, _ = adaptive_numpy(f, np.array([0.0, 0.5, 1.0]), abs_tol=1e-300, rel_tol=1e-13)
    ref, _ = _y_raw(-1, nu, eta, kappa, spec)
    return k2 / n * val / ref - 1.0


@dataclass(frozen=True)
class OptimalSolution:
    """Optimal exponent ``eta`` and unit-rate cutoff ``kappa`` for ``(n, V)``.

    ``residual_eq1`` and ``residual_eq2`` are the residuals of the two
    optimality equations in their original form. ``degenerate`` marks the
    ``V -> 1`` limit, returned analytically.
    """

    n: float
    V: float
    eta: float
    kappa: float
    eigenvalue_E: float
    gamma: float
    residual_eq1: float
    residual_eq2: float
    degenerate: bool = False

    @property
    def cutoff_unit(self):
        return self.kappa


def solve_optimal(n, V):
    """Solve both optimality equations for ``(eta, kappa)``.

    Outer Brent iteration on ``eta`` of the first equation, with
    ``kappa = kappa_of_eta(n, eta)`` substituted.

    Raises
    ------
    DomainError
        ``n`` outside ``(0, 2)`` or ``V < 1``.
    BracketError
        The outer residual has no sign change; the sampled values are attached.
    """
    n = _check_n(n)
    V = float(V)
    if not (V >= 1.0 and math.isfinite(V)):
        raise DomainError(f"V={V!r} must be finite and >= 1")
    if V - 1.0 < DEGENERATE_GAP:
        return OptimalSolution(n, V, 0.0, math.sqrt(n), -n, 1.0, 0.0, 0.0, degenerate=True)

    def rho(eta):
        return _eq1_residual(n, eta, kappa_of_eta(n, eta) / V)

    d = _margin(n)
    lo, hi = d, n - d
    flo, fhi = rho(lo), rho(hi)
    if not (flo < 0.0 < fhi):
        grid = np.linspace(lo, hi, 17)
        raise BracketError(f"solve_optimal: no sign change for n={n:g}, V={V:g}",
                           [(g, rho(g)) for g in grid])
    eta = _root(rho, lo, hi)
    kappa = kappa_of_eta(n, eta)
    u = kappa / V
    ym, _ = _y_raw(-1, 0.5 * (n - 2.0), eta, kappa, SOLVER_SPEC)
    yp, _ = _y_raw(1, 0.5 * (n - 2.0), eta, u, SOLVER_SPEC)
    gamma = ym / (V ** eta * yp * math.exp(-0.5 * u * u))
    return OptimalSolution(
        n=n, V=V, eta=eta, kappa=kappa, eigenvalue_E=eta - n, gamma=gamma,
        residual_eq1=_eq1_relative(n, eta, u),
        residual_eq2=second_equation_literal(n, eta, kappa),
    )


def _fd_derivative(fn, x, h):
    # sixth-order central difference
    c = (1.0 / 60.0, -3.0 / 20.0, 3.0 / 4.0)
    return sum(ci * (fn(x + k * h) - fn(x - k * h)) for ci, k in zip(c, (3, 2, 1))) / h


def log_derivative_residuals(sol, h=1e-3):
    """Relative residuals of the log-derivative form of the optimality system.

    Checks ``(n - eta) Y(x) / x = -dY/dx`` for ``Y+`` at ``kappa / V`` and
    for ``Y-`` at ``kappa``. Derivatives are taken by finite differences so
    the check does not reuse the order-raising identities.
    """
    n, eta = sol.n, sol.eta
    nu = 0.5 * (n - 2.0)
    out = []
    for sign, x in ((1, sol.kappa / sol.V), (-1, sol.kappa)):
        def y(t, sign=sign):
            v, _ = _y_raw(sign, nu, eta, t, SOLVER_SPEC)
            return v * math.exp(-0.5 * t * t) if sign > 0 else v
        lhs = (n - eta) / x * y(x)
        rhs = -_fd_derivative(y, x, h * x)
        out.append(abs(lhs - rhs) / abs(lhs))
    return tuple(out)


# ---------------------------------------------------------------------------
# step strategies


def h_ratio(n, r1, r2, c, E, spec=SOLVER_SPEC):
    """Smooth-pasting ratio ``(L-' L+) / (L+' L-)`` at the cutoff.

    ``L-`` uses rate ``r1`` and ``L+`` rate ``r2``; the eigenvalue of the
    step strategy is the ``E`` where the ratio equals one.
    """
    n = _check_n(n)
    if not c > 0.0:
        raise DomainError("cutoff must be > 0")
    lm = l_log_derivative(-1, n, E, r1, c, spec)
    lp = l_log_derivative(1, n, E, r2, c, spec)
    return lm / lp


@dataclass(frozen=True)
class EigenResult:
    """Principal eigenpair of a step strategy.

    The eigenfunction is ``L-_{r1}`` up to ``c`` and ``gamma L+_{r2}``
    beyond. For ``r1 == r2`` it is ``exp(-x^2 / (2 r))`` and ``strategy`` is a
    constant table.
    """

    eigenvalue_E: float
    strategy: object
    gamma: float
    inflection_x: float
    n: float
    r1: float
    r2: float
    cutoff_c: float

    @property
    def degenerate(self):
        return self.r1 == self.r2


def _inflection(n, r1, r2, c, E, spec):
    # Delta_n phi = (E phi - x phi') / R has the sign of q = E - x phi'/phi
    def q(x):
        if x <= c:
            return E - x * l_log_derivative(-1, n, E, r1, x, spec)
        return E - x * l_log_derivative(1, n, E, r2, x, spec)

    top = max(c, math.sqrt(n * r2))
    while q(top) <= 0.0:
        top *= 2.0
        if top > 1e6:
            raise BracketError("inflection: q stays negative")
    xs = np.unique(np.concatenate([np.linspace(top / 200.0, top, 200), [c]]))
    vals = np.array([q(x) for x in xs])
    idx = np.flatnonzero((vals[:-1] < 0.0) & (vals[1:] >= 0.0))
    if idx.size == 0:
        raise BracketError("inflection: no sign change", list(zip(xs, vals)))
    i = idx[0]
    if vals[i + 1] == 0.0:
        return float(xs[i + 1])
    return _root(q, xs[i], xs[i + 1])


def eigen_step(n, r1, r2, c, spec=SOLVER_SPEC):
    """Principal eigenvalue of the step strategy ``(r1, r2, c)``.

    Scans the pasting condition on 64 points of ``(-n, 0)``, insists on a
    single sign change and refines it with Brent's method.

    Raises
    ------
    UniquenessError
        More than one sign change on the scan.
    """
    n = _check_n(n)
    r1, r2, c = float(r1), float(r2), float(c)
    if not (0.0 < r1 <= r2):
        raise DomainError(f"need 0 < r1 <= r2, got {r1!r}, {r2!r}")
    if not c > 0.0:
        raise DomainError("cutoff must be > 0")
    if r1 == r2:
        return EigenResult(-n, constant_strategy(r1), 1.0, math.sqrt(n * r1), n, r1, r2, c)

    g = lambda E: h_ratio(n, r1, r2, c, E, spec) - 1.0
    d = _margin(n)
    Es = np.linspace(-n + d, -d, 64)
    vals = np.array([g(E) for E in Es])
    changes = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if changes.size > 1:
        raise UniquenessError(f"pasting condition changes sign {changes.size} times on the scan")
    if changes.size == 0:
        raise BracketError("eigen_step: no sign change of h - 1", list(zip(Es, vals)))
    i = changes[0]
    E = _root(g, Es[i], Es[i + 1])
    gamma = l_fundamental(-1, n, E, r1, c, spec) / l_fundamental(1, n, E, r2, c, spec)
    x_inf = _inflection(n, r1, r2, c, E, spec)
    return EigenResult(E, StepStrategy(r1, r2, c), gamma, x_inf, n, r1, r2, c)


def _pieces(result):
    if isinstance(result, OptimalSolution):
        return result.n, 1.0, result.V ** 2, result.kappa, result.eigenvalue_E, result.gamma, result.degenerate
    return result.n, result.r1, result.r2, result.cutoff_c, result.eigenvalue_E, result.gamma, result.degenerate


def eigenfunction_eval(result, x, side=None):
    """Unnormalized principal eigenfunction at ``x > 0``.

    ``side`` may be ``"left"`` or ``"right"`` to force one branch, which is
    how the matching at the cutoff is checked.
    """
    n, r1, r2, c, E, gamma, degen = _pieces(result)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs <= 0.0):
        raise DomainError("x must be > 0")
    if degen:
        out = np.exp(-0.5 * xs * xs / r1)
    else:
        out = np.empty_like(xs)
        for i, xi in enumerate(xs):
            left = xi <= c if side is None else side == "left"
            if left:
                out[i] = l_fundamental(-1, n, E, r1, xi, SOLVER_SPEC)
            else:
                out[i] = gamma * l_fundamental(1, n, E, r2, xi, SOLVER_SPEC)
    return float(out[0]) if np.ndim(x) == 0 else out


def eigenfunction_log_derivative(result, x, side=None):
    """``phi'(x) / phi(x)`` from the order-raising identities."""
    n, r1, r2, c, E, _, degen = _pieces(result)
    x = float(x)
    if degen:
        return -x / r1
    left = x <= c if side is None else side == "left"
    if left:
        return l_log_derivative(-1, n, E, r1, x, SOLVER_SPEC)
    return l_log_derivative(1, n, E, r2, x, SOLVER_SPEC)


def optimal_strategy(params):
    """Optimal step strategy for ``params`` (needs ``n``, ``r1``, ``r2``).

    Returns ``(strategy, solution)``. The cutoff is ``kappa * sqrt(r1)``.
    When ``r1 == r2`` (or ``V`` is within the degeneracy gap) every cutoff is
    optimal and a constant table is returned.
    """
    n, r1, r2 = float(params.n), float(params.r1), float(params.r2)
    if not (0.0 < r1 <= r2):
        raise DomainError(f"need 0 < r1 <= r2, got {r1!r}, {r2!r}")
    sol = solve_optimal(n, math.sqrt(r2 / r1))
    if sol.degenerate:
        return constant_strategy(r2), sol
    return StepStrategy(r1, r2, sol.kappa * math.sqrt(r1)), sol


# ---------------------------------------------------------------------------
# discretized eigenproblem


_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def default_x_max(R):
    """Outer boundary: last rate change plus eight outer standard deviations."""
    last = float(R.breaks[-1]) if R.breaks.size else 0.0
    return last + 8.0 * math.sqrt(float(R.vals[-1]))


def make_grid(R, n_points=4000, x_max=None):
    """Uniform nodes on ``[0, x_max]`` merged with every rate change of ``R``."""
    x_max = default_x_max(R) if x_max is None else float(x_max)
    base = np.linspace(0.0, x_max, int(n_points))
    h = x_max / (n_points - 1)
    brk = R.breaks[(R.breaks > 0.0) & (R.breaks < x_max)]
    if brk.size:
        # drop uniform nodes that would leave a sliver next to a break
        near = np.min(np.abs(base[:, None] - brk[None, :]), axis=1) < 0.25 * h
        near[0] = near[-1] = False
        base = np.union1d(base[~near], brk)
    return base


def _cell_integrals(n, R, grid):
    """Per-cell ``int p``, ``int w (right - x)/h`` and ``int w (x - left)/h``."""
    a, b = grid[:-1], grid[1:]
    h = b - a
    # interior nodes per cell
    t = 0.5 * (a + b)[:, None] + 0.5 * h[:, None] * _GL_X[None, :]
    wq = 0.5 * h[:, None] * _GL_W[None, :]
    # first cell: x = b0 u^(1/n) removes the x^(n-1) endpoint behaviour
    b0 = b[0]
    u = 0.5 * (1.0 + _GL_X)
    x0 = b0 * u ** (1.0 / n)
    t[0] = x0
    xt = t
    # breaks are nodes, so the rate is constant on each cell
    rate = R.rate(0.5 * (a + b))[:, None]
    ed = np.exp(R.drift_integral(xt.ravel()).reshape(xt.shape))
    p = np.power(xt, n - 1.0) * ed
    p[0] = ed[0] * (b0 ** n / n)  # x^(n-1) dx = b0^n / n du
    wq = wq.copy()
    wq[0] = 0.5 * _GL_W
    P = np.sum(p * wq, axis=1)
    w = p / rate
    right = (b[:, None] - xt) / h[:, None]
    ML = np.sum(w * right * wq, axis=1)
    MR = np.sum(w * (1.0 - right) * wq, axis=1)
    return P, ML, MR


def _cell_coefficients(n, R, grid):
    """Cell stiffness ``int p / h^2`` and nodal lumped mass."""
    P, ML, MR = _cell_integrals(n, R, grid)
    h = np.diff(grid)
    mass = np.zeros(grid.size)
    mass[:-1] += ML
    mass[1:] += MR
    return P / (h * h), mass


def _energy_quotient(k, mass, f):
    """``sum k (df)^2 / sum m f^2`` with ``f`` zero at the last node."""
    fe = np.append(f, 0.0)
    return float(np.sum(k * np.diff(fe) ** 2) / np.sum(mass[:-1] * f * f))


def assemble(n, R, grid, outer="dirichlet"):
    """Stiffness ``(diag, offdiag)`` and lumped mass on ``grid``.

    The stiffness has entries ``int p phi_i' phi_j'`` for hat functions and
    the mass is ``int w phi_i``. The node at the origin carries the natural
    (Neumann) condition; ``outer`` is ``"dirichlet"`` (last node removed) or
    ``"neumann"``.
    """
    n = _check_n(n)
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0.0):
        raise DomainError("grid must start at 0 and increase strictly")
    k, mass = _cell_coefficients(n, R, grid)
    diag = np.zeros(grid.size)
    diag[:-1] += k
    diag[1:] += k
    off = -k
    if outer == "dirichlet":
        return diag[:-1], off[:-1], mass[:-1]
    if outer == "neumann":
        return diag, off, mass
    raise DomainError(f"unknown outer boundary {outer!r}")


@dataclass(frozen=True)
class DiscretizedEig:
    """Finite-element principal eigenpair.

    ``eigenvector`` lives on ``grid`` without the Dirichlet node and is
    scaled to a unit maximum. ``error_estimate`` is the Richardson estimate
    from a half-resolution solve (``nan`` if not computed).
    """

    grid: np.ndarray
    eigenvalue: float
    eigenvector: np.ndarray
    rayleigh_history: np.ndarray
    error_estimate: float = float("nan")
    mass: np.ndarray = field(default=None, repr=False)


def _solve_discrete(n, R, grid, backend):
    n = _check_n(n)
    grid = np.asarray(grid, dtype=float)
    k, full_mass = _cell_coefficients(n, R, grid)
    kd, ke, mass = assemble(n, R, grid)
    s = 1.0 / np.sqrt(mass)
    d = kd * s * s
    e = ke * s[:-1] * s[1:]
    x = grid[:-1]
    v0 = np.sqrt(mass) * np.exp(-0.5 * x * x / float(R.vals[-1]))
    lam, v, hist, ok = _tridiag.inverse_iteration(d, e, v0, tol=1e-9, backend=backend)
    if not ok:
        raise ConvergenceError(f"inverse iteration did not converge; last values {hist[-3:]}")
    f = v * s
    f = f / f[np.argmax(np.abs(f))]
    # the tridiagonal quotient cancels badly; the energy form does not
    lam = _energy_quotient(k, full_mass, f)
    return -lam, f, -np.asarray(hist), mass


def rayleigh_eigen(n, R, grid=4000, x_max=None, error_estimate=True, backend=None):
    """Principal eigenvalue by minimizing ``int p f'^2 / int w f^2``.

    Parameters
    ----------
    n : float
    R : StepStrategy or TabulatedStrategy
    grid : int or array_like
        Node count for :func:`make_grid` or explicit nodes starting at 0.
    x_max : float, optional
        Outer boundary when ``grid`` is a count.
    error_estimate : bool
        Also solve at half resolution and report ``|E_h - E_2h| / 3``.
    """
    n = _check_n(n)
    if np.ndim(grid) == 0:
        npts = int(grid)
        nodes = make_grid(R, npts, x_max)
    else:
        nodes = np.asarray(grid, dtype=float)
        npts = nodes.size
    E, f, hist, mass = _solve_discrete(n, R, nodes, backend)
    if np.any(f <= 0.0):
        raise ConvergenceError("discrete principal eigenvector is not positive")
    err = float("nan")
    if error_estimate:
        coarse = make_grid(R, max(npts // 2, 16), nodes[-1]) if np.ndim(grid) == 0 else nodes[::2]
        if coarse[-1] != nodes[-1]:
            coarse = np.append(coarse, nodes[-1])
        Ec, _, _, _ = _solve_discrete(n, R, coarse, backend)
        err = abs(E - Ec) / 3.0
    return DiscretizedEig(nodes, E, f, hist, err, mass)

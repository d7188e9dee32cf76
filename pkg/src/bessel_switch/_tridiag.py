"""Symmetric tridiagonal kernels: solves, inverse iteration, implicit marching.

A symmetric tridiagonal matrix is passed as ``(d, e)``: diagonal ``d`` of
length ``m`` and off-diagonal ``e`` of length ``m - 1``.
"""
import numpy as np
from scipy.linalg import solve_banded

from . import _backend
from ._backend import njit


# ---------------------------------------------------------------------------
# numba


@njit(cache=True, nogil=True)
def _factor_nb(d, e, shift):
    """LU of ``T - shift I`` without pivoting: returns pivots and multipliers."""
    m = d.shape[0]
    piv = np.empty(m)
    mult = np.empty(max(m - 1, 0))
    piv[0] = d[0] - shift
    for i in range(1, m):
        mult[i - 1] = e[i - 1] / piv[i - 1]
        piv[i] = d[i] - shift - mult[i - 1] * e[i - 1]
    return piv, mult


@njit(cache=True, nogil=True)
def _solve_factored_nb(piv, mult, e, rhs, out):
    m = piv.shape[0]
    out[0] = rhs[0]
    for i in range(1, m):
        out[i] = rhs[i] - mult[i - 1] * out[i - 1]
    out[m - 1] /= piv[m - 1]
    for i in range(m - 2, -1, -1):
        out[i] = (out[i] - e[i] * out[i + 1]) / piv[i]
    return out


@njit(cache=True, nogil=True)
def _inverse_iteration_nb(d, e, v0, warmup, max_iter, tol, shift_factor):
    m = d.shape[0]
    v = v0 / np.sqrt(np.dot(v0, v0))
    w = np.empty(m)
    hist = np.empty(warmup + max_iter + 1)
    count = 0
    lam = _rayleigh_nb(d, e, v)
    hist[count] = lam
    count += 1
    piv, mult = _factor_nb(d, e, 0.0)
    for _ in range(warmup):
        _solve_factored_nb(piv, mult, e, v, w)
        v = w / np.sqrt(np.dot(w, w))
        lam = _rayleigh_nb(d, e, v)
        hist[count] = lam
        count += 1
    converged = False
    shift = lam * shift_factor
    piv, mult = _factor_nb(d, e, shift)
    for _ in range(max_iter):
        _solve_factored_nb(piv, mult, e, v, w)
        v = w / np.sqrt(np.dot(w, w))
        new = _rayleigh_nb(d, e, v)
        hist[count] = new
        count += 1
        if abs(new - lam) <= tol * abs(new):
            lam = new
            converged = True
            break
        lam = new
    return lam, v, hist[:count], converged


@njit(cache=True, nogil=True)
def _rayleigh_nb(d, e, v):
    m = d.shape[0]
    s = 0.0
    for i in range(m):
        s += d[i] * v[i] * v[i]
    for i in range(m - 1):
        s += 2.0 * e[i] * v[i] * v[i + 1]
    return s / np.dot(v, v)


@njit(cache=True, nogil=True)
def _march_nb(kd, ke, mass, g0, dt, nsteps, bdf2, every, psi, ipoint):
    """Implicit march of ``M g' = -(1/2) K g``; records functionals every ``every`` steps.

    Rows of the record: ``<psi, M g>``, ``g[ipoint]``, ``sum(M g)``.
    """
    m = kd.shape[0]
    nrec = nsteps // every + 1
    rec = np.empty((3, nrec))
    g = g0.copy()
    g_prev = g0.copy()
    rhs = np.empty(m)
    out = np.empty(m)
    # implicit Euler matrix: M + dt/2 K ; BDF2: 3/2 M + dt/2 K
    d1 = mass + 0.5 * dt * kd
    e1 = 0.5 * dt * ke
    p1, m1 = _factor_nb(d1, e1, 0.0)
    d2 = 1.5 * mass + 0.5 * dt * kd
    p2, m2 = _factor_nb(d2, e1, 0.0)
    r = 0
    rec[0, r] = np.dot(psi, mass * g)
    rec[1, r] = g[ipoint]
    rec[2, r] = np.sum(mass * g)
    r += 1
    for k in range(1, nsteps + 1):
        if bdf2 and k > 1:
            for i in range(m):
                rhs[i] = mass[i] * (2.0 * g[i] - 0.5 * g_prev[i])
            _solve_factored_nb(p2, m2, e1, rhs, out)
        else:
            for i in range(m):
                rhs[i] = mass[i] * g[i]
            _solve_factored_nb(p1, m1, e1, rhs, out)
        g_prev[:] = g
        g[:] = out
        if k % every == 0:
            rec[0, r] = np.dot(psi, mass * g)
            rec[1, r] = g[ipoint]
            rec[2, r] = np.sum(mass * g)
            r += 1
    return rec[:, :r], g


# ---------------------------------------------------------------------------
# numpy / scipy


def _banded(d, e, shift=0.0):
    ab = np.zeros((3, d.size))
    ab[0, 1:] = e
    ab[1] = d - shift
    ab[2, :-1] = e
    return ab


def _rayleigh_np(d, e, v):
    return (np.dot(d * v, v) + 2.0 * np.dot(e * v[:-1], v[1:])) / np.dot(v, v)


def _inverse_iteration_np(d, e, v0, warmup, max_iter, tol, shift_factor):
    v = v0 / np.linalg.norm(v0)
    lam = _rayleigh_np(d, e, v)
    hist = [lam]
    ab = _banded(d, e)
    for _ in range(warmup):
        w = solve_banded((1, 1), ab, v)
        v = w / np.linalg.norm(w)
        lam = _rayleigh_np(d, e, v)
        hist.append(lam)
    ab = _banded(d, e, lam * shift_factor)
    converged = False
    for _ in range(max_iter):
        w = solve_banded((1, 1), ab, v)
        v = w / np.linalg.norm(w)
        new = _rayleigh_np(d, e, v)
        hist.append(new)
        if abs(new - lam) <= tol * abs(new):
            lam = new
            converged = True
            break
        lam = new
    return lam, v, np.array(hist), converged


def _march_np(kd, ke, mass, g0, dt, nsteps, bdf2, every, psi, ipoint):
    ab1 = _banded(mass + 0.5 * dt * kd, 0.5 * dt * ke)
    ab2 = _banded(1.5 * mass + 0.5 * dt * kd, 0.5 * dt * ke)
    g = g0.copy()
    g_prev = g0.copy()
    rec = [[np.dot(psi, mass * g), g[ipoint], np.sum(mass * g)]]
    for k in range(1, nsteps + 1):
        if bdf2 and k > 1:
            new = solve_banded((1, 1), ab2, mass * (2.0 * g - 0.5 * g_prev))
        else:
            new = solve_banded((1, 1), ab1, mass * g)
        g_prev, g = g, new
        if k % every == 0:
            rec.append([np.dot(psi, mass * g), g[ipoint], np.sum(mass * g)])
    return np.array(rec).T, g


# ---------------------------------------------------------------------------
# dispatch


def inverse_iteration(d, e, v0, warmup=8, max_iter=200, tol=1e-12, shift_factor=1.0 - 1e-4, backend=None):
    """Smallest eigenpair of the symmetric tridiagonal ``(d, e)``.

    ``warmup`` unshifted steps, then a fixed shift just below the current
    Rayleigh quotient. Returns ``(eigenvalue, unit vector, history, converged)``.
    """
    use_numba = _backend.USE_NUMBA if backend is None else backend == "numba"
    fn = _inverse_iteration_nb if use_numba else _inverse_iteration_np
    args = (np.ascontiguousarray(d, dtype=float), np.ascontiguousarray(e, dtype=float),
            np.ascontiguousarray(v0, dtype=float))
    return fn(*args, int(warmup), int(max_iter), float(tol), float(shift_factor))


def implicit_march(kd, ke, mass, g0, dt, nsteps, bdf2=True, every=1, psi=None, ipoint=0, backend=None):
    """Integrate ``M g' = -K g / 2``; see :func:`_march_nb` for the record layout."""
    use_numba = _backend.USE_NUMBA if backend is None else backend == "numba"
    fn = _march_nb if use_numba else _march_np
    c = lambda a: np.ascontiguousarray(a, dtype=float)
    psi = np.zeros_like(g0) if psi is None else psi
    return fn(c(kd), c(ke), c(mass), c(g0), float(dt), int(nsteps), bool(bdf2), int(every), c(psi), int(ipoint))

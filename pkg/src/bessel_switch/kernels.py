r"""Integral kernels of the rate-switching generator.

All lengths are in stationary coordinates. For a strategy ``R`` the
generator is :math:`L f = x f' + R(x)\,\Delta_n f` with
:math:`\Delta_n f = f'' + \frac{n-1}{x} f'`, and

.. math::
    D(x) = \int_0^x \frac{v}{R(v)}\,dv, \qquad
    p(x) = x^{n-1} e^{D(x)}, \qquad w(x) = p(x) / R(x),

so that :math:`L f = (p f')' / w` is symmetric in :math:`L^2(w)`.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._backend import njit
from .quadrature import NODES, W_GAUSS, W_KRONROD, QuadratureError, adaptive_numpy, gk21
from .specfun import (
    DomainError,
    KernelSign,
    Order,
    sminus_scaled_numpy,
    sminus_scaled_scalar,
    splus_scaled_numpy,
    splus_scaled_scalar,
    tplus_scaled_numpy,
    tplus_scaled_scalar,
)

__all__ = [
    "StepStrategy",
    "TabulatedStrategy",
    "constant_strategy",
    "QuadratureSpec",
    "drift_integral",
    "weight_w",
    "weight_p",
    "y_kernel",
    "y_kernel_with_error",
    "l_fundamental",
    "l_log_derivative",
    "green_function",
    "green_row_integral",
    "hs_norm",
]


# ---------------------------------------------------------------------------
# strategies


class _PiecewiseRate:
    """Left-continuous piecewise-constant rate ``R(x) = vals[i]`` on ``(breaks[i-1], breaks[i]]``."""

    breaks: np.ndarray
    vals: np.ndarray

    def _setup(self):
        b = np.asarray(self.breaks, dtype=float)
        v = np.asarray(self.vals, dtype=float)
        lower = np.concatenate([[0.0], b])
        seg = (b**2 - lower[:-1] ** 2) / (2.0 * v[:-1])
        object.__setattr__(self, "_lower", lower)
        object.__setattr__(self, "_d_at_break", np.concatenate([[0.0], np.cumsum(seg)]))

    def _index(self, x):
        return np.searchsorted(self.breaks, x, side="left")

    def rate(self, x):
        """``R(x)``; the value at a break belongs to the piece on its left."""
        idx = self._index(np.asarray(x, dtype=float))
        out = self.vals[idx]
        return float(out) if np.ndim(x) == 0 else out

    def drift_integral(self, x):
        """Exact ``int_0^x v / R(v) dv``."""
        xa = np.asarray(x, dtype=float)
        idx = self._index(xa)
        lo = self._lower[idx]
        out = self._d_at_break[idx] + (xa**2 - lo**2) / (2.0 * self.vals[idx])
        return float(out) if np.ndim(x) == 0 else out

    def drift_difference(self, a, b):
        """``D(b) - D(a)`` without cancellation when ``a`` and ``b`` are close."""
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        il = self._index(lo)
        ih = self._index(hi)
        vl = self.vals[il]
        vh = self.vals[ih]
        top = np.append(self.breaks, np.inf)[il]
        bot = self._lower[ih]
        with np.errstate(invalid="ignore"):
            split = ((top - lo) * (top + lo) / (2.0 * vl)
                     + (self._d_at_break[ih] - self._d_at_break[np.minimum(il + 1, ih)])
                     + (hi - bot) * (hi + bot) / (2.0 * vh))
        out = np.where(il == ih, (hi - lo) * (hi + lo) / (2.0 * vl), split)
        out = np.where(b >= a, out, -out)
        return float(out) if out.ndim == 0 else out

    @property
    def jump_points(self):
        return tuple(float(b) for b in self.breaks if b > 0.0)


@dataclass(frozen=True)
class StepStrategy(_PiecewiseRate):
    """Rate ``r1`` on ``[0, c]`` and ``r2`` on ``(c, inf)``."""

    r1: float
    r2: float
    cutoff_c: float
    breaks: np.ndarray = field(init=False, repr=False, compare=False)
    vals: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.r1 < self.r2) or not math.isfinite(self.r2):
            raise DomainError(f"need 0 < r1 < r2, got r1={self.r1!r}, r2={self.r2!r}")
        if not (self.cutoff_c >= 0.0 and math.isfinite(self.cutoff_c)):
            raise DomainError(f"cutoff must be finite and >= 0, got {self.cutoff_c!r}")
        object.__setattr__(self, "breaks", np.array([float(self.cutoff_c)]))
        object.__setattr__(self, "vals", np.array([float(self.r1), float(self.r2)]))
        self._setup()


@dataclass(frozen=True, eq=False)
class TabulatedStrategy(_PiecewiseRate):
    """Piecewise-constant-left profile.

    ``values[0]`` holds on ``[0, knots[0]]``, ``values[i]`` on
    ``(knots[i-1], knots[i]]`` and the last value, which must equal ``r2``,
    continues beyond the last knot.
    """

    knots: np.ndarray
    values: np.ndarray
    r1: float = None
    r2: float = None
    breaks: np.ndarray = field(init=False, repr=False)
    vals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        values = np.array(self.values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size == 0:
            raise DomainError("knots and values must be 1-D arrays of equal nonzero length")
        if knots[0] <= 0.0 or np.any(np.diff(knots) <= 0.0) or not np.all(np.isfinite(knots)):
            raise DomainError("knots must be positive, finite and strictly increasing")
        r1 = float(values.min()) if self.r1 is None else float(self.r1)
        r2 = float(values[-1]) if self.r2 is None else float(self.r2)
        if not (0.0 < r1 <= r2):
            raise DomainError(f"need 0 < r1 <= r2, got {r1!r}, {r2!r}")
        if np.any(values < r1) or np.any(values > r2):
            raise DomainError("values must lie in [r1, r2]")
        if values[-1] != r2:
            raise DomainError("the final value must equal r2")
        knots.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "r1", r1)
        object.__setattr__(self, "r2", r2)
        object.__setattr__(self, "breaks", knots[:-1])
        object.__setattr__(self, "vals", values)
        self._setup()

    @classmethod
    def from_function(cls, fn, knots, r1, r2):
        """Sample ``fn`` at ``knots`` (last value forced to ``r2``)."""
        knots = np.asarray(knots, dtype=float)
        values = np.clip(np.asarray(fn(knots), dtype=float), r1, r2)
        values[-1] = r2
        return cls(knots, values, r1=r1, r2=r2)


def constant_strategy(r):
    """``R == r`` as a one-knot table."""
    return TabulatedStrategy(np.array([1.0]), np.array([float(r)]))


# ---------------------------------------------------------------------------
# weights


def _check_n(n):
    n = float(n)
    if not (0.0 < n < 2.0):
        raise DomainError(f"dimension n={n!r} outside (0, 2)")
    return n


def drift_integral(R, x):
    """``D(x) = int_0^x v / R(v) dv`` (exact for piecewise-constant ``R``)."""
    if np.any(np.asarray(x) < 0.0):
        raise DomainError("x must be >= 0")
    return R.drift_integral(x)


def weight_p(n, R, x):
    """``p(x) = x^(n-1) exp(D(x))``, continuous across rate jumps."""
    n = _check_n(n)
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0.0):
        raise DomainError("x must be > 0")
    out = np.exp((n - 1.0) * np.log(xa) + R.drift_integral(xa))
    return float(out) if np.ndim(x) == 0 else out


def weight_w(n, R, x):
    """Speed density ``w(x) = p(x) / R(x)``."""
    return weight_p(n, R, x) / R.rate(x)


# ---------------------------------------------------------------------------
# Y kernels


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances for the kernel quadratures.

    ``tail_pad`` is added to ``max(8, x)`` to get the upper cut; the default
    puts the Gaussian factor below ``1e-37``.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_subdivisions: int = 4000
    tail_pad: float = math.sqrt(2.0 * 37.0 * math.log(10.0))

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0 and self.tail_pad > 0):
            raise DomainError("tolerances and tail_pad must be positive")
        if self.max_subdivisions < 1:
            raise DomainError("max_subdivisions must be >= 1")

    def z_max(self, x):
        return max(8.0, x) + self.tail_pad


DEFAULT_SPEC = QuadratureSpec()


@njit(cache=True, nogil=True)
def _y_integrand(t, prm):
    sign = prm[0]
    nu = prm[1]
    eta = prm[2]
    alpha = prm[3]
    x = prm[4]
    if prm[5] == 0.0:
        # z = u^(1/alpha) removes the algebraic singularity at 0
        z = max(t ** (1.0 / alpha), 1e-300)
        pre = 1.0 / alpha
        zpow = z ** (eta - alpha)
        direct = False
    else:
        z = t
        pre = 1.0
        zpow = z ** (eta - 1.0)
        direct = True
    xz = x * z
    if sign < 0.0:
        return pre * zpow * sminus_scaled_scalar(nu, xz) * math.exp(-0.5 * (z - x) ** 2)
    if nu > 0.0 and not direct:
        return pre * x ** (-2.0 * nu) * tplus_scaled_scalar(nu, xz) * math.exp(-0.5 * z * z - xz)
    return pre * zpow * splus_scaled_scalar(nu, xz) * math.exp(-0.5 * z * z - xz)


def _y_integrand_np(t, sign, nu, eta, alpha, x, mode):
    if mode == 0:
        z = np.maximum(t ** (1.0 / alpha), 1e-300)
        pre = 1.0 / alpha
        zpow = z ** (eta - alpha)
    else:
        z = t
        pre = 1.0
        zpow = z ** (eta - 1.0)
    xz = x * z
    if sign < 0:
        return pre * zpow * sminus_scaled_numpy(nu, xz) * np.exp(-0.5 * (z - x) ** 2)
    if nu > 0.0 and mode == 0:
        return pre * x ** (-2.0 * nu) * tplus_scaled_numpy(nu, xz) * np.exp(-0.5 * z * z - xz)
    return pre * zpow * splus_scaled_numpy(nu, xz) * np.exp(-0.5 * z * z - xz)


_ROUNDOFF_NB = 50.0 * 2.220446049250313e-16


@njit(cache=True, nogil=True)
def _gk21_y(prm, a, b):
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    k = 0.0
    g = 0.0
    for j in range(21):
        fv = _y_integrand(mid + half * NODES[j], prm)
        k += W_KRONROD[j] * fv
        g += W_GAUSS[j] * fv
    return half * k, abs(half * (k - g))


@njit(cache=True, nogil=True)
def _adaptive_y(prm, breaks, abs_tol, rel_tol, max_intervals):
    """Same subdivision rule as ``quadrature.adaptive_numpy``."""
    cap = max(max_intervals, breaks.shape[0])
    a = np.empty(cap)
    b = np.empty(cap)
    val = np.empty(cap)
    err = np.empty(cap)
    m = breaks.shape[0] - 1
    total_len = 0.0
    for i in range(m):
        a[i] = breaks[i]
        b[i] = breaks[i + 1]
        val[i], err[i] = _gk21_y(prm, a[i], b[i])
        total_len += b[i] - a[i]
    while True:
        total = 0.0
        toterr = 0.0
        for i in range(m):
            total += val[i]
            toterr += err[i]
        tol = max(abs_tol, rel_tol * abs(total))
        if toterr <= tol:
            return total, toterr, True
        nbad = 0
        for i in range(m):
            if err[i] > tol * (b[i] - a[i]) / total_len and err[i] > _ROUNDOFF_NB * abs(val[i]):
                nbad += 1
        if nbad == 0 or m + nbad > max_intervals:
            return total, toterr, False
        m0 = m
        for i in range(m0):
            if err[i] > tol * (b[i] - a[i]) / total_len and err[i] > _ROUNDOFF_NB * abs(val[i]):
                mid = 0.5 * (a[i] + b[i])
                a[m] = mid
                b[m] = b[i]
                b[i] = mid
                val[i], err[i] = _gk21_y(prm, a[i], b[i])
                val[m], err[m] = _gk21_y(prm, a[m], b[m])
                m += 1


@njit(cache=True, nogil=True)
def _y_eval_nb(sign, nu, eta, alpha, x, zmax, abs_tol, rel_tol, max_iv):
    prm = np.array([sign, nu, eta, alpha, x, 0.0])
    v0, e0, ok0 = _adaptive_y(prm, np.array([0.0, 1.0]), abs_tol, rel_tol, max_iv)
    prm[5] = 1.0
    if sign < 0.0 and 1.0 < x < zmax:
        br = np.array([1.0, x, zmax])
    else:
        br = np.array([1.0, zmax])
    v1, e1, ok1 = _adaptive_y(prm, br, abs_tol, rel_tol, max_iv)
    return v0 + v1, e0 + e1, ok0 and ok1


def _y_eval_np(sign, nu, eta, alpha, x, zmax, abs_tol, rel_tol, max_iv):
    f0 = lambda t: _y_integrand_np(t, sign, nu, eta, alpha, x, 0)
    v0, e0, _, ok0 = adaptive_numpy(f0, np.array([0.0, 1.0]), abs_tol, rel_tol, max_iv)
    br = [1.0, x, zmax] if (sign < 0 and 1.0 < x < zmax) else [1.0, zmax]
    f1 = lambda t: _y_integrand_np(t, sign, nu, eta, alpha, x, 1)
    v1, e1, _, ok1 = adaptive_numpy(f1, np.array(br), abs_tol, rel_tol, max_iv)
    return v0 + v1, e0 + e1, ok0 and ok1


def _y_raw(sign, nu, eta, x, spec):
    """Unvalidated ``Y`` (plus kernel scaled by ``exp(x^2/2)``) and its error."""
    alpha = eta - (nu + abs(nu)) if sign > 0 else eta
    args = (float(sign), float(nu), float(eta), float(alpha), float(x), spec.z_max(x),
            spec.abs_tol, spec.rel_tol, int(spec.max_subdivisions))
    if _backend.USE_NUMBA:
        val, err, ok = _y_eval_nb(*args)
    else:
        val, err, ok = _y_eval_np(*args)
    if not ok:
        raise QuadratureError(f"Y kernel sign={sign:+d} nu={nu:g} eta={eta:g} x={x:g}", val, err)
    return val, err


def _validate_y(sign, nu, eta, x):
    sign = KernelSign.parse(sign)
    eta = float(eta)
    x = float(x)
    if not (eta > 0.0 and math.isfinite(eta)):
        raise DomainError(f"eta must be > 0, got {eta!r}")
    if not (x >= 0.0 and math.isfinite(x)):
        raise DomainError(f"x must be finite and >= 0, got {x!r}")
    if sign is KernelSign.PLUS:
        if eta - nu - abs(nu) <= 0.0:
            raise DomainError(f"Y+ diverges at z=0: need eta > nu + |nu| (nu={nu:g}, eta={eta:g})")
        if x == 0.0 and nu >= 0.0:
            raise DomainError("Y+ at x=0 needs nu < 0")
    return sign, eta, x


def y_kernel_with_error(sign, nu, eta, x, spec=None, scaled=False):
    """:func:`y_kernel` together with the quadrature error estimate."""
    nu = Order(nu)
    sign, eta, x = _validate_y(sign, nu, eta, x)
    spec = spec or DEFAULT_SPEC
    val, err = _y_raw(int(sign), nu, eta, x, spec)
    if sign is KernelSign.PLUS and not scaled:
        f = math.exp(-0.5 * x * x)
        val, err = val * f, err * f
    return val, err


def y_kernel(sign, nu, eta, x, spec=None, scaled=False):
    r"""Evaluate :math:`Y^\pm_{\nu,\eta}(x) = \int_0^\infty z^{\eta-1} S^\pm_\nu(xz) e^{-(z^2+x^2)/2} dz`.

    Parameters
    ----------
    sign : KernelSign or str
    nu : float
        Order in ``(-1, 2]``.
    eta : float
        Positive power; for ``PLUS`` also ``eta > nu + |nu|``.
    x : float
        Nonnegative argument.
    spec : QuadratureSpec, optional
    scaled : bool
        Return ``exp(x^2/2) Y+`` for the plus kernel, which stays
        representable for large ``x``. Ignored for ``MINUS``.

    Raises
    ------
    DomainError
        Non-integrable parameters.
    QuadratureError
        Tolerance not reached; carries the achieved error.
    """
    return y_kernel_with_error(sign, nu, eta, x, spec, scaled)[0]


# ---------------------------------------------------------------------------
# fundamental solutions


def _check_nE(n, E):
    n = _check_n(n)
    E = float(E)
    if not (-n < E < 0.0):
        raise DomainError(f"E={E!r} outside (-n, 0) for n={n:g}")
    return n, E


def l_fundamental(sign, n, E, r, x, spec=None):
    r"""Fundamental solution :math:`L^\pm_{n,E,r}(x) = r^{\eta/2} Y^\pm_{(n-2)/2,\eta}(x/\sqrt r)`, ``eta = E + n``.

    Solves ``x g' + r Delta_n g = E g``; ``MINUS`` is regular at the origin
    and ``PLUS`` decays at infinity.
    """
    n, E = _check_nE(n, E)
    if not r > 0.0:
        raise DomainError("rate r must be > 0")
    eta = E + n
    return r ** (eta / 2.0) * y_kernel(sign, 0.5 * (n - 2.0), eta, x / math.sqrt(r), spec)


def _y_log_derivative(sign, nu, eta, u, spec):
    """``Y'(u) / Y(u)`` through the order-raising identity (no finite differences)."""
    y0, _ = _y_raw(sign, nu, eta, u, spec)
    y1, _ = _y_raw(sign, nu + 1.0, eta + 2.0, u, spec)
    if sign < 0:
        return u * (y1 / y0 - 1.0)
    return -u * (y1 / y0 + 1.0)


def l_log_derivative(sign, n, E, r, x, spec=None):
    """Logarithmic derivative ``(dL/dx) / L`` of :func:`l_fundamental` at ``x > 0``."""
    n, E = _check_nE(n, E)
    sign = KernelSign.parse(sign)
    if not (r > 0.0 and x > 0.0):
        raise DomainError("need r > 0 and x > 0")
    sr = math.sqrt(r)
    return _y_log_derivative(int(sign), 0.5 * (n - 2.0), E + n, x / sr, spec or DEFAULT_SPEC) / sr


# ---------------------------------------------------------------------------
# Green function


def _upper_cut(R, x):
    """Point beyond which ``exp(D(x) - D(a))`` is below ~1e-37."""
    ref = max(float(np.max(x)), float(R.breaks[-1]) if R.breaks.size else 0.0)
    return math.sqrt(ref * ref + 2.0 * float(R.vals[-1]) * 85.0)


_ROUNDOFF = 50.0 * np.finfo(float).eps


def _segment_integrals(f, edges, rel_tol=1e-13, abs_tol=1e-300, max_rounds=100):
    """Per-segment adaptive integrals of ``f(t, seg)`` over ``[edges[i], edges[i+1]]``."""
    edges = np.asarray(edges, dtype=float)
    nseg = edges.size - 1
    a, b = edges[:-1].copy(), edges[1:].copy()
    seg = np.arange(nseg)
    out = np.zeros(nseg)
    err_out = np.zeros(nseg)
    for _ in range(max_rounds):
        s = seg
        val, err = gk21(lambda t: f(t, np.repeat(s, 21)), a, b)
        tot = np.bincount(seg, val, minlength=nseg) + out
        share = (b - a) / (edges[seg + 1] - edges[seg])
        done = (err <= np.maximum(abs_tol, rel_tol * np.abs(tot[seg])) * share) | (err <= _ROUNDOFF * np.abs(val))
        # Accept converged pieces, bisect the rest.
        np.add.at(out, seg[done], val[done])
        np.add.at(err_out, seg[done], err[done])
        if done.all():
            return out, err_out
        keep = ~done
        am, bm, sm = a[keep], b[keep], seg[keep]
        mid = 0.5 * (am + bm)
        a = np.concatenate([am, mid])
        b = np.concatenate([mid, bm])
        seg = np.concatenate([sm, sm])
    raise QuadratureError("segment quadrature did not converge", float(out.sum()), float(err_out.sum()))


def _nodes_with_breaks(R, x):
    xs = np.unique(np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)), R.jump_points]))
    return xs


def _vplus_scaled(n, R, x):
    r"""``exp(D(x)) int_x^inf a^(1-n) exp(-D(a)) da`` at each ``x > 0``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    pts = _nodes_with_breaks(R, x)
    edges = np.concatenate([pts, [_upper_cut(R, pts)]])
    d_left = R.drift_integral(edges[:-1])

    left = edges[:-1]

    def f(t, seg):
        return t ** (1.0 - n) * np.exp(-R.drift_difference(left[seg], t))

    pieces, _ = _segment_integrals(f, edges)
    # backward recursion: vhat_i = piece_i + exp(D_i - D_{i+1}) vhat_{i+1}
    decay = np.exp(-R.drift_difference(edges[:-1], edges[1:]))
    vhat = np.empty(pts.size)
    acc = 0.0
    for i in range(pts.size - 1, -1, -1):
        acc = pieces[i] + decay[i] * acc
        vhat[i] = acc
    return vhat[np.searchsorted(pts, x)]


def _wcum_scaled(n, R, x):
    r"""``exp(-D(x)) int_0^x w`` at each ``x > 0``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    pts = _nodes_with_breaks(R, x)
    edges = np.concatenate([[0.0], pts])
    right = edges[1:]

    def f(t, seg):
        # the 1/R jump sits on an edge, so the rate is read at interior nodes only
        return t ** (n - 1.0) * np.exp(-R.drift_difference(t, right[seg])) / R.rate(t)

    pieces = np.zeros(pts.size)
    if pts.size > 1:
        pieces[1:], _ = _segment_integrals(lambda t, s: f(t, s + 1), edges[1:])
    # first piece has constant rate; t = x0 u^(1/n) absorbs t^(n-1)
    x0, r0 = pts[0], float(R.vals[0])
    g = lambda u: np.exp(x0 * x0 * (u ** (2.0 / n) - 1.0) / (2.0 * r0))
    first, _, _, _ = adaptive_numpy(g, np.array([0.0, 1.0]), 1e-300, 1e-13, 4000)
    pieces[0] = x0**n / (n * r0) * first
    decay = np.exp(-R.drift_difference(edges[:-1], edges[1:]))
    what = np.empty(pts.size)
    acc = 0.0
    for i in range(pts.size):
        acc = pieces[i] + decay[i] * acc
        what[i] = acc
    return what[np.searchsorted(pts, x)]


def green_function(n, R, x, z):
    r"""Green function of ``L``: ``(L G f) = -f`` with ``(G f)(x) = int G(x, z) f(z) dz``.

    ``G(x, z) = w(z) v_+(max(x, z))`` where ``v_+(x) = int_x^inf a^(1-n) e^{-D(a)} da``;
    it is continuous at ``x = z`` and satisfies ``w(x) G(x, z) = w(z) G(z, x)``.
    Broadcasts over ``x`` and ``z``.
    """
    n = _check_n(n)
    xb, zb = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(z, dtype=float))
    if np.any(xb <= 0.0) or np.any(zb <= 0.0):
        raise DomainError("x and z must be > 0")
    m = np.maximum(xb, zb).ravel()
    vh = _vplus_scaled(n, R, m)
    zr = zb.ravel()
    out = zr ** (n - 1.0) / R.rate(zr) * np.exp(-R.drift_difference(zr, m)) * vh
    out = out.reshape(xb.shape)
    return float(out) if out.ndim == 0 else out


def green_row_integral(n, R, z):
    r"""Closed form of ``int_0^inf G(x, z) dx = w(z) int_z^inf a^(2-n) e^{-D(a)} da``."""
    n = _check_n(n)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    pts = _nodes_with_breaks(R, z)
    edges = np.concatenate([pts, [_upper_cut(R, pts)]])
    left = edges[:-1]
    pieces, _ = _segment_integrals(lambda t, s: t ** (2.0 - n) * np.exp(-R.drift_difference(left[s], t)), edges)
    decay = np.exp(-R.drift_difference(edges[:-1], edges[1:]))
    acc = 0.0
    tail = np.empty(pts.size)
    for i in range(pts.size - 1, -1, -1):
        acc = pieces[i] + decay[i] * acc
        tail[i] = acc
    out = z ** (n - 1.0) / R.rate(z) * tail[np.searchsorted(pts, z)]
    return float(out[0]) if out.size == 1 else out


def hs_norm(n, R, rel_tol=1e-9):
    r"""Hilbert-Schmidt norm of ``L^{-1}`` on ``L^2(w)``.

    The double integral ``int int w(x) w(z) v_+(max(x,z))^2 dx dz`` is folded
    along the diagonal to ``2 int w(z) v_+(z)^2 W(z) dz`` with
    ``W(z) = int_0^z w``. The outer integral runs adaptively in
    ``s = z / (z + sqrt(r2))`` up to ``Z = 1000 sqrt(r2)``; beyond that the
    integrand is ``2 r2 z^-3 (1 + O(r2 / z^2))`` and the tail ``r2 / Z^2`` is
    added in closed form.
    """
    n = _check_n(n)
    r2 = float(R.vals[-1])
    scale = math.sqrt(r2)
    z_cut = 1000.0 * scale
    jumps = np.array(R.jump_points)

    def integrand(s):
        z = scale * s / (1.0 - s)
        jac = scale / (1.0 - s) ** 2
        out = np.zeros_like(s)
        ok = z > 0.0
        zz = z[ok]
        order = np.argsort(zz)
        zs = zz[order]
        vh = _vplus_scaled(n, R, zs)
        wh = _wcum_scaled(n, R, zs)
        val = np.empty_like(zs)
        val[order] = 2.0 * zs ** (n - 1.0) / R.rate(zs) * vh**2 * wh
        out[ok] = val * jac[ok]
        return out

    s_cut = z_cut / (z_cut + scale)
    s_jumps = jumps / (jumps + scale)
    value, err, _, ok = adaptive_numpy(integrand, np.concatenate([[0.0], s_jumps, [s_cut]]),
                                       abs_tol=1e-300, rel_tol=rel_tol, max_intervals=4000)
    if not ok:
        raise QuadratureError("Hilbert-Schmidt integral did not converge", value, err)
    return math.sqrt(value + r2 / z_cut**2)

r"""Modified Bessel functions of real order and the scaled kernels :math:`S^\pm_\nu`.

.. math::
    S^-_\nu(x) = x^{-\nu} I_\nu(x), \qquad S^+_\nu(x) = x^{-\nu} K_\nu(x)

Regimes
-------
``I_nu``
    Power series for ``x <= 20`` (all terms positive for ``nu > -1``), the
    Hankel asymptotic expansion beyond.
``K_nu``
    Temme's series for ``x < 2`` and Steed's continued fraction (CF2) for
    ``x >= 2``, both at a reduced order ``|mu| <= 1/2`` followed by forward
    recurrence, which is stable for ``K``. Temme's form is uniform in ``mu``,
    so integer orders need no special casing.

Every kernel exists twice: a scalar ``@njit`` version and a vectorized numpy
version. ``_backend.USE_NUMBA`` picks the one behind the public functions.
"""
import enum
import math

import numpy as np

from . import _backend
from ._backend import njit

__all__ = [
    "Order",
    "KernelSign",
    "DomainError",
    "bessel_i",
    "bessel_k",
    "bessel_ive",
    "bessel_kve",
    "s_kernel",
    "s_kernel_deriv",
]

ORDER_MIN = -1.0
ORDER_MAX = 2.0

_EPS = 1e-16
_SERIES_MAX = 20.0
_MAXIT = 10000

# Taylor coefficients of 1/Gamma(1+z) about z = 0.
_RGAM = np.array([
    1.0,
    0.57721566490153286061,
    -0.65587807152025388108,
    -0.042002635034095235529,
    0.1665386113822914895,
    -0.042197734555544336748,
    -0.0096219715278769735621,
    0.0072189432466630995424,
    -0.0011651675918590651121,
    -0.00021524167411495097282,
    0.00012805028238811618615,
    -0.000020134854780788238656,
    -1.2504934821426706573e-6,
    1.1330272319816958824e-6,
    -2.0563384169776071035e-7,
    6.1160951044814158179e-9,
    5.0020076444692229301e-9,
    -1.1812745704870201446e-9,
    1.0434267116911005105e-10,
    7.782263439905071254e-12,
    -3.6968056186422057082e-12,
    5.100370287454475979e-13,
    -2.0583260535665067832e-14,
    -5.3481225394230179824e-15,
    1.2267786282382607902e-15,
    -1.1812593016974587695e-16,
    1.1866922547516003326e-18,
    1.4123806553180317816e-18,
])


class DomainError(ValueError):
    """Argument or order outside the supported domain."""


class Order(float):
    """Bessel order restricted to ``(-1, 2]``."""

    def __new__(cls, nu):
        nu = float(nu)
        if not (ORDER_MIN < nu <= ORDER_MAX):
            raise DomainError(f"order nu={nu!r} outside ({ORDER_MIN:g}, {ORDER_MAX:g}]")
        return super().__new__(cls, nu)


class KernelSign(enum.IntEnum):
    """Superscript of :math:`S^\\pm_\\nu`: ``PLUS`` uses ``K``, ``MINUS`` uses ``I``."""

    MINUS = -1
    PLUS = 1

    @classmethod
    def parse(cls, sign):
        if isinstance(sign, cls):
            return sign
        if isinstance(sign, str):
            key = sign.strip().lower()
            if key in ("plus", "+", "k"):
                return cls.PLUS
            if key in ("minus", "-", "i"):
                return cls.MINUS
        elif sign in (1, -1):
            return cls(int(sign))
        raise DomainError(f"unknown kernel sign {sign!r}")


# ---------------------------------------------------------------------------
# scalar kernels (numba)


@njit(cache=True, nogil=True)
def _gam12(mu):
    """Temme's auxiliary gamma combinations for ``|mu| <= 1/2``."""
    mu2 = mu * mu
    even = 0.0
    odd = 0.0
    p = 1.0
    for k in range(0, _RGAM.shape[0] - 1, 2):
        even += _RGAM[k] * p
        odd += _RGAM[k + 1] * p
        p *= mu2
    gam1 = -odd
    gam2 = even
    gampl = gam2 - mu * gam1
    gammi = gam2 + mu * gam1
    return gam1, gam2, gampl, gammi


@njit(cache=True, nogil=True)
def _temme_sums(mu, x):
    """Temme's series for ``x < 2``: ``K_mu = s``, ``K_{mu+1} = 2 s1 / x``."""
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -math.log(x2)
    e = mu * d
    fact2 = 1.0 if abs(e) < _EPS else math.sinh(e) / e
    gam1, gam2, gampl, gammi = _gam12(mu)
    ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
    s = ff
    e = math.exp(e)
    p = 0.5 * e / gampl
    q = 0.5 / (e * gammi)
    c = 1.0
    d = x2 * x2
    s1 = p
    mu2 = mu * mu
    for i in range(1, _MAXIT):
        ff = (i * ff + p + q) / (i * i - mu2)
        c *= d / i
        p /= i - mu
        q /= i + mu
        de = c * ff
        s += de
        s1 += c * (p - i * ff)
        if abs(de) < abs(s) * _EPS:
            break
    return s, s1


@njit(cache=True, nogil=True)
def _kve_pair_cf2(mu, x):
    """``exp(x) * (K_mu(x), K_{mu+1}(x))`` for ``x >= 2`` by Steed's CF2."""
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d
    delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25 - mu * mu
    q = a1
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels / s) < _EPS:
            break
    h = a1 * h
    kmu = math.sqrt(math.pi / (2.0 * x)) / s
    k1 = kmu * (mu + x + 0.5 - h) / x
    return kmu, k1


@njit(cache=True, nogil=True)
def kve_scalar(nu, x):
    """``exp(x) K_nu(x)`` for any real ``nu`` and ``x > 0``."""
    anu = abs(nu)
    nl = int(anu + 0.5)
    mu = anu - nl
    if x < 2.0:
        s, s1 = _temme_sums(mu, x)
        ex = math.exp(x)
        kmu = s * ex
        k1 = s1 * (2.0 / x) * ex
    else:
        kmu, k1 = _kve_pair_cf2(mu, x)
    for i in range(1, nl + 1):
        knew = (mu + i) * (2.0 / x) * k1 + kmu
        kmu = k1
        k1 = knew
    return kmu


@njit(cache=True, nogil=True)
def tkve_scalar(a, x):
    """``exp(x) x^a K_a(x)`` for ``a >= 0``, ``x > 0``, without overflow at small ``x``.

    Runs the recurrence on ``k_j = x^(mu+j) K_(mu+j)``:
    ``k_(j+1) = 2 (mu + j) k_j + x^2 k_(j-1)``.
    """
    nl = int(a + 0.5)
    mu = a - nl
    xm = math.exp(mu * math.log(x))
    if x < 2.0:
        s, s1 = _temme_sums(mu, x)
        ex = math.exp(x)
        k0 = xm * s * ex
        k1 = 2.0 * xm * s1 * ex
    else:
        kmu, kp = _kve_pair_cf2(mu, x)
        k0 = xm * kmu
        k1 = xm * x * kp
    x2 = x * x
    for j in range(1, nl + 1):
        knew = 2.0 * (mu + j) * k1 + x2 * k0
        k0 = k1
        k1 = knew
    return k0


@njit(cache=True, nogil=True)
def _i_series_sum(nu, x):
    """``sum_k (x^2/4)^k / (k! Gamma(nu+k+1))``; ``nu`` not a negative integer."""
    q = 0.25 * x * x
    t = 1.0 / math.gamma(nu + 1.0)
    s = t
    for k in range(1, _MAXIT):
        t *= q / (k * (nu + k))
        s += t
        if abs(t) < _EPS * abs(s):
            break
    return s


@njit(cache=True, nogil=True)
def _i_asym_sum(nu, x):
    """Hankel sum for ``sqrt(2 pi x) exp(-x) I_nu(x)``, large ``x``."""
    mu = 4.0 * nu * nu
    t = 1.0
    s = 1.0
    for k in range(1, 200):
        tn = -t * (mu - (2 * k - 1) ** 2) / (8.0 * k * x)
        if abs(tn) > abs(t):
            break
        t = tn
        s += t
        if abs(t) < _EPS * abs(s):
            break
    return s


@njit(cache=True, nogil=True)
def _fix_negative_integer(nu):
    # I_{-m} = I_m for integer m; the series needs 1/Gamma at a pole otherwise.
    if nu < 0.0 and nu == math.floor(nu):
        return -nu
    return nu


@njit(cache=True, nogil=True)
def ive_scalar(nu, x):
    """``exp(-x) I_nu(x)`` for ``x >= 0``."""
    nu = _fix_negative_integer(nu)
    if x == 0.0:
        if nu == 0.0:
            return 1.0
        if nu > 0.0:
            return 0.0
        return math.inf
    if x <= _SERIES_MAX:
        return math.exp(nu * math.log(0.5 * x) - x) * _i_series_sum(nu, x)
    return _i_asym_sum(nu, x) / math.sqrt(2.0 * math.pi * x)


@njit(cache=True, nogil=True)
def sminus_scaled_scalar(nu, t):
    """``exp(-t) t^(-nu) I_nu(t)``, finite at ``t = 0``."""
    nu = _fix_negative_integer(nu)
    if t <= _SERIES_MAX:
        return math.exp(-nu * math.log(2.0) - t) * _i_series_sum(nu, t)
    return math.exp(-nu * math.log(t)) * _i_asym_sum(nu, t) / math.sqrt(2.0 * math.pi * t)


@njit(cache=True, nogil=True)
def splus_scaled_scalar(nu, t):
    """``exp(t) t^(-nu) K_nu(t)``; at ``t = 0`` only the ``nu < 0`` limit exists."""
    if t == 0.0:
        if nu < 0.0:
            return math.gamma(-nu) * 2.0 ** (-nu - 1.0)
        return math.inf
    if nu < 0.0:
        return tkve_scalar(-nu, t)
    return math.exp(-nu * math.log(t)) * kve_scalar(nu, t)


@njit(cache=True, nogil=True)
def tplus_scaled_scalar(nu, t):
    """``exp(t) t^nu K_nu(t)`` for ``nu > 0``, bounded near ``t = 0``."""
    if t == 0.0:
        return math.gamma(nu) * 2.0 ** (nu - 1.0)
    return tkve_scalar(nu, t)


@njit(cache=True, nogil=True)
def _map1(fn_id, nu, x, out):
    for i in range(x.shape[0]):
        xi = x[i]
        if fn_id == 0:
            out[i] = ive_scalar(nu, xi)
        elif fn_id == 1:
            out[i] = kve_scalar(nu, xi)
        elif fn_id == 2:
            out[i] = sminus_scaled_scalar(nu, xi)
        elif fn_id == 3:
            out[i] = splus_scaled_scalar(nu, xi)
        else:
            out[i] = tplus_scaled_scalar(nu, xi)
    return out


# ---------------------------------------------------------------------------
# vectorized kernels (numpy)


def _gam12_np(mu):
    mu2 = mu * mu
    even = np.polyval(_RGAM[-2::-2], mu2)
    odd = np.polyval(_RGAM[-1::-2], mu2)
    gam1 = -odd
    gam2 = even
    return gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1


def _temme_sums_np(mu, x):
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -np.log(x2)
    e = mu * d
    with np.errstate(invalid="ignore", divide="ignore"):
        fact2 = np.where(np.abs(e) < _EPS, 1.0, np.sinh(e) / np.where(e == 0, 1.0, e))
    gam1, gam2, gampl, gammi = _gam12_np(mu)
    ff = fact * (gam1 * np.cosh(e) + gam2 * fact2 * d)
    s = ff.copy()
    ee = np.exp(e)
    p = 0.5 * ee / gampl
    q = 0.5 / (ee * gammi)
    c = np.ones_like(x)
    dd = x2 * x2
    s1 = p.copy()
    mu2 = mu * mu
    for i in range(1, _MAXIT):
        ff = (i * ff + p + q) / (i * i - mu2)
        c = c * dd / i
        p = p / (i - mu)
        q = q / (i + mu)
        de = c * ff
        s += de
        s1 += c * (p - i * ff)
        if np.all(np.abs(de) < np.abs(s) * _EPS):
            break
    return s, s1


def _kve_pair_cf2_np(mu, x):
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25 - mu * mu
    q = np.full_like(x, a1)
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h = h + delh
        dels = q * delh
        s = s + dels
        if np.all(np.abs(dels / s) < _EPS):
            break
    h = a1 * h
    kmu = np.sqrt(math.pi / (2.0 * x)) / s
    return kmu, kmu * (mu + x + 0.5 - h) / x


def kve_numpy(nu, x):
    x = np.asarray(x, dtype=float)
    anu = abs(nu)
    nl = int(anu + 0.5)
    mu = anu - nl
    kmu = np.empty_like(x)
    k1 = np.empty_like(x)
    small = x < 2.0
    if small.any():
        xs = x[small]
        s, s1 = _temme_sums_np(mu, xs)
        ex = np.exp(xs)
        kmu[small] = s * ex
        k1[small] = s1 * (2.0 / xs) * ex
    if (~small).any():
        kmu[~small], k1[~small] = _kve_pair_cf2_np(mu, x[~small])
    for i in range(1, nl + 1):
        kmu, k1 = k1, (mu + i) * (2.0 / x) * k1 + kmu
    return kmu


def tkve_numpy(a, x):
    x = np.asarray(x, dtype=float)
    nl = int(a + 0.5)
    mu = a - nl
    xm = np.exp(mu * np.log(x))
    k0 = np.empty_like(x)
    k1 = np.empty_like(x)
    small = x < 2.0
    if small.any():
        xs = x[small]
        s, s1 = _temme_sums_np(mu, xs)
        ex = np.exp(xs)
        k0[small] = xm[small] * s * ex
        k1[small] = 2.0 * xm[small] * s1 * ex
    if (~small).any():
        xl = x[~small]
        kmu, kp = _kve_pair_cf2_np(mu, xl)
        k0[~small] = xm[~small] * kmu
        k1[~small] = xm[~small] * xl * kp
    x2 = x * x
    for j in range(1, nl + 1):
        k0, k1 = k1, 2.0 * (mu + j) * k1 + x2 * k0
    return k0


def _i_series_sum_np(nu, x):
    q = 0.25 * x * x
    t = np.full_like(x, 1.0 / math.gamma(nu + 1.0))
    s = t.copy()
    for k in range(1, _MAXIT):
        t = t * q / (k * (nu + k))
        s += t
        if np.all(np.abs(t) < _EPS * np.abs(s)):
            break
    return s


def _i_asym_sum_np(nu, x):
    mu = 4.0 * nu * nu
    t = np.ones_like(x)
    s = np.ones_like(x)
    live = np.ones(x.shape, dtype=bool)
    for k in range(1, 200):
        tn = -t * (mu - (2 * k - 1) ** 2) / (8.0 * k * x)
        live &= np.abs(tn) <= np.abs(t)
        t = np.where(live, tn, t)
        s = s + np.where(live, t, 0.0)
        live &= ~(np.abs(t) < _EPS * np.abs(s))
        if not live.any():
            break
    return s


def _fix_negative_integer_np(nu):
    return -nu if (nu < 0.0 and nu == math.floor(nu)) else nu


def ive_numpy(nu, x):
    x = np.asarray(x, dtype=float)
    nu = _fix_negative_integer_np(nu)
    out = np.empty_like(x)
    lo = (x > 0.0) & (x <= _SERIES_MAX)
    hi = x > _SERIES_MAX
    if lo.any():
        xl = x[lo]
        out[lo] = np.exp(nu * np.log(0.5 * xl) - xl) * _i_series_sum_np(nu, xl)
    if hi.any():
        xh = x[hi]
        out[hi] = _i_asym_sum_np(nu, xh) / np.sqrt(2.0 * math.pi * xh)
    zero = x == 0.0
    if zero.any():
        out[zero] = 1.0 if nu == 0.0 else (0.0 if nu > 0.0 else math.inf)
    return out


def sminus_scaled_numpy(nu, t):
    t = np.asarray(t, dtype=float)
    nu = _fix_negative_integer_np(nu)
    out = np.empty_like(t)
    lo = t <= _SERIES_MAX
    if lo.any():
        tl = t[lo]
        out[lo] = np.exp(-nu * math.log(2.0) - tl) * _i_series_sum_np(nu, tl)
    if (~lo).any():
        th = t[~lo]
        out[~lo] = np.exp(-nu * np.log(th)) * _i_asym_sum_np(nu, th) / np.sqrt(2.0 * math.pi * th)
    return out


def splus_scaled_numpy(nu, t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t > 0.0
    if pos.any():
        tp = t[pos]
        if nu < 0.0:
            out[pos] = tkve_numpy(-nu, tp)
        else:
            out[pos] = np.exp(-nu * np.log(tp)) * kve_numpy(nu, tp)
    if (~pos).any():
        out[~pos] = math.gamma(-nu) * 2.0 ** (-nu - 1.0) if nu < 0.0 else math.inf
    return out


def tplus_scaled_numpy(nu, t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t > 0.0
    if pos.any():
        tp = t[pos]
        out[pos] = tkve_numpy(nu, tp)
    if (~pos).any():
        out[~pos] = math.gamma(nu) * 2.0 ** (nu - 1.0)
    return out


_NUMPY_KERNELS = (ive_numpy, kve_numpy, sminus_scaled_numpy, splus_scaled_numpy, tplus_scaled_numpy)


def _evaluate(fn_id, nu, x, backend=None):
    """Run kernel ``fn_id`` over array ``x`` on the chosen backend."""
    arr = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float)))
    use_numba = _backend.USE_NUMBA if backend is None else backend == "numba"
    if use_numba:
        out = _map1(fn_id, float(nu), arr.ravel(), np.empty(arr.size))
    else:
        out = _NUMPY_KERNELS[fn_id](float(nu), arr.ravel())
    return out.reshape(arr.shape)


def _finish(out, x):
    return float(out[0]) if np.ndim(x) == 0 else out


# ---------------------------------------------------------------------------
# public API


def _check_positive(x, what="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"{what} must be finite and > 0")
    return arr


_LOG_MAX = math.log(np.finfo(float).max)


def bessel_ive(nu, x):
    """Exponentially scaled ``exp(-x) I_nu(x)``."""
    nu = Order(nu)
    _check_positive(x)
    return _finish(_evaluate(0, nu, x), x)


def bessel_kve(nu, x):
    """Exponentially scaled ``exp(x) K_nu(x)``; ``K_{-nu} = K_nu``."""
    if not -ORDER_MAX <= float(nu) <= ORDER_MAX:
        raise DomainError(f"order nu={nu!r} outside [-2, 2]")
    _check_positive(x)
    return _finish(_evaluate(1, float(nu), x), x)


def bessel_i(nu, x):
    """Modified Bessel function of the first kind, ``nu`` in ``(-1, 2]``, ``x > 0``.

    Raises ``OverflowError`` where ``exp(x)`` is not representable; use
    :func:`bessel_ive` there.
    """
    arr = _check_positive(x)
    if np.any(arr > _LOG_MAX - 1.0):
        raise OverflowError("I_nu(x) overflows for x > ~708; use bessel_ive")
    return _finish(np.atleast_1d(bessel_ive(nu, arr)) * np.exp(arr), x)


def bessel_k(nu, x):
    """Modified Bessel function of the second kind; symmetric in ``nu``."""
    arr = _check_positive(x)
    return _finish(np.atleast_1d(bessel_kve(nu, arr)) * np.exp(-arr), x)


def s_kernel(sign, nu, x):
    r"""Evaluate :math:`S^\pm_\nu(x)`.

    ``x = 0`` is accepted for ``MINUS`` (value ``1 / (2^nu Gamma(nu+1))``) and
    for ``PLUS`` with ``nu < 0`` (value ``Gamma(-nu) 2^(-nu-1)``).
    """
    sign = KernelSign.parse(sign)
    nu = Order(nu)
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise DomainError("x must be finite and >= 0")
    if sign is KernelSign.PLUS and np.any(arr == 0.0) and nu >= 0.0:
        raise DomainError(f"S+_nu(0) is infinite for nu={float(nu):g} >= 0")
    if sign is KernelSign.MINUS:
        if np.any(arr > _LOG_MAX - 1.0):
            raise OverflowError("S-_nu(x) overflows for x > ~708")
        return _finish(_evaluate(2, nu, arr) * np.exp(arr), x)
    return _finish(_evaluate(3, nu, arr) * np.exp(-arr), x)


def _s_unchecked(sign, nu, x):
    """:math:`S^\\pm_\\nu` for any real order; used for neighbouring orders."""
    arr = np.asarray(x, dtype=float)
    if sign == KernelSign.MINUS:
        return _finish(_evaluate(2, nu, arr) * np.exp(arr), x)
    return _finish(_evaluate(3, nu, arr) * np.exp(-arr), x)


def s_kernel_deriv(sign, nu, x):
    r"""Derivative :math:`\frac{d}{dx} S^\pm_\nu(x) = \mp x S^\pm_{\nu+1}(x)`."""
    sign = KernelSign.parse(sign)
    nu = Order(nu)
    _check_positive(x)
    return -int(sign) * np.asarray(x, dtype=float) * _s_unchecked(sign, nu + 1.0, x)

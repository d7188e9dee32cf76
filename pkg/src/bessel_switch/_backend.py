"""Backend selection for the hot kernels.

Set ``BESSEL_SWITCH_NUMBA=0`` to force the pure-numpy code paths. Numba is
used otherwise, when importable.
"""
import os

_flag = os.environ.get("BESSEL_SWITCH_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _requested


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, identity otherwise.

    Kernels are always compiled if numba exists so the benchmark and the
    cross-backend tests can call both variants; ``USE_NUMBA`` only decides
    which one the public API dispatches to.
    """
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

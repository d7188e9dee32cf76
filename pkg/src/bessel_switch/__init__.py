"""Optimal diffusion-rate switching for time-changed Bessel processes.

Set ``BESSEL_SWITCH_NUMBA=0`` before import to run the pure-numpy kernels.
"""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from ._backend import backend_name
from .dynamics import (
    ExponentFit,
    ModelParams,
    SemigroupRun,
    evolve_semigroup,
    fit_exponent,
    quadratic_form_check,
    simulate_paths,
    symmetric_form_check,
)
from .kernels import (
    QuadratureSpec,
    StepStrategy,
    TabulatedStrategy,
    constant_strategy,
    drift_integral,
    green_function,
    green_row_integral,
    hs_norm,
    l_fundamental,
    l_log_derivative,
    weight_p,
    weight_w,
    y_kernel,
)
from .specfun import DomainError, KernelSign, bessel_i, bessel_ive, bessel_k, bessel_kve, s_kernel, s_kernel_deriv
from .spectral import (
    DiscretizedEig,
    EigenResult,
    OptimalSolution,
    eigen_step,
    eigenfunction_eval,
    h_ratio,
    kappa_bar,
    kappa_of_eta,
    optimal_strategy,
    rayleigh_eigen,
    solve_optimal,
)

"""torot: diffusion empirical measures and optimal transport on flat tori."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    EigenPair,
    ModeSet,
    TorusGeometry,
    enumerate_modes,
    heat_kernel,
    heat_trace,
    heat_trace_coefficient,
    poisson_kernel_coeffs,
    spectral_sum_inv_lambda,
    spectral_sum_inv_lambda_sq,
    theta,
    transport_limit_constant,
    weyl_coefficient,
    weyl_count,
)

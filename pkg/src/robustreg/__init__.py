"""Robust deep regression with Tukey's biweight loss and MAD-scaled residuals."""

from robustreg.numerics import (
    ConfigError,
    DimensionError,
    NumericError,
    StateError,
    finite_diff_grad,
    gauss_sample,
    make_rng,
    matmul,
)
from robustreg.loss import (
    LossSpec,
    MadScale,
    compute_mad,
    objective,
    objective_grad,
    residuals,
    scale_residual,
    tukey_psi,
    tukey_rho,
)

__version__ = "0.1.0"

"""Projected normal distributions and their divisive-normalization generalizations.

``y = x / sqrt(x^T B x + c)`` with ``x ~ N(mu, Sigma)``: densities, Taylor
approximations to the moments, exact moments for isotropic covariance,
sampling, and moment-matching fits.
"""

from .core import (
    AsymmetricError,
    DimensionMismatchError,
    GaussianParams,
    Moments,
    NotSPDError,
    ProjNormError,
    ProjectionVariant,
)
from .density import logpdf, m_recursion, pn_logpdf, pnbc_logpdf, pnc_logpdf
from .exact import exact_moments_isotropic, hyp1f1
from .fit import FitConfig, FitProblem, FitResult, fit_pn, fit_pnbc
from .moments import approx_moments, mean_taylor, second_moment_taylor
from .quadratic_forms import qf_covariance, qf_linear_covariance, qf_mean, qf_variance
from .sampling import make_rng, mc_moments, project, sample_gaussian, sample_projected

__version__ = "0.1.0"

__all__ = [
    "AsymmetricError",
    "DimensionMismatchError",
    "FitConfig",
    "FitProblem",
    "FitResult",
    "GaussianParams",
    "Moments",
    "NotSPDError",
    "ProjNormError",
    "ProjectionVariant",
    "approx_moments",
    "exact_moments_isotropic",
    "fit_pn",
    "fit_pnbc",
    "hyp1f1",
    "logpdf",
    "m_recursion",
    "make_rng",
    "mc_moments",
    "mean_taylor",
    "pn_logpdf",
    "pnbc_logpdf",
    "pnc_logpdf",
    "project",
    "qf_covariance",
    "qf_linear_covariance",
    "qf_mean",
    "qf_variance",
    "sample_gaussian",
    "sample_projected",
    "second_moment_taylor",
]

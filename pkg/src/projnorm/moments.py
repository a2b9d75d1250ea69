"""Second-order Taylor approximations to the moments of projected Gaussians.

First moment: each ``y_i = x_i / sqrt(x_i^2 + z_i)`` with
``z_i = x^T x - x_i^2 + c`` is expanded to second order around
``(mu_i, E[z_i])``.  Second moment: each ``y_i y_j = n_ij / d`` with
``n_ij = x_i x_j`` and ``d = x^T x + c`` is expanded around ``(E[n_ij], E[d])``.
The moments of ``z``, ``n`` and ``d`` are quadratic-form moments, evaluated
here in vectorized form for all indices at once.

Variants with a ``B`` matrix are handled in primed coordinates
``x' = B^{1/2} x`` and mapped back with ``B^{-1/2}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    GaussianParams,
    Moments,
    ProjNormError,
    ProjectionVariant,
    from_primed_moments,
    spd_sqrt,
    to_primed,
)


class NumericalOverflowError(ProjNormError):
    pass


@dataclass(frozen=True)
class ZMoments:
    """Mean and variance of each ``z_i``, and ``cov(x_i, z_i)``."""

    z_bar: np.ndarray
    z_var: np.ndarray
    xz_cov: np.ndarray


@dataclass(frozen=True)
class DenominatorMoments:
    """Moments of ``d = x^T x + c`` and of the numerators ``n_ij = x_i x_j``."""

    d_bar: float
    d_var: float
    nd_cov: np.ndarray
    n_bar: np.ndarray


def _check_c(c: float) -> float:
    c = float(c)
    if not (np.isfinite(c) and c >= 0):
        raise ProjNormError(f"c must be non-negative, got {c}")
    return c


def z_moments(params: GaussianParams, c: float = 0.0) -> ZMoments:
    c = _check_c(c)
    mu, sigma = params.mu, params.sigma
    diag_s = np.diag(sigma)
    sigma_mu = sigma @ mu
    sigma2 = sigma @ sigma
    mu2 = mu**2

    z_bar = (np.trace(sigma) + mu @ mu) - (diag_s + mu2) + c
    z_var = (
        (2.0 * np.trace(sigma2) + 4.0 * mu @ sigma_mu)
        - 2.0 * (2.0 * np.diag(sigma2) - diag_s**2)
        - 4.0 * (2.0 * mu * sigma_mu - mu2 * diag_s)
    )
    xz_cov = 2.0 * (sigma_mu - mu * diag_s)
    return ZMoments(z_bar=z_bar, z_var=z_var, xz_cov=xz_cov)


def denominator_moments(params: GaussianParams, c: float = 0.0) -> DenominatorMoments:
    c = _check_c(c)
    mu, sigma = params.mu, params.sigma
    sigma_mu = sigma @ mu
    sigma2 = sigma @ sigma
    n_bar = sigma + np.outer(mu, mu)
    d_bar = float(np.trace(sigma) + mu @ mu + c)
    d_var = float(2.0 * np.trace(sigma2) + 4.0 * mu @ sigma_mu)
    nd_cov = 2.0 * (sigma2 + np.outer(mu, sigma_mu) + np.outer(sigma_mu, mu))
    return DenominatorMoments(d_bar=d_bar, d_var=d_var, nd_cov=nd_cov, n_bar=n_bar)


def mean_taylor(params: GaussianParams, c: float = 0.0) -> np.ndarray:
    """Approximate ``E[y]`` for ``y = x / sqrt(x^T x + c)``.

    The result is not renormalized and may have norm slightly above one
    for small ``n`` and large covariance.
    """
    zm = z_moments(params, c)
    mu = params.mu
    mu2 = mu**2
    den = mu2 + zm.z_bar
    if np.any(den <= 0):
        raise NumericalOverflowError("non-positive expansion point mu_i^2 + E[z_i]")
    den52 = den**2.5
    return (
        mu / np.sqrt(den)
        + 0.5 * np.diag(params.sigma) * (-3.0 * mu * zm.z_bar / den52)
        + 0.5 * zm.z_var * (3.0 * mu / (4.0 * den52))
        + zm.xz_cov * (mu2 - 0.5 * zm.z_bar) / den52
    )


def second_moment_taylor(params: GaussianParams, c: float = 0.0) -> np.ndarray:
    """Approximate ``E[y y^T]`` for ``y = x / sqrt(x^T x + c)``."""
    dm = denominator_moments(params, c)
    d = dm.d_bar
    # N/d * (1 - cov/(N d) + var/d^2), expanded so that zero entries of N are safe
    sm = dm.n_bar / d - dm.nd_cov / d**2 + dm.n_bar * dm.d_var / d**3
    return 0.5 * (sm + sm.T)


def covariance_taylor(gamma, second_moment) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    psi = np.asarray(second_moment, dtype=float) - np.outer(gamma, gamma)
    return 0.5 * (psi + psi.T)


def approx_moments(params: GaussianParams, variant: ProjectionVariant | None = None) -> Moments:
    """Approximate moments for any of the four projection variants."""
    variant = variant or ProjectionVariant()
    c = variant.c_const
    if variant.b_matrix is None:
        gamma = mean_taylor(params, c)
        sm = second_moment_taylor(params, c)
        return Moments(gamma, sm, covariance_taylor(gamma, sm))
    primed = to_primed(params, variant)
    _, inv_sqrt_b = spd_sqrt(variant.b_matrix)
    primed_moments = approx_moments(primed, ProjectionVariant(c_const=c))
    return from_primed_moments(primed_moments, inv_sqrt_b)

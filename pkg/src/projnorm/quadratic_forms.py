"""Moments of quadratic and linear forms of a Gaussian vector.

For ``x ~ N(mu, Sigma)``, symmetric ``M``, ``K`` and a vector ``b``::

    E[x^T M x]               = tr(M Sigma) + mu^T M mu
    var(x^T M x)             = 2 tr(M Sigma M Sigma) + 4 mu^T M Sigma M mu
    cov(x^T M x, x^T K x)    = 2 tr(M Sigma K Sigma) + 4 mu^T M Sigma K mu
    cov(x^T M x, b^T x)      = 2 mu^T M Sigma b
"""

import numpy as np

from .core import DimensionMismatchError, GaussianParams, check_symmetric


def _form(params: GaussianParams, m, name="M") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (params.n, params.n):
        raise DimensionMismatchError(f"{name} has shape {m.shape}, expected {(params.n, params.n)}")
    check_symmetric(m, name)
    return m


def qf_mean(params: GaussianParams, m) -> float:
    m = _form(params, m)
    mu = params.mu
    return float(np.trace(m @ params.sigma) + mu @ m @ mu)


def qf_variance(params: GaussianParams, m) -> float:
    return qf_covariance(params, m, m)


def qf_covariance(params: GaussianParams, m, k) -> float:
    m = _form(params, m)
    k = _form(params, k, "K")
    ms = m @ params.sigma
    ks = k @ params.sigma
    mu = params.mu
    return float(2.0 * np.sum(ms * ks.T) + 4.0 * mu @ ms @ k @ mu)


def qf_linear_covariance(params: GaussianParams, m, b) -> float:
    m = _form(params, m)
    b = np.asarray(b, dtype=float)
    if b.shape != (params.n,):
        raise DimensionMismatchError(f"b has shape {b.shape}, expected {(params.n,)}")
    return float(2.0 * params.mu @ m @ params.sigma @ b)

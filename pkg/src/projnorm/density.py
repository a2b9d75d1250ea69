"""Log-densities of the projected normal and its interior-projecting variants.

The projected normal density on the unit sphere (surface measure) is::

    p(y) = (2 pi)^{-(n-1)/2} det(Sigma)^{-1/2} q3^{-n/2}
           exp((q2^2 / q3 - q1) / 2) M_{n-1}(q2 / sqrt(q3))

with ``q1 = mu' S mu``, ``q2 = mu' S y``, ``q3 = y' S y`` for ``S = Sigma^{-1}``
and ``M_k(alpha) = int_0^inf t^k phi(t - alpha) dt``, which obeys
``M_{k+1} = alpha M_k + k M_{k-1}`` with ``M_0 = Phi(alpha)`` and
``M_1 = alpha Phi(alpha) + phi(alpha)``.

Variants with ``c > 0`` map ``x`` bijectively into the open ball (or
ellipsoid), so their densities follow from the change of variables
``x = y sqrt(c / (1 - |y|^2))``.  The surface density for ``B`` without
``c`` is not provided.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr

from .core import (
    DimensionMismatchError,
    GaussianParams,
    ProjNormError,
    ProjectionVariant,
    spd_sqrt,
    to_primed,
)

MAX_ORDER = 512
MAX_ALPHA = 1e4
_LOG_2PI = math.log(2.0 * math.pi)


class NotOnSphereError(ProjNormError):
    pass


class OutsideSupportError(ProjNormError):
    pass


class InvalidVariantError(ProjNormError):
    pass


class RecursionRangeError(ProjNormError, OverflowError):
    pass


def _check_m_args(alpha: np.ndarray, order: int) -> None:
    if not 0 <= order <= MAX_ORDER:
        raise RecursionRangeError(f"order must be in [0, {MAX_ORDER}], got {order}")
    if np.any(~np.isfinite(alpha)) or np.any(np.abs(alpha) > MAX_ALPHA):
        raise RecursionRangeError(f"|alpha| must be at most {MAX_ALPHA:g}")


def _log_phi_over_cdf(alpha):
    # log(phi(a) / Phi(a)), stable for very negative a
    return -0.5 * alpha**2 - 0.5 * _LOG_2PI - log_ndtr(alpha)


def log_m_recursion(alpha, order: int) -> np.ndarray:
    """``log M_order(alpha)``, vectorized over ``alpha``.

    Works with the ratios ``r_k = M_k / M_{k-1}``.  For non-negative
    ``alpha`` the ratios are generated forward.  For negative ``alpha``
    ``M_k`` is the minimal solution of the recursion and forward errors
    grow like ``exp(2 |alpha| sqrt(k))``; once that factor passes ``e^5``
    the ratios come from the backward recursion ``r_k = k / (r_{k+1} - alpha)``
    started far enough above ``order`` for the start value to be forgotten.
    """
    alpha = np.asarray(alpha, dtype=float)
    _check_m_args(alpha, order)
    out = log_ndtr(alpha).astype(float)
    if order == 0:
        return out

    fwd = alpha >= -2.5 / math.sqrt(order)
    if np.any(fwd):
        a = alpha[fwd]
        r = a + np.exp(_log_phi_over_cdf(a))
        acc = np.log(r)
        for k in range(1, order):
            r = a + k / r
            acc += np.log(r)
        out[fwd] += acc

    bwd = ~fwd
    if np.any(bwd):
        a = alpha[bwd]
        top = int(math.ceil((math.sqrt(order) + 20.0 / np.min(np.abs(a))) ** 2)) + 10
        r = 0.5 * (a + np.sqrt(a * a + 4.0 * (top + 1)))
        acc = np.zeros_like(a)
        for k in range(top, 0, -1):
            r = k / (r - a)
            if k <= order:
                acc += np.log(r)
        out[bwd] += acc
    return out


def m_recursion(alpha: float, order: int) -> float:
    """``M_order(alpha)`` from ``M_{k+1} = alpha M_k + k M_{k-1}``."""
    alpha = float(alpha)
    _check_m_args(np.asarray(alpha), order)
    if alpha >= 0 and order <= 100:
        phi = math.exp(-0.5 * alpha * alpha) / math.sqrt(2.0 * math.pi)
        cdf = 0.5 * math.erfc(-alpha / math.sqrt(2.0))
        prev, cur = cdf, alpha * cdf + phi
        if order == 0:
            return prev
        for k in range(1, order):
            prev, cur = cur, alpha * cur + k * prev
        return cur
    return float(np.exp(log_m_recursion(np.asarray([alpha]), order)[0]))


def _points(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != n:
        raise DimensionMismatchError(f"points have dimension {y.shape[-1]}, expected {n}")
    return y


def _gaussian_logpdf(x: np.ndarray, params: GaussianParams) -> np.ndarray:
    chol = linalg.cholesky(params.sigma, lower=True)
    diff = (x - params.mu).reshape(-1, params.n)
    w = linalg.solve_triangular(chol, diff.T, lower=True)
    maha = np.sum(w * w, axis=0).reshape(x.shape[:-1])
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (params.n * _LOG_2PI + log_det + maha)


def pn_logpdf(y, params: GaussianParams):
    """Log-density of ``x / |x|`` on the unit sphere, w.r.t. surface measure."""
    n = params.n
    y = _points(y, n)
    if np.any(np.abs(np.linalg.norm(y, axis=-1) - 1.0) > 1e-8):
        raise NotOnSphereError("points must have unit norm")
    chol = linalg.cholesky(params.sigma, lower=True)
    pts = y.reshape(-1, n)
    wy = linalg.solve_triangular(chol, pts.T, lower=True)
    wmu = linalg.solve_triangular(chol, params.mu, lower=True)
    q1 = wmu @ wmu
    q2 = wmu @ wy
    q3 = np.sum(wy * wy, axis=0)
    alpha = q2 / np.sqrt(q3)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    out = (
        -0.5 * (n - 1) * _LOG_2PI
        - 0.5 * log_det
        - 0.5 * n * np.log(q3)
        + 0.5 * (q2 * q2 / q3 - q1)
        + log_m_recursion(alpha, n - 1)
    )
    out = out.reshape(y.shape[:-1])
    return float(out) if out.ndim == 0 else out


def pnc_logpdf(y, params: GaussianParams, c: float):
    """Log-density of ``x / sqrt(x^T x + c)`` inside the open unit ball."""
    c = float(c)
    if not c > 0:
        raise InvalidVariantError(f"c must be positive, got {c}")
    n = params.n
    y = _points(y, n)
    r2 = np.sum(y * y, axis=-1)
    if np.any(r2 >= 1.0):
        raise OutsideSupportError("points must lie strictly inside the unit ball")
    one_minus = 1.0 - r2
    scale = np.sqrt(c / one_minus)
    x = y * scale[..., None]
    # det J = (c / (1 - |y|^2))^{n/2} (1 + |y|^2 / (1 - |y|^2))
    log_det_jac = 0.5 * n * np.log(c / one_minus) - np.log(one_minus)
    out = _gaussian_logpdf(x, params) + log_det_jac
    return float(out) if np.ndim(out) == 0 else out


def pnbc_logpdf(y, params: GaussianParams, variant: ProjectionVariant):
    """Log-density of ``x / sqrt(x^T B x + c)`` inside the ellipsoid ``y^T B y < 1``.

    With ``y' = B^{1/2} y`` distributed as the ball variant with primed
    parameters, ``p(y) = p'(B^{1/2} y) det(B^{1/2})``.
    """
    if variant.b_matrix is None or not variant.c_const > 0:
        raise InvalidVariantError("needs a B matrix and c > 0")
    y = _points(y, params.n)
    sqrt_b, _ = spd_sqrt(variant.b_matrix)
    y_primed = y @ sqrt_b
    if np.any(np.sum(y_primed * y_primed, axis=-1) >= 1.0):
        raise OutsideSupportError("points must lie strictly inside the ellipsoid y^T B y < 1")
    primed = to_primed(params, variant)
    log_det_sqrt_b = 0.5 * np.linalg.slogdet(variant.b_matrix)[1]
    out = pnc_logpdf(y_primed, primed, variant.c_const) + log_det_sqrt_b
    return float(out) if np.ndim(out) == 0 else out


def logpdf(y, params: GaussianParams, variant: ProjectionVariant | None = None):
    """Dispatch to the log-density of the given variant."""
    variant = variant or ProjectionVariant()
    kind = variant.kind
    if kind == "pn":
        return pn_logpdf(y, params)
    if kind == "pnc":
        return pnc_logpdf(y, params, variant.c_const)
    if kind == "pnbc":
        return pnbc_logpdf(y, params, variant)
    raise InvalidVariantError("no density is available for the ellipsoid-surface variant")

"""Exact moments of the projected normal with isotropic covariance.

For ``x ~ N(mu, sigma2 * I)`` in ``n`` dimensions and ``y = x / |x|``::

    gamma = a * mu
    psi   = b * mu mu^T + c * I

with ``delta = |mu|^2 / (2 sigma2)`` and

    a = Gamma((n+1)/2) / (sqrt(2 sigma2) Gamma(n/2 + 1)) * 1F1(1/2; n/2 + 1; -delta)
    b = 1F1(1; n/2 + 2; -delta) / (sigma2 (n + 2)) - a^2
    c = 1F1(1; n/2 + 1; -delta) / n
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DimensionMismatchError, Moments, ProjNormError

MAX_TERMS = 100_000
MAX_ABS_Z = 1e4
_RESCALE = 1e200


class PoleError(ProjNormError):
    pass


class NonConvergenceError(ProjNormError):
    pass


class ArgumentRangeError(ProjNormError):
    pass


def _positive_series(a: float, b: float, x: float) -> float:
    """``exp(-x) * 1F1(a; b; x)`` for ``x >= 0`` by summing the power series.

    Terms are carried with a running scale so that ``exp(x)``-sized partial
    sums never overflow.
    """
    term = 1.0
    total = 1.0
    log_scale = 0.0
    small = 0
    for k in range(MAX_TERMS):
        term *= (a + k) / (b + k) * x / (k + 1)
        total += term
        if abs(term) < 1e-16 * abs(total):
            small += 1
            if small == 3:
                return total * math.exp(log_scale - x)
        else:
            small = 0
        if abs(total) > _RESCALE:
            term /= _RESCALE
            total /= _RESCALE
            log_scale += math.log(_RESCALE)
    raise NonConvergenceError(f"1F1({a}; {b}; {x}) did not converge in {MAX_TERMS} terms")


def _check_pole(b: float) -> None:
    if b <= 0 and float(b).is_integer():
        raise PoleError(f"1F1 is undefined for b = {b}")


def hyp1f1(a: float, b: float, z: float) -> float:
    """Confluent hypergeometric function ``1F1(a; b; z)``.

    Negative arguments are mapped through Kummer's transformation
    ``1F1(a; b; z) = exp(z) 1F1(b - a; b; -z)`` so that the summed series
    has no alternating cancellation.
    """
    a, b, z = float(a), float(b), float(z)
    _check_pole(b)
    if abs(z) > MAX_ABS_Z:
        raise ArgumentRangeError(f"|z| = {abs(z):.3g} exceeds {MAX_ABS_Z:g}")
    if z == 0.0:
        return 1.0
    if z < 0:
        return _positive_series(b - a, b, -z)
    return _positive_series(a, b, z) * math.exp(z)


def _hyp1f1_large_negative(a: float, b: float, x: float) -> float:
    # 1F1(a; b; -x) ~ Gamma(b)/Gamma(b-a) x^-a sum_k (a)_k (a-b+1)_k / k! x^-k;
    # the companion exp(-x) term is below double precision for x > 1e4.
    term = 1.0
    total = 1.0
    for k in range(200):
        nxt = term * (a + k) * (a - b + 1 + k) / ((k + 1) * x)
        if abs(nxt) >= abs(term) or abs(nxt) < 1e-17 * abs(total):
            break
        term = nxt
        total += term
    log_pref = math.lgamma(b) - math.lgamma(b - a) - a * math.log(x)
    return math.exp(log_pref) * total


def _hyp1f1_nonpositive(a: float, b: float, z: float) -> float:
    if -z > MAX_ABS_Z:
        return _hyp1f1_large_negative(a, b, -z)
    return hyp1f1(a, b, z)


@dataclass(frozen=True)
class IsotropicCoeffs:
    a: float
    b: float
    c: float
    # coefficient of mu mu^T in E[y y^T]
    second: float


def isotropic_coeffs(mu_norm2: float, sigma2: float, n: int) -> IsotropicCoeffs:
    if not sigma2 > 0:
        raise ProjNormError(f"sigma2 must be positive, got {sigma2}")
    if n < 2:
        raise DimensionMismatchError("dimension must be at least 2")
    z = -mu_norm2 / (2.0 * sigma2)
    gamma_ratio = math.exp(math.lgamma((n + 1) / 2) - math.lgamma(n / 2 + 1))
    a = gamma_ratio / math.sqrt(2.0 * sigma2) * _hyp1f1_nonpositive(0.5, n / 2 + 1, z)
    second = _hyp1f1_nonpositive(1.0, n / 2 + 2, z) / (sigma2 * (n + 2))
    c = _hyp1f1_nonpositive(1.0, n / 2 + 1, z) / n
    return IsotropicCoeffs(a=a, b=second - a * a, c=c, second=second)


def exact_moments_isotropic(mu, sigma2: float) -> Moments:
    """Exact moments of ``x / |x|`` for ``x ~ N(mu, sigma2 I)``."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    n = mu.shape[0]
    k = isotropic_coeffs(float(mu @ mu), float(sigma2), n)
    gamma = k.a * mu
    outer = np.outer(mu, mu)
    psi = k.b * outer + k.c * np.eye(n)
    sm = k.second * outer + k.c * np.eye(n)
    return Moments(gamma, sm, psi)

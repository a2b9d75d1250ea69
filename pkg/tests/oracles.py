"""Independent reference computations used by the tests."""

import math

import numpy as np
from scipy import integrate, stats

from projnorm.quadratic_forms import qf_covariance, qf_linear_covariance, qf_mean, qf_variance

Z_MAX = 5.0


def z_scores(estimate, truth, se):
    estimate, truth, se = (np.asarray(a, dtype=float) for a in (estimate, truth, se))
    return (estimate - truth) / se


def within_se(z, k=3.0):
    """Family-wise version of "every entry within k standard errors".

    Accepts when no |z| exceeds ``Z_MAX`` and the number beyond ``k`` is no
    more than the 99.9% quantile of its binomial null distribution.
    """
    z = np.abs(np.ravel(z))
    p_out = 2.0 * stats.norm.sf(k)
    allowed = int(stats.binom.ppf(0.999, z.size, p_out))
    return bool(np.all(z <= Z_MAX) and np.sum(z > k) <= allowed)


def mc_moment_se(y):
    """Sample mean, covariance and standard errors of each entry.

    The covariance SE uses the variance of the centered products, which is
    the delta-method SE of the sample covariance.  Sums of squared products
    are the matrix product of the squared centered draws.
    """
    m, n = y.shape
    mean = y.mean(axis=0)
    se_mean = y.std(axis=0, ddof=1) / math.sqrt(m)
    c = y - mean
    cov = c.T @ c / m
    c2 = c * c
    var_prod = c2.T @ c2 / m - cov**2
    se_cov = np.sqrt(var_prod / m)
    return mean, se_mean, cov, se_cov


def qf_mean_loop(mu, sigma, m):
    n = len(mu)
    return sum(m[i, j] * (sigma[j, i] + mu[i] * mu[j]) for i in range(n) for j in range(n))


def qf_cov_loop(mu, sigma, m, k):
    """cov(x'Mx, x'Kx) by index sums of Isserlis' theorem."""
    n = len(mu)
    tot = 0.0
    for i in range(n):
        for j in range(n):
            for a in range(n):
                for b in range(n):
                    w = m[i, j] * k[a, b]
                    if w == 0.0:
                        continue
                    # E[x_i x_j x_a x_b] - E[x_i x_j] E[x_a x_b] for a Gaussian
                    tot += w * (
                        sigma[i, a] * sigma[j, b]
                        + sigma[i, b] * sigma[j, a]
                        + mu[i] * mu[a] * sigma[j, b]
                        + mu[i] * mu[b] * sigma[j, a]
                        + mu[j] * mu[a] * sigma[i, b]
                        + mu[j] * mu[b] * sigma[i, a]
                    )
    return tot


def qf_lin_cov_loop(mu, sigma, m, b):
    """cov(x'Mx, b'x) = sum_ij M_ij (mu_i Sigma_jk + mu_j Sigma_ik) b_k."""
    n = len(mu)
    return sum(
        m[i, j] * b[k] * (mu[i] * sigma[j, k] + mu[j] * sigma[i, k])
        for i in range(n)
        for j in range(n)
        for k in range(n)
    )


def sphere_quadrature(f, n_theta=200, n_phi=400):
    """Integral of ``f(points)`` over the unit sphere S^2 (Gauss-Legendre in cos theta)."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = (np.arange(n_phi) + 0.5) * 2.0 * math.pi / n_phi
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st = np.sqrt(1.0 - ct**2)
    pts = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1)
    vals = f(pts)
    return float(np.sum(vals * w[:, None]) * 2.0 * math.pi / n_phi)


def circle_quadrature(f, k=4000):
    """Integral over the unit circle S^1 (periodic trapezoid rule)."""
    t = (np.arange(k) + 0.5) * 2.0 * math.pi / k
    pts = np.stack([np.cos(t), np.sin(t)], axis=-1)
    return float(np.sum(f(pts)) * 2.0 * math.pi / k)


def disk_quadrature(f, n_r=400, n_t=400, transform=None):
    """Integral over the unit disk in polar coordinates.

    ``transform`` optionally maps disk points to the integration domain
    (a linear map); the Jacobian is applied.
    """
    # substitute r = 1 - u^2 to resolve the boundary layer at r -> 1
    u, wu = np.polynomial.legendre.leggauss(n_r)
    u = 0.5 * (u + 1.0)
    wu = 0.5 * wu
    r = 1.0 - u**2
    dr = 2.0 * u
    t = (np.arange(n_t) + 0.5) * 2.0 * math.pi / n_t
    rr, tt = np.meshgrid(r, t, indexing="ij")
    pts = np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1)
    jac = 1.0
    if transform is not None:
        pts = pts @ np.asarray(transform).T
        jac = abs(np.linalg.det(transform))
    vals = f(pts) * rr
    return float(np.sum(vals * (wu * dr)[:, None]) * 2.0 * math.pi / n_t * jac)


def m_integral(alpha, k):
    """M_k(alpha) = int_0^inf t^k phi(t - alpha) dt by adaptive quadrature."""
    f = lambda t: t**k * math.exp(-0.5 * (t - alpha) ** 2) / math.sqrt(2.0 * math.pi)
    peak = max(0.0, 0.5 * (alpha + math.sqrt(alpha * alpha + 4 * k)))
    a, _ = integrate.quad(f, 0.0, peak, epsabs=0, epsrel=1e-13, limit=200)
    b, _ = integrate.quad(f, peak, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    return a + b


def ball_quadrature(f, r_edges=(0.0, 1.0), n_r=80, n_theta=120, n_phi=240, transform=None):
    """Integrals of ``f`` over spherical shells of the unit ball in R^3.

    Returns one value per consecutive pair in ``r_edges``.  As for
    :func:`disk_quadrature`, ``transform`` maps the ball linearly onto the
    integration domain.
    """
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = (np.arange(n_phi) + 0.5) * 2.0 * math.pi / n_phi
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st = np.sqrt(1.0 - ct**2)
    dirs = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1)
    w_sphere = w[:, None] * 2.0 * math.pi / n_phi
    jac = 1.0 if transform is None else abs(np.linalg.det(transform))
    out = []
    for lo, hi in zip(r_edges[:-1], r_edges[1:]):
        # r = hi - (hi - lo) u^2 clusters nodes at the outer edge
        u, wu = np.polynomial.legendre.leggauss(n_r)
        u = 0.5 * (u + 1.0)
        wu = 0.5 * wu
        r = hi - (hi - lo) * u**2
        dr = 2.0 * (hi - lo) * u
        tot = 0.0
        for rk, wk in zip(r, wu * dr):
            pts = rk * dirs
            if transform is not None:
                pts = pts @ np.asarray(transform).T
            tot += wk * rk * rk * np.sum(f(pts) * w_sphere)
        out.append(tot * jac)
    return np.array(out)


def minus_i(n, i):
    m = np.eye(n)
    m[i, i] = 0.0
    return m


def a_ij(n, i, j):
    a = np.zeros((n, n))
    a[i, j] += 0.5
    a[j, i] += 0.5
    return a


def mean_by_index(p, c):
    """Taylor mean, one coordinate at a time, from scalar quadratic-form moments."""
    n = p.n
    out = np.empty(n)
    for i in range(n):
        m = minus_i(n, i)
        e = np.eye(n)[i]
        zb = qf_mean(p, m) + c
        zv = qf_variance(p, m)
        xz = qf_linear_covariance(p, m, e)
        mu_i = p.mu[i]
        den = mu_i**2 + zb
        out[i] = (
            mu_i / np.sqrt(den)
            + 0.5 * p.sigma[i, i] * (-3.0 * mu_i * zb / den**2.5)
            + 0.5 * zv * (3.0 * mu_i / (4.0 * den**2.5))
            + xz * (mu_i**2 - 0.5 * zb) / den**2.5
        )
    return out


def second_moment_by_index(p, c):
    n = p.n
    eye = np.eye(n)
    d = qf_mean(p, eye) + c
    var_d = qf_variance(p, eye)
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            a = a_ij(n, i, j)
            nb = qf_mean(p, a)
            cov = qf_covariance(p, a, eye)
            out[i, j] = nb / d - cov / d**2 + nb * var_d / d**3
    return out

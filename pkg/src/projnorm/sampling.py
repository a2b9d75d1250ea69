"""Random draws, Monte Carlo moments and random parameter generators.

All randomness flows through ``numpy.random.Generator`` objects built by
:func:`make_rng` (PCG64 bit generator, ziggurat normals).  A seed plus
an optional stream key fully determines a sequence, so independent grid
cells get independent streams without sharing state.
"""

from __future__ import annotations

from typing import Literal

import numpy as np
from scipy.linalg import expm

from .core import GaussianParams, Moments, ProjNormError, ProjectionVariant
from .quadratic_forms import qf_mean

CHUNK = 100_000


class ZeroVectorError(ProjNormError):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``seed`` on the stream identified by ``stream``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit seed for the sub-stream ``key`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_gaussian(params: GaussianParams, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` rows drawn from ``N(mu, Sigma)`` as ``mu + L u``."""
    if m < 1:
        raise ProjNormError("need at least one sample")
    chol = np.linalg.cholesky(params.sigma)
    u = rng.standard_normal((m, params.n))
    return params.mu + u @ chol.T


def project(x, variant: ProjectionVariant | None = None) -> np.ndarray:
    """``y = x / sqrt(x^T B x + c)`` for a vector or a stack of row vectors."""
    variant = variant or ProjectionVariant()
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if variant.b_matrix is None:
        quad = np.sum(x * x, axis=-1)
    else:
        quad = np.einsum("...i,ij,...j->...", x, variant.b_or_identity(n), x)
    denom = quad + variant.c_const
    if np.any(denom <= 0):
        raise ZeroVectorError("cannot project the zero vector when c = 0")
    return x / np.sqrt(denom)[..., None]


def sample_projected(
    params: GaussianParams, variant: ProjectionVariant | None, m: int, rng: np.random.Generator
) -> np.ndarray:
    return project(sample_gaussian(params, m, rng), variant)


def mc_moments(
    params: GaussianParams,
    variant: ProjectionVariant | None,
    m: int,
    rng: np.random.Generator,
    chunk: int = CHUNK,
) -> Moments:
    """Monte Carlo moments of the projected variable from ``m`` draws.

    Draws are processed in chunks; only running sums of ``y`` and
    ``y y^T`` are kept.
    """
    if m < 2:
        raise ProjNormError("need at least two samples")
    n = params.n
    total = np.zeros(n)
    outer = np.zeros((n, n))
    done = 0
    while done < m:
        k = min(chunk, m - done)
        y = sample_projected(params, variant, k, rng)
        total += y.sum(axis=0)
        outer += y.T @ y
        done += k
    gamma = total / m
    second = outer / m
    return Moments.from_second_moment(gamma, second)


def sample_mu(n: int, rng: np.random.Generator) -> np.ndarray:
    """A direction drawn uniformly from the unit sphere."""
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def random_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    """``expm(S)`` for skew-symmetric ``S`` with standard normal lower triangle."""
    lower = np.tril(rng.standard_normal((n, n)), k=-1)
    return expm(lower - lower.T)


def sample_sigma(
    n: int,
    s: float,
    rng: np.random.Generator,
    eig_dist: Literal["exponential", "uniform"] = "exponential",
) -> np.ndarray:
    """Random covariance ``V D V^T`` with spectrum scaled by ``s^2 / n``.

    ``exponential`` draws eigenvalues from Exp(1) and adds 0.01;
    ``uniform`` draws them from U(0.05, 1).
    """
    if eig_dist == "exponential":
        eig = rng.exponential(1.0, n) + 0.01
    elif eig_dist == "uniform":
        eig = rng.uniform(0.05, 1.0, n)
    else:
        raise ProjNormError(f"unknown eigenvalue distribution {eig_dist!r}")
    eig = eig * s**2 / n
    v = random_rotation(n, rng)
    sigma = (v * eig) @ v.T
    return 0.5 * (sigma + sigma.T)


def _exp_mean(value: float, convention: str) -> float:
    if convention == "mean":
        return value
    if convention == "rate":
        return 1.0 / value
    raise ProjNormError(f"unknown exponential convention {convention!r}")


def sample_b(
    n: int,
    rng: np.random.Generator,
    mode: Literal["full", "rank1"] = "full",
    exp_convention: Literal["mean", "rate"] = "mean",
):
    """Random SPD denominator matrix.

    ``full`` uses the covariance recipe without the ``s^2 / n`` scaling and
    returns the matrix.  ``rank1`` returns ``(B, b, v)`` with
    ``B = I + b v v^T``, ``b = 2 + Exp(4)`` and ``v`` uniform on the sphere.
    """
    if mode == "full":
        eig = rng.exponential(1.0, n) + 0.01
        v = random_rotation(n, rng)
        b = (v * eig) @ v.T
        return 0.5 * (b + b.T)
    if mode == "rank1":
        b = 2.0 + rng.exponential(_exp_mean(4.0, exp_convention))
        v = sample_mu(n, rng)
        return np.eye(n) + b * np.outer(v, v), b, v
    raise ProjNormError(f"unknown B mode {mode!r}")


def sample_c(params: GaussianParams, rng: np.random.Generator) -> float:
    """``c = c_mult * E|x|^2`` with ``c_mult ~ Exp(1)``."""
    c_mult = rng.exponential(1.0)
    return float(c_mult * qf_mean(params, np.eye(params.n)))

"""Domain types and SPD matrix helpers shared across the package.

A projected variable is ``y = x / sqrt(x^T B x + c)`` with ``x ~ N(mu, Sigma)``.
``GaussianParams`` holds ``(mu, Sigma)``, ``ProjectionVariant`` holds the
optional ``B`` and the constant ``c``, and ``Moments`` holds the first moment,
second moment and covariance of ``y``.

When ``B`` is present the variant reduces to its B-free counterpart in the
"primed" coordinates ``x' = B^{1/2} x``; ``to_primed`` and
``from_primed_moments`` perform that change of basis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

SYM_TOL = 1e-10
MAX_DIM = 1024


class ProjNormError(ValueError):
    """Base class for invalid inputs to this package."""


class NotSPDError(ProjNormError):
    pass


class AsymmetricError(ProjNormError):
    pass


class DimensionMismatchError(ProjNormError):
    pass


def _as_matrix(m, name: str) -> np.ndarray:
    m = np.array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ProjNormError(f"{name} has non-finite entries")
    return m


def check_symmetric(m: np.ndarray, name: str = "matrix", tol: float = SYM_TOL) -> None:
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > tol:
        raise AsymmetricError(f"{name} is not symmetric (max asymmetry {asym:.3g})")


def check_spd(m: np.ndarray, name: str = "matrix") -> None:
    """Raise NotSPDError unless ``m`` is symmetric with positive spectrum."""
    try:
        check_symmetric(m, name)
    except AsymmetricError as err:
        raise NotSPDError(str(err)) from None
    lam_min = np.linalg.eigvalsh(m)[0]
    if not lam_min > 0:
        raise NotSPDError(f"{name} is not positive definite (smallest eigenvalue {lam_min:.3g})")


@dataclass(frozen=True)
class GaussianParams:
    """Mean and covariance of the latent Gaussian ``x``."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        sigma = _as_matrix(self.sigma, "sigma")
        n = mu.shape[0]
        if n < 2:
            raise DimensionMismatchError("dimension must be at least 2")
        if n > MAX_DIM:
            raise DimensionMismatchError(f"dimension {n} exceeds the cap of {MAX_DIM}")
        if sigma.shape != (n, n):
            raise DimensionMismatchError(f"sigma has shape {sigma.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(mu)):
            raise ProjNormError("mu has non-finite entries")
        check_spd(sigma, "sigma")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianParams":
        return cls(mu=d["mu"], sigma=d["sigma"])


@dataclass(frozen=True)
class ProjectionVariant:
    """Denominator ``sqrt(x^T B x + c)``; ``b_matrix=None`` means ``B = I``.

    The four combinations give the projected normal (no B, c = 0), the
    variant projecting inside the unit ball (no B, c > 0), onto an ellipsoid
    (B, c = 0) and inside an ellipsoid (B, c > 0).
    """

    b_matrix: Optional[np.ndarray] = None
    c_const: float = 0.0

    def __post_init__(self):
        c = float(self.c_const)
        if not (np.isfinite(c) and c >= 0):
            raise ProjNormError(f"c must be a non-negative finite number, got {c}")
        object.__setattr__(self, "c_const", c)
        if self.b_matrix is not None:
            b = _as_matrix(self.b_matrix, "B")
            check_spd(b, "B")
            b.setflags(write=False)
            object.__setattr__(self, "b_matrix", b)

    @property
    def kind(self) -> str:
        if self.b_matrix is None:
            return "pn" if self.c_const == 0 else "pnc"
        return "pnb" if self.c_const == 0 else "pnbc"

    def b_or_identity(self, n: int) -> np.ndarray:
        if self.b_matrix is None:
            return np.eye(n)
        if self.b_matrix.shape != (n, n):
            raise DimensionMismatchError(f"B has shape {self.b_matrix.shape}, expected {(n, n)}")
        return self.b_matrix

    def to_dict(self) -> dict:
        b = None if self.b_matrix is None else self.b_matrix.tolist()
        return {"b": b, "c": self.c_const}

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionVariant":
        return cls(b_matrix=d.get("b"), c_const=d.get("c", 0.0))


@dataclass(frozen=True)
class Moments:
    """First moment ``gamma``, second moment ``E[y y^T]`` and covariance ``psi``."""

    gamma: np.ndarray
    second_moment: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float).reshape(-1)
        sm = _as_matrix(self.second_moment, "second_moment")
        psi = _as_matrix(self.psi, "psi")
        n = gamma.shape[0]
        if sm.shape != (n, n) or psi.shape != (n, n):
            raise DimensionMismatchError("moment shapes disagree")
        for a in (gamma, sm, psi):
            a.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "second_moment", sm)
        object.__setattr__(self, "psi", psi)

    @classmethod
    def from_second_moment(cls, gamma, second_moment) -> "Moments":
        gamma = np.asarray(gamma, dtype=float)
        sm = np.asarray(second_moment, dtype=float)
        sm = 0.5 * (sm + sm.T)
        psi = sm - np.outer(gamma, gamma)
        return cls(gamma, sm, psi)

    @classmethod
    def from_covariance(cls, gamma, psi) -> "Moments":
        gamma = np.asarray(gamma, dtype=float)
        psi = np.asarray(psi, dtype=float)
        psi = 0.5 * (psi + psi.T)
        return cls(gamma, psi + np.outer(gamma, gamma), psi)

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "second_moment": self.second_moment.tolist(),
            "psi": self.psi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Moments":
        if "second_moment" in d and "psi" in d:
            return cls(d["gamma"], d["second_moment"], d["psi"])
        if "psi" in d:
            return cls.from_covariance(d["gamma"], d["psi"])
        return cls.from_second_moment(d["gamma"], d["second_moment"])


def spd_sqrt(m) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root and inverse square root of an SPD matrix.

    Returns
    -------
    sqrt, inv_sqrt : ndarray
        Symmetric matrices with ``sqrt @ sqrt = m`` and ``inv_sqrt = sqrt^{-1}``.
    """
    m = _as_matrix(m, "matrix")
    check_spd(m)
    lam, vec = np.linalg.eigh(0.5 * (m + m.T))
    root = np.sqrt(lam)
    sqrt = (vec * root) @ vec.T
    inv_sqrt = (vec / root) @ vec.T
    return 0.5 * (sqrt + sqrt.T), 0.5 * (inv_sqrt + inv_sqrt.T)


def to_primed(params: GaussianParams, variant: ProjectionVariant) -> GaussianParams:
    """Parameters of ``x' = B^{1/2} x``."""
    if variant.b_matrix is None:
        raise ProjNormError("to_primed needs a variant with a B matrix")
    sqrt_b, _ = spd_sqrt(variant.b_or_identity(params.n))
    sigma_p = sqrt_b @ params.sigma @ sqrt_b
    return GaussianParams(sqrt_b @ params.mu, 0.5 * (sigma_p + sigma_p.T))


def from_primed_moments(primed: Moments, inv_sqrt_b) -> Moments:
    """Map moments of ``y'`` to moments of ``y = B^{-1/2} y'``."""
    inv_sqrt_b = np.asarray(inv_sqrt_b, dtype=float)
    if inv_sqrt_b.shape != (primed.n, primed.n):
        raise DimensionMismatchError(
            f"inv_sqrt_b has shape {inv_sqrt_b.shape}, expected {(primed.n, primed.n)}"
        )
    gamma = inv_sqrt_b @ primed.gamma
    sm = inv_sqrt_b @ primed.second_moment @ inv_sqrt_b
    return Moments.from_second_moment(gamma, sm)

"""Moment matching: fit distribution parameters to observed moments.

The loss is ``(1 - lam) |gamma~ - gamma|^2 + lam |Psi~ - Psi|_F^2`` where the
``~`` moments are the Taylor approximations of the candidate.  Parameters
live on constraint sets and are optimized through smooth surjective maps
from unconstrained coordinates:

* ``mu``: ``u / |u|`` (unit sphere)
* full ``Sigma`` or ``B``: ``Q diag(exp l) Q^T`` with ``Q = Q0 expm(A - A^T)``
  around a base rotation ``Q0`` (default), or ``expm`` of a symmetric matrix
* ``sigma^2``, ``b``, ``c``: ``exp`` of a real number
* rank-one direction ``v``: ``w / |w|``

Gradients come from torch autograd; updates use NAdam with a cyclic
learning-rate schedule.  An optional L-BFGS pass can polish the best NAdam
iterate; see ``FitConfig.refine_iters``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Literal, Optional

import numpy as np
import torch
from scipy.optimize import minimize

from .core import GaussianParams, Moments, ProjNormError, ProjectionVariant
from .moments import approx_moments

VariantKind = Literal["PN", "PN_c", "PN_B", "PN_Bc"]
SigmaMode = Literal["full_sigma", "isotropic_sigma"]
BMode = Literal["none", "rank1", "full"]

_DTYPE = torch.float64
# smallest eigenvalue kept when decoding, relative to the largest
_EIG_FLOOR = 1e-14


class NonFiniteLossError(ProjNormError):
    def __init__(self, message: str, iteration: int, theta: np.ndarray):
        super().__init__(message)
        self.iteration = iteration
        self.theta = theta


@dataclass(frozen=True)
class FitConfig:
    cycles: int = 12
    iters_per_cycle: int = 80
    lr: float = 0.4
    lr_decay: float = 0.85
    decay_every: int = 5
    cycle_decay: float = 0.85
    # relative change of the best loss over one cycle that counts as converged
    tol: float = 1e-10
    # starting value of b for rank-one B fits (not prescribed by the method)
    b_init: float = 1.0
    check_constraints: bool = False
    # trivialization of SPD matrices: "eigen" or "expm" (see _SpdCoords)
    spd_param: str = "eigen"
    # L-BFGS iterations run from the best NAdam iterate (0 disables)
    refine_iters: int = 500

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @property
    def total_iterations(self) -> int:
        return self.cycles * self.iters_per_cycle


@dataclass(frozen=True)
class FitProblem:
    observed_gamma: np.ndarray
    observed_psi: np.ndarray
    variant_kind: VariantKind = "PN"
    constraint_mode: SigmaMode = "full_sigma"
    b_mode: BMode = "none"
    lam: float = 0.9

    def __post_init__(self):
        gamma = np.asarray(self.observed_gamma, dtype=float).reshape(-1)
        psi = np.asarray(self.observed_psi, dtype=float)
        n = gamma.shape[0]
        if psi.shape != (n, n):
            raise ProjNormError(f"observed psi has shape {psi.shape}, expected {(n, n)}")
        if not 0.0 <= self.lam <= 1.0:
            raise ProjNormError(f"lambda must be in [0, 1], got {self.lam}")
        if self.variant_kind not in ("PN", "PN_c", "PN_B", "PN_Bc"):
            raise ProjNormError(f"unknown variant kind {self.variant_kind!r}")
        if self.constraint_mode not in ("full_sigma", "isotropic_sigma"):
            raise ProjNormError(f"unknown constraint mode {self.constraint_mode!r}")
        has_b = self.variant_kind in ("PN_B", "PN_Bc")
        if has_b != (self.b_mode != "none"):
            raise ProjNormError(f"b_mode {self.b_mode!r} does not match {self.variant_kind}")
        if self.b_mode not in ("none", "rank1", "full"):
            raise ProjNormError(f"unknown b_mode {self.b_mode!r}")
        object.__setattr__(self, "observed_gamma", gamma)
        object.__setattr__(self, "observed_psi", 0.5 * (psi + psi.T))

    @property
    def n(self) -> int:
        return self.observed_gamma.shape[0]

    @property
    def has_c(self) -> bool:
        return self.variant_kind in ("PN_c", "PN_Bc")

    @classmethod
    def from_moments(cls, observed: Moments, **kwargs) -> "FitProblem":
        return cls(observed.gamma, observed.psi, **kwargs)


@dataclass
class FitResult:
    params_hat: GaussianParams
    variant_hat: ProjectionVariant
    final_loss: float
    loss_trace: list[float]
    iterations: int
    converged: bool
    # rank-one and isotropic pieces when those constraints are used
    extras: dict = field(default_factory=dict)


def lr_schedule(iteration: int, config: FitConfig = FitConfig()) -> float:
    if not 0 <= iteration < config.total_iterations:
        raise ProjNormError(f"iteration {iteration} outside the schedule")
    cycle, within = divmod(iteration, config.iters_per_cycle)
    return (
        config.lr
        * config.cycle_decay**cycle
        * config.lr_decay ** (within // config.decay_every)
    )


def sphere_embed(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ProjNormError("cannot map the zero vector onto the sphere")
    return u / norm


def spd_embed(w) -> np.ndarray:
    """SPD matrix ``exp(W)`` for a symmetric ``W``."""
    w = np.asarray(w, dtype=float)
    lam, vec = np.linalg.eigh(0.5 * (w + w.T))
    out = (vec * np.exp(lam)) @ vec.T
    return 0.5 * (out + out.T)


def spd_log(m) -> np.ndarray:
    """Inverse of :func:`spd_embed`; tiny or negative eigenvalues are floored."""
    m = np.asarray(m, dtype=float)
    lam, vec = np.linalg.eigh(0.5 * (m + m.T))
    lam = np.maximum(lam, max(lam[-1], 1e-300) * 1e-12)
    out = (vec * np.log(lam)) @ vec.T
    return 0.5 * (out + out.T)


def loss(params: GaussianParams, variant: ProjectionVariant, problem: FitProblem) -> float:
    """Weighted squared moment error of a candidate."""
    m = approx_moments(params, variant)
    dg = m.gamma - problem.observed_gamma
    dp = m.psi - problem.observed_psi
    return float((1.0 - problem.lam) * dg @ dg + problem.lam * np.sum(dp * dp))


# torch versions of the Taylor formulas, used for autograd


def _t_mean_taylor(mu, sigma, c):
    diag_s = torch.diagonal(sigma)
    sigma_mu = sigma @ mu
    sigma2 = sigma @ sigma
    mu2 = mu * mu
    z_bar = (torch.trace(sigma) + mu @ mu) - (diag_s + mu2) + c
    z_var = (
        (2.0 * torch.trace(sigma2) + 4.0 * mu @ sigma_mu)
        - 2.0 * (2.0 * torch.diagonal(sigma2) - diag_s**2)
        - 4.0 * (2.0 * mu * sigma_mu - mu2 * diag_s)
    )
    xz_cov = 2.0 * (sigma_mu - mu * diag_s)
    den = mu2 + z_bar
    den52 = den**2.5
    return (
        mu / torch.sqrt(den)
        + 0.5 * diag_s * (-3.0 * mu * z_bar / den52)
        + 0.5 * z_var * (3.0 * mu / (4.0 * den52))
        + xz_cov * (mu2 - 0.5 * z_bar) / den52
    )


def _t_second_moment(mu, sigma, c):
    sigma_mu = sigma @ mu
    sigma2 = sigma @ sigma
    n_bar = sigma + torch.outer(mu, mu)
    d = torch.trace(sigma) + mu @ mu + c
    d_var = 2.0 * torch.trace(sigma2) + 4.0 * mu @ sigma_mu
    nd_cov = 2.0 * (sigma2 + torch.outer(mu, sigma_mu) + torch.outer(sigma_mu, mu))
    sm = n_bar / d - nd_cov / d**2 + n_bar * d_var / d**3
    return 0.5 * (sm + sm.T)


def _t_sym_exp(w):
    return torch.linalg.matrix_exp(0.5 * (w + w.T))


def _tril_index(n: int):
    return torch.tril_indices(n, n, offset=-1)


class _SpdCoords:
    """Unconstrained coordinates of one SPD matrix.

    ``eigen``: ``Q diag(exp(l)) Q^T`` with ``Q = Q0 expm(A - A^T)``; the
    coordinates are ``l`` (n) followed by the strict lower triangle of ``A``.
    ``Q0`` is the eigenbasis of the value last passed to :meth:`encode`, so
    encoding a matrix puts it at ``A = 0``.
    ``expm``: :func:`spd_embed` of a full ``n x n`` coordinate matrix.
    """

    def __init__(self, n: int, kind: str):
        if kind not in ("eigen", "expm"):
            raise ProjNormError(f"unknown SPD parameterization {kind!r}")
        self.n = n
        self.kind = kind
        self.size = n * (n + 1) // 2 if kind == "eigen" else n * n
        self._q0 = torch.eye(n, dtype=_DTYPE)
        self._tril = _tril_index(n)

    def spectral(self, coords):
        """Eigenvalues and eigenvectors ``(lam, Q)`` as torch tensors (eigen mode)."""
        n = self.n
        a = torch.zeros((n, n), dtype=coords.dtype)
        a = a.index_put((self._tril[0], self._tril[1]), coords[n:])
        q = self._q0 @ torch.linalg.matrix_exp(a - a.T)
        return torch.exp(coords[:n]), q

    def matrix(self, coords, power: float = 1.0):
        """The SPD matrix raised to ``power`` (``1``, ``1/2`` or ``-1/2``)."""
        if self.kind == "eigen":
            lam, q = self.spectral(coords)
            out = (q * lam**power) @ q.T
            return 0.5 * (out + out.T)
        w = coords.reshape(self.n, self.n)
        return _t_sym_exp(power * w)

    def encode(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if self.kind == "expm":
            return spd_log(m).ravel()
        lam, vec = np.linalg.eigh(0.5 * (m + m.T))
        lam = np.maximum(lam, max(lam[-1], 1e-300) * _EIG_FLOOR)
        self._q0 = torch.tensor(vec, dtype=_DTYPE)
        return np.concatenate([np.log(lam), np.zeros(self.size - self.n)])

    def decode(self, coords) -> np.ndarray:
        """The matrix in numpy, with eigenvalues floored relative to the largest."""
        with torch.no_grad():
            if self.kind == "eigen":
                lam, q = self.spectral(coords)
                lam, q = lam.numpy(), q.numpy()
            else:
                w = coords.numpy().reshape(self.n, self.n)
                lam, q = np.linalg.eigh(0.5 * (w + w.T))
                lam = np.exp(lam)
        lam = np.maximum(lam, lam.max() * _EIG_FLOOR)
        out = (q * lam) @ q.T
        return 0.5 * (out + out.T)


class MomentObjective:
    """The moment-matching loss as a function of a flat coordinate vector.

    Coordinate blocks, in order: ``u`` (n), then the covariance coordinates
    or ``log sigma^2`` (1), then ``log b`` and ``w`` (1 + n) or the ``B``
    coordinates when B is fitted, then ``log c`` (1) when c is fitted.
    Matrix coordinates follow ``spd_param`` (see :class:`_SpdCoords`).
    """

    def __init__(self, problem: FitProblem, spd_param: str = "eigen"):
        self.problem = problem
        n = problem.n
        self._sigma = _SpdCoords(n, spd_param)
        self._b = _SpdCoords(n, spd_param)
        blocks = [("u", n)]
        if problem.constraint_mode == "full_sigma":
            blocks.append(("sigma", self._sigma.size))
        else:
            blocks.append(("log_s2", 1))
        if problem.b_mode == "rank1":
            blocks += [("log_b", 1), ("w", n)]
        elif problem.b_mode == "full":
            blocks.append(("b", self._b.size))
        if problem.has_c:
            blocks.append(("log_c", 1))
        self.blocks = blocks
        self.size = sum(k for _, k in blocks)
        self._gamma = torch.tensor(problem.observed_gamma, dtype=_DTYPE)
        self._psi = torch.tensor(problem.observed_psi, dtype=_DTYPE)

    def _split(self, theta):
        out, i = {}, 0
        for name, k in self.blocks:
            out[name] = theta[i : i + k]
            i += k
        return out

    def _constrained(self, theta):
        """Constrained tensors ``mu, sigma, sqrt_b, inv_sqrt_b, c``."""
        n = self.problem.n
        p = self._split(theta)
        mu = p["u"] / torch.linalg.vector_norm(p["u"])
        eye = torch.eye(n, dtype=theta.dtype)
        if "sigma" in p:
            sigma = self._sigma.matrix(p["sigma"])
        else:
            sigma = torch.exp(p["log_s2"][0]) * eye
        sqrt_b = inv_sqrt_b = None
        if "log_b" in p:
            b = torch.exp(p["log_b"][0])
            v = p["w"] / torch.linalg.vector_norm(p["w"])
            vv = torch.outer(v, v)
            root = torch.sqrt(1.0 + b)
            sqrt_b = eye + (root - 1.0) * vv
            inv_sqrt_b = eye + (1.0 / root - 1.0) * vv
        elif "b" in p:
            sqrt_b = self._b.matrix(p["b"], 0.5)
            inv_sqrt_b = self._b.matrix(p["b"], -0.5)
        c = torch.exp(p["log_c"][0]) if "log_c" in p else torch.zeros((), dtype=theta.dtype)
        return mu, sigma, sqrt_b, inv_sqrt_b, c

    def moments(self, theta):
        mu, sigma, sqrt_b, inv_sqrt_b, c = self._constrained(theta)
        if sqrt_b is not None:
            mu = sqrt_b @ mu
            sigma = sqrt_b @ sigma @ sqrt_b
        gamma = _t_mean_taylor(mu, sigma, c)
        sm = _t_second_moment(mu, sigma, c)
        if inv_sqrt_b is not None:
            gamma = inv_sqrt_b @ gamma
            sm = inv_sqrt_b @ sm @ inv_sqrt_b
        psi = sm - torch.outer(gamma, gamma)
        return gamma, 0.5 * (psi + psi.T)

    def torch_loss(self, theta):
        gamma, psi = self.moments(theta)
        lam = self.problem.lam
        dg = gamma - self._gamma
        dp = psi - self._psi
        return (1.0 - lam) * torch.sum(dg * dg) + lam * torch.sum(dp * dp)

    def value(self, theta) -> float:
        with torch.no_grad():
            return self.torch_loss(torch.as_tensor(np.asarray(theta, dtype=float), dtype=_DTYPE)).item()

    def value_and_grad(self, theta) -> tuple[float, np.ndarray]:
        t = torch.tensor(np.asarray(theta, dtype=float), dtype=_DTYPE, requires_grad=True)
        val = self.torch_loss(t)
        (grad,) = torch.autograd.grad(val, t)
        return val.item(), grad.numpy().copy()

    def encode(
        self,
        mu,
        sigma=None,
        sigma2: Optional[float] = None,
        b: Optional[float] = None,
        v=None,
        b_matrix=None,
        c: Optional[float] = None,
    ) -> np.ndarray:
        """Coordinates mapping onto the given constrained values.

        In ``eigen`` mode this also moves the rotation base points to the
        eigenbases of ``sigma`` and ``b_matrix``.
        """
        parts = [sphere_embed(mu)]
        if self.problem.constraint_mode == "full_sigma":
            parts.append(self._sigma.encode(sigma))
        else:
            parts.append([math.log(sigma2)])
        if self.problem.b_mode == "rank1":
            parts += [[math.log(b)], sphere_embed(v)]
        elif self.problem.b_mode == "full":
            parts.append(self._b.encode(b_matrix))
        if self.problem.has_c:
            parts.append([math.log(c)])
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])

    def decode(self, theta) -> tuple[GaussianParams, ProjectionVariant, dict]:
        t = torch.as_tensor(np.asarray(theta, dtype=float), dtype=_DTYPE)
        p = self._split(t)
        n = self.problem.n
        extras: dict = {}
        mu = sphere_embed(p["u"].numpy())
        if "sigma" in p:
            sigma = self._sigma.decode(p["sigma"])
        else:
            extras["sigma2"] = math.exp(p["log_s2"][0].item())
            sigma = extras["sigma2"] * np.eye(n)
        b_matrix = None
        if "log_b" in p:
            extras["b"] = math.exp(p["log_b"][0].item())
            extras["v"] = sphere_embed(p["w"].numpy())
            b_matrix = np.eye(n) + extras["b"] * np.outer(extras["v"], extras["v"])
        elif "b" in p:
            b_matrix = self._b.decode(p["b"])
        c = math.exp(p["log_c"][0].item()) if "log_c" in p else 0.0
        return GaussianParams(mu, sigma), ProjectionVariant(b_matrix=b_matrix, c_const=c), extras


def _check_constraints(params: GaussianParams) -> None:
    if abs(np.linalg.norm(params.mu) - 1.0) > 1e-12:
        raise ProjNormError("fitted mu left the unit sphere")


def optimize(objective: MomentObjective, theta0, config: FitConfig = FitConfig()) -> FitResult:
    """Run NAdam on the cyclic schedule and return the best iterate."""
    theta = torch.tensor(np.asarray(theta0, dtype=float), dtype=_DTYPE, requires_grad=True)
    opt = torch.optim.NAdam([theta], lr=config.lr)
    best_loss = math.inf
    best_theta = theta.detach().clone()
    trace: list[float] = []
    converged = False
    cycle_start_best = math.inf
    it = 0
    for it in range(config.total_iterations):
        for group in opt.param_groups:
            group["lr"] = lr_schedule(it, config)
        opt.zero_grad()
        val = objective.torch_loss(theta)
        value = val.item()
        if not math.isfinite(value):
            raise NonFiniteLossError(
                f"loss became {value} at iteration {it}", it, theta.detach().numpy().copy()
            )
        if value < best_loss:
            best_loss = value
            best_theta = theta.detach().clone()
        trace.append(best_loss)
        if config.check_constraints:
            _check_constraints(objective.decode(theta.detach().numpy())[0])
        val.backward()
        opt.step()
        if (it + 1) % config.iters_per_cycle == 0:
            # a flat best-so-far only counts when the iterate also sits at it;
            # otherwise the optimizer is still bouncing and later, smaller
            # steps can make progress
            scale = max(abs(cycle_start_best), 1e-300)
            if (
                abs(cycle_start_best - best_loss) / scale < config.tol
                and abs(value - best_loss) / scale < config.tol
            ):
                converged = True
                break
            cycle_start_best = best_loss
    last = objective.value(theta.detach().numpy())
    if math.isfinite(last) and last < best_loss:
        best_loss = last
        best_theta = theta.detach().clone()
        trace.append(best_loss)
    if config.refine_iters > 0:
        res = minimize(
            objective.value_and_grad,
            best_theta.numpy(),
            jac=True,
            method="L-BFGS-B",
            options=dict(maxiter=config.refine_iters, ftol=0.0, gtol=0.0),
        )
        if math.isfinite(res.fun) and res.fun < best_loss:
            best_loss = float(res.fun)
            best_theta = torch.as_tensor(res.x, dtype=_DTYPE)
            trace.append(best_loss)
    params, variant, extras = objective.decode(best_theta.numpy())
    return FitResult(
        params_hat=params,
        variant_hat=variant,
        final_loss=best_loss,
        loss_trace=trace,
        iterations=it + 1,
        converged=converged,
        extras=extras,
    )


def initial_point(problem: FitProblem, config: FitConfig = FitConfig()) -> dict:
    """Starting constrained values built from the observed moments.

    ``mu`` starts at ``gamma / |gamma|`` and full ``Sigma`` at the observed
    covariance.  With isotropic ``Sigma`` and rank-one ``B``:
    ``sigma^2 = tr(Psi) / n``, ``v`` is the eigenvector of the smallest
    eigenvalue of ``Psi``, ``mu`` is ``B^{1/2} gamma / |gamma|`` put back
    on the sphere, and ``c = E|x|^2`` under the starting parameters.
    """
    n = problem.n
    gamma, psi = problem.observed_gamma, problem.observed_psi
    direction = sphere_embed(gamma)
    init: dict = {"mu": direction}
    if problem.constraint_mode == "full_sigma":
        init["sigma"] = psi
        trace_sigma = float(np.trace(psi))
    else:
        init["sigma2"] = float(np.trace(psi) / n)
        trace_sigma = n * init["sigma2"]
    if problem.b_mode == "rank1":
        v = np.linalg.eigh(psi)[1][:, 0]
        b = config.b_init
        init["b"], init["v"] = b, v
        sqrt_b = np.eye(n) + (math.sqrt(1.0 + b) - 1.0) * np.outer(v, v)
        init["mu"] = sphere_embed(sqrt_b @ direction)
    elif problem.b_mode == "full":
        init["b_matrix"] = np.eye(n)
    if problem.has_c:
        init["c"] = trace_sigma + 1.0
    return init


def fit(problem: FitProblem, config: FitConfig = FitConfig(), init: Optional[dict] = None) -> FitResult:
    """Moment-matching fit for any supported variant and constraint set."""
    objective = MomentObjective(problem, config.spd_param)
    init = init or initial_point(problem, config)
    return optimize(objective, objective.encode(**init), config)


def fit_pn(problem: FitProblem, config: FitConfig = FitConfig()) -> FitResult:
    if problem.variant_kind != "PN" or problem.constraint_mode != "full_sigma":
        raise ProjNormError("fit_pn needs variant PN with a full covariance")
    return fit(problem, config)


def fit_pnbc(problem: FitProblem, config: FitConfig = FitConfig()) -> FitResult:
    if (
        problem.variant_kind != "PN_Bc"
        or problem.constraint_mode != "isotropic_sigma"
        or problem.b_mode != "rank1"
    ):
        raise ProjNormError("fit_pnbc needs variant PN_Bc, isotropic Sigma and rank-one B")
    return fit(problem, config)


def with_lambda(problem: FitProblem, lam: float) -> FitProblem:
    return replace(problem, lam=lam)

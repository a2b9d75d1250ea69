import math

import numpy as np
import pytest

from projnorm.core import GaussianParams, ProjNormError, ProjectionVariant, check_spd
from projnorm.fit import (
    FitConfig,
    FitProblem,
    MomentObjective,
    fit_pn,
    fit_pnbc,
    initial_point,
    loss,
    lr_schedule,
    sphere_embed,
    spd_embed,
    spd_log,
    with_lambda,
)
from projnorm.moments import approx_moments
from projnorm.sampling import make_rng, sample_b, sample_c, sample_mu, sample_sigma

from conftest import random_params, random_spd

# (variant_kind, constraint_mode, b_mode) combinations the objective supports
SETUPS = [
    ("PN", "full_sigma", "none"),
    ("PN", "isotropic_sigma", "none"),
    ("PN_c", "full_sigma", "none"),
    ("PN_c", "isotropic_sigma", "none"),
    ("PN_B", "isotropic_sigma", "rank1"),
    ("PN_B", "full_sigma", "full"),
    ("PN_Bc", "isotropic_sigma", "rank1"),
    ("PN_Bc", "full_sigma", "rank1"),
    ("PN_Bc", "full_sigma", "full"),
]


def observed(n, seed):
    rng = make_rng(seed, 99)
    p = GaussianParams(sample_mu(n, rng), sample_sigma(n, 0.5, rng))
    return approx_moments(p, ProjectionVariant(b_matrix=sample_b(n, rng), c_const=sample_c(p, rng)))


def random_candidate(obj, rng):
    """Coordinates of a random constrained candidate, with random base rotations."""
    prob, n = obj.problem, obj.problem.n
    kw = dict(mu=rng.standard_normal(n), sigma=random_spd(n, rng, 0.2), sigma2=0.05 + 0.3 * rng.random())
    if prob.b_mode == "rank1":
        kw.update(b=1.0 + 3.0 * rng.random(), v=rng.standard_normal(n))
    elif prob.b_mode == "full":
        kw.update(b_matrix=random_spd(n, rng))
    if prob.has_c:
        kw.update(c=0.2 + rng.random())
    theta = obj.encode(**kw)
    # move off the base point so the rotation coordinates are exercised
    return theta + 0.05 * rng.standard_normal(theta.shape)


def central_difference(f, theta, h=1e-5):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def grad_rel_error(obj, theta):
    _, g = obj.value_and_grad(theta)
    fd = central_difference(obj.value, theta)
    return np.linalg.norm(g - fd) / np.linalg.norm(fd)


def test_lr_schedule_examples():
    assert lr_schedule(0) == pytest.approx(0.4)
    assert lr_schedule(5) == pytest.approx(0.34)
    assert lr_schedule(80) == pytest.approx(0.34)
    assert lr_schedule(85) == pytest.approx(0.4 * 0.85**2)
    assert lr_schedule(959) == pytest.approx(0.4 * 0.85**11 * 0.85**15)
    with pytest.raises(ProjNormError):
        lr_schedule(960)
    assert FitConfig().total_iterations == 960


def test_embeddings():
    assert np.allclose(sphere_embed([3.0, 4.0]), [0.6, 0.8])
    with pytest.raises(ProjNormError):
        sphere_embed([0.0, 0.0])
    assert np.allclose(spd_embed(np.zeros((2, 2))), np.eye(2))
    assert np.allclose(spd_embed(np.diag([math.log(2), math.log(5)])), np.diag([2.0, 5.0]))
    m = random_spd(4, make_rng(0))
    assert np.allclose(spd_embed(spd_log(m)), m, atol=1e-12)


def test_loss_examples():
    p = GaussianParams([1.0, 0.0], np.diag([0.1, 0.2]))
    m = approx_moments(p)
    exact = FitProblem(m.gamma, m.psi)
    assert loss(p, ProjectionVariant(), exact) == pytest.approx(0.0, abs=1e-30)
    # gamma~ - gamma = (0.1, 0), Psi~ - Psi = 0.1 I
    shifted = FitProblem(m.gamma - [0.1, 0.0], m.psi - 0.1 * np.eye(2), lam=0.9)
    assert loss(p, ProjectionVariant(), shifted) == pytest.approx(0.019, rel=1e-12)
    # with lam = 0 only the mean term remains
    only_mean = FitProblem(m.gamma - [0.1, 0.0], np.zeros((2, 2)), lam=0.0)
    assert loss(p, ProjectionVariant(), only_mean) == pytest.approx(0.01, rel=1e-12)


def test_problem_validation():
    with pytest.raises(ProjNormError):
        FitProblem(np.zeros(2), np.eye(3))
    with pytest.raises(ProjNormError):
        FitProblem(np.zeros(2), np.eye(2), lam=1.5)
    with pytest.raises(ProjNormError):
        FitProblem(np.zeros(2), np.eye(2), variant_kind="PN_B")
    with pytest.raises(ProjNormError):
        fit_pn(FitProblem(np.ones(2), np.eye(2), variant_kind="PN_c"))
    with pytest.raises(ProjNormError):
        fit_pnbc(FitProblem(np.ones(2), np.eye(2)))
    assert with_lambda(FitProblem(np.ones(2), np.eye(2)), 0.66).lam == 0.66


@pytest.mark.parametrize("setup", SETUPS, ids=["-".join(s) for s in SETUPS])
@pytest.mark.parametrize("spd_param", ["eigen", "expm"])
def test_gradient_matches_finite_differences(setup, spd_param):
    kind, mode, b_mode = setup
    rng = make_rng(SETUPS.index(setup), 1)
    for n in (2, 4):
        m = observed(n, n)
        obj = MomentObjective(FitProblem(m.gamma, m.psi, kind, mode, b_mode), spd_param)
        theta = random_candidate(obj, rng)
        assert grad_rel_error(obj, theta) < 1e-4


@pytest.mark.parametrize("setup", SETUPS, ids=["-".join(s) for s in SETUPS])
def test_torch_loss_matches_numpy(setup):
    kind, mode, b_mode = setup
    m = observed(3, 5)
    prob = FitProblem(m.gamma, m.psi, kind, mode, b_mode)
    obj = MomentObjective(prob)
    theta = random_candidate(obj, make_rng(5))
    params, variant, _ = obj.decode(theta)
    assert obj.value(theta) == pytest.approx(loss(params, variant, prob), rel=1e-10)


@pytest.mark.parametrize("setup", SETUPS, ids=["-".join(s) for s in SETUPS])
def test_encode_decode_round_trip(setup):
    kind, mode, b_mode = setup
    m = observed(3, 6)
    obj = MomentObjective(FitProblem(m.gamma, m.psi, kind, mode, b_mode))
    init = initial_point(obj.problem)
    params, variant, extras = obj.decode(obj.encode(**init))
    assert np.allclose(params.mu, init["mu"], atol=1e-12)
    if "sigma" in init:
        assert np.allclose(params.sigma, init["sigma"], atol=1e-12)
    else:
        assert extras["sigma2"] == pytest.approx(init["sigma2"])
    if "c" in init:
        assert variant.c_const == pytest.approx(init["c"])


def test_joint_scaling_invariance():
    # (k mu, k^2 Sigma) and (mu, Sigma) give the same loss; the sphere
    # embedding removes k before the moments are computed
    m = observed(4, 1)
    prob = FitProblem(m.gamma, m.psi)
    p = random_params(4, 0.7, seed=3)
    base = loss(p, ProjectionVariant(), prob)
    obj = MomentObjective(prob, "expm")
    for k in (0.3, 2.0, 11.0):
        scaled = GaussianParams(k * p.mu, k * k * p.sigma)
        assert loss(scaled, ProjectionVariant(), prob) == pytest.approx(base, rel=1e-10)
        theta = np.concatenate([k * p.mu, spd_log(p.sigma).ravel()])
        assert obj.value(theta) == pytest.approx(base, rel=1e-10)


def test_initial_point_pnbc():
    m = observed(4, 2)
    prob = FitProblem(m.gamma, m.psi, "PN_Bc", "isotropic_sigma", "rank1")
    init = initial_point(prob)
    assert init["sigma2"] == pytest.approx(np.trace(m.psi) / 4)
    vals, vecs = np.linalg.eigh(m.psi)
    assert abs(init["v"] @ vecs[:, 0]) == pytest.approx(1.0)
    assert np.linalg.norm(init["mu"]) == pytest.approx(1.0)
    assert init["c"] == pytest.approx(np.trace(m.psi) + 1.0)


@pytest.fixture(scope="module")
def pn_run():
    rng = make_rng(31)
    p = GaussianParams(sample_mu(3, rng), sample_sigma(3, 0.25, rng))
    m = approx_moments(p)
    prob = FitProblem(m.gamma, m.psi)
    return p, prob, fit_pn(prob, FitConfig(check_constraints=True))


class TestFitRuns:
    def test_constraints(self, pn_run):
        _, _, res = pn_run
        assert abs(np.linalg.norm(res.params_hat.mu) - 1.0) < 1e-12
        check_spd(res.params_hat.sigma)

    def test_trace_and_best(self, pn_run):
        _, prob, res = pn_run
        init = initial_point(prob)
        start = loss(GaussianParams(init["mu"], init["sigma"]), ProjectionVariant(), prob)
        assert res.final_loss <= start
        assert res.loss_trace[-1] == res.final_loss
        assert all(a >= b for a, b in zip(res.loss_trace, res.loss_trace[1:]))
        assert res.final_loss == pytest.approx(loss(res.params_hat, res.variant_hat, prob), rel=1e-9)
        assert res.iterations <= 960

    def test_recovers_direction(self, pn_run):
        p, _, res = pn_run
        assert res.params_hat.mu @ p.mu > 0.99

    def test_deterministic(self, pn_run):
        _, prob, res = pn_run
        again = fit_pn(prob, FitConfig(check_constraints=True))
        assert again.final_loss == res.final_loss
        assert np.array_equal(again.params_hat.sigma, res.params_hat.sigma)


def _axis_problem():
    # B = I + b e1 e1^T, mu in the (e1, e2) plane, isotropic Sigma
    n, b = 3, 3.0
    bm = np.eye(n)
    bm[0, 0] += b
    mu = np.array([math.cos(0.9), math.sin(0.9), 0.0])
    m = approx_moments(GaussianParams(mu, 0.05 * np.eye(n)), ProjectionVariant(b_matrix=bm, c_const=0.5))
    return b, FitProblem(m.gamma, m.psi, "PN_Bc", "isotropic_sigma", "rank1")


def test_rank1_axis_recovery():
    b, prob = _axis_problem()
    res = fit_pnbc(prob)
    assert res.extras["b"] == pytest.approx(b, rel=1e-3)
    assert abs(res.extras["v"][0]) == pytest.approx(1.0, abs=1e-6)
    assert res.final_loss < 1e-12


def test_schedule_alone_is_coarser():
    # without the L-BFGS polish the NAdam schedule gets close to the
    # optimum but its step size limits the final precision
    b, prob = _axis_problem()
    res = fit_pnbc(prob, FitConfig(refine_iters=0))
    assert res.extras["b"] == pytest.approx(b, rel=0.1)
    assert abs(res.extras["v"][0]) > 0.99
    assert res.final_loss > fit_pnbc(prob).final_loss


def test_nonfinite_loss_reported():
    from projnorm.fit import NonFiniteLossError, optimize

    m = observed(2, 0)
    obj = MomentObjective(FitProblem(m.gamma, m.psi))
    theta = obj.encode(mu=[1.0, 0.0], sigma=np.eye(2))
    theta[0] = np.nan
    with pytest.raises(NonFiniteLossError) as err:
        optimize(obj, theta, FitConfig(cycles=1))
    assert err.value.iteration == 0


def test_config_from_dict():
    cfg = FitConfig.from_dict({"cycles": 2, "lr": 0.1, "spd_param": "expm"})
    assert (cfg.cycles, cfg.lr, cfg.spd_param) == (2, 0.1, "expm")

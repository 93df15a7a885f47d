import numpy as np
import pytest

from chol_diff import chol
from elliptical import DomainError, EllipticalFamily
from likelihood import FitError, FitResult, fit_mle, loglik, score
from model import (Dataset, HypothesisSpec, ParameterVector, mu_d2theta, mu_dtheta, mu_of,
                   omega_all, omega_d2theta, omega_dtheta)
from skovgaard import (FLAG_LR_NEAR_ZERO, FLAG_RHO, adjusted_statistics, ancillary, lr_test,
                       sample_space_derivs, sample_space_terms)
from support import central_diff, murray_dchol, nearby, rel_err


def as_fit(theta: ParameterVector) -> FitResult:
    return FitResult(theta, 0.0, 0.0, np.eye(theta.dims.s), 0, True)


def z_through(ref: ParameterVector, a, data, fam):
    P = chol(omega_all(ref, data, fam))
    return np.einsum("iab,ib->ia", P, a) + mu_of(ref)


# -------------------------
# Ancillary statistic
# -------------------------
def test_ancillary_is_zero_at_the_location():
    theta = ParameterVector.pack([[0.5]], [1.0], [-2.0], [[2.0]], [[3.0]])
    n = 4
    z = np.tile(mu_of(theta), (n, 1))
    data = Dataset(z, [[0.2]] * n, [[0.0]] * n, [[0.3]] * n, 1, 1)
    anc = ancillary(as_fit(theta), data, EllipticalFamily())
    assert np.allclose(anc.a, 0.0)


def test_ancillary_scalar_scaling():
    theta = ParameterVector.pack([[0.0]], [0.0], [0.0], [[4.0]], [[4.0]])
    n = 3
    data = Dataset(np.full((n, 2), 3.0), [[0.0]] * n, [[0.0]] * n, [[0.0]] * n, 1, 1)
    anc = ancillary(as_fit(theta), data, EllipticalFamily())
    assert np.allclose(anc.a, 1.5)


def test_ancillary_reconstructs_data(sim_data, family):
    data, truth = sim_data(family.kind, family.shape, m=1, p=2, n=25, seed=4)
    fit = as_fit(nearby(np.random.default_rng(4), truth, 0.2))
    anc = ancillary(fit, data, family)
    assert np.allclose(anc.reconstruct(), data.z, atol=1e-10)


def test_ancillary_needs_a_converged_fit(sim_data):
    data, truth = sim_data(n=10)
    fit = as_fit(truth)
    fit.converged = False
    with pytest.raises(ValueError):
        ancillary(fit, data, EllipticalFamily())


# -------------------------
# Sample-space derivatives
# -------------------------
@pytest.mark.parametrize("m,p", [(1, 1), (1, 2), (2, 1)])
def test_sample_space_derivatives_match_finite_differences(sim_data, family, m, p):
    rng = np.random.default_rng(m * 10 + p)
    data, truth = sim_data(family.kind, family.shape, m=m, p=p, n=15, seed=8)
    fam = family.with_dim(m + p)
    theta_hat = nearby(rng, truth, 0.1)
    theta_eval = nearby(rng, theta_hat, 0.1)
    fit = as_fit(theta_hat)
    anc = ancillary(fit, data, fam)

    ell, U, J_bar = sample_space_derivs(theta_eval, fit, anc, data, fam)

    def ell_at(ref):
        z = z_through(theta_hat.with_theta(ref), anc.a, data, fam)
        return loglik(theta_eval, data.with_z(z, check=False), fam)

    def score_at(ref):
        z = z_through(theta_hat.with_theta(ref), anc.a, data, fam)
        return score(theta_eval, data.with_z(z, check=False), fam)

    assert rel_err(ell, central_diff(ell_at, theta_hat.theta, h=1e-6)) < 1e-5
    assert rel_err(U, central_diff(score_at, theta_hat.theta, h=1e-6)) < 1e-4
    assert rel_err(J_bar, central_diff(score_at, theta_eval.theta, h=1e-6)) < 1e-4


def test_J_bar_equals_U_prime_at_the_fit(sim_data):
    data, truth = sim_data(m=1, p=1, n=20, seed=12)
    fam = EllipticalFamily()
    fit = fit_mle(data, fam)
    anc = ancillary(fit, data, fam)
    _, U, J_bar = sample_space_derivs(fit.theta_hat, fit, anc, data, fam)
    assert np.allclose(U, J_bar, atol=1e-10)


def test_normal_curvature_part_vanishes(sim_data):
    data, truth = sim_data(m=1, p=2, n=20, seed=13)
    fam = EllipticalFamily().with_dim(3)
    rng = np.random.default_rng(13)
    fit = as_fit(nearby(rng, truth, 0.1))
    anc = ancillary(fit, data, fam)
    frame = (anc.factor, anc.dfactor, anc.mu, anc.dmu)
    _, curvature, weighted = sample_space_terms(nearby(rng, truth, 0.1), frame, anc.a, data, fam)
    assert np.all(curvature == 0.0)
    assert np.any(weighted != 0.0)

    t_fam = EllipticalFamily("student_t", 5.0).with_dim(3)
    _, curvature, _ = sample_space_terms(fit.theta_hat, frame, anc.a, data, t_fam)
    assert np.any(curvature != 0.0)


def test_sample_space_derivative_at_a_power_exponential_cusp():
    theta = ParameterVector.pack([[0.5]], [1.0], [-2.0], [[2.0]], [[3.0]])
    fam = EllipticalFamily("power_exponential", 0.6)
    z = np.tile(mu_of(theta), (3, 1))
    z[1:] += np.array([[0.7, -0.4], [-1.1, 0.9]])
    data = Dataset(z, [[0.2]] * 3, [[0.0]] * 3, [[0.3]] * 3, 1, 1)
    fit = as_fit(theta)
    anc = ancillary(fit, data, fam)
    with pytest.raises(DomainError):
        sample_space_derivs(theta, fit, anc, data, fam)


# -------------------------
# log rho against a block-matrix assembly
# -------------------------
def _frame(theta, data, fam):
    om = omega_all(theta, data, fam)
    P = [np.linalg.cholesky(o) for o in om]
    dO = omega_dtheta(theta, fam)
    dP = [[murray_dchol(P[i], dO[j]) for j in range(theta.dims.s)] for i in range(data.n)]
    return P, dP, mu_of(theta), mu_dtheta(theta)


def _blocks(theta_eval, z, frame, a, data, fam):
    """Block matrices of the likelihood and sample-space derivatives, written out per element."""
    n, s = data.n, theta_eval.dims.s
    _, dP_ref, _, dmu_ref = frame
    om = omega_all(theta_eval, data, fam)
    dO, d2O = omega_dtheta(theta_eval, fam), omega_d2theta(theta_eval, fam)
    dmu, d2mu = mu_dtheta(theta_eval), mu_d2theta(theta_eval)
    mu = mu_of(theta_eval)

    R, V = np.zeros((s * n, s)), np.zeros((s * n, s))
    h, w = np.zeros(s * n), np.zeros(s * n)
    T = np.zeros((s, s))
    B, C, M, Q = (np.zeros((s * n, s)) for _ in range(4))
    nstar = np.zeros(s)
    for i in range(n):
        A = np.linalg.inv(om[i])
        d = z[i] - mu
        u = d @ A @ d
        r, v = fam.W(u), fam.W_prime(u)
        g = [dP_ref[i][j] @ a[i] + dmu_ref[j] for j in range(s)]
        hi = [-d @ A @ dO[j] @ A @ d - 2 * dmu[j] @ A @ d for j in range(s)]
        wi = [g[j] @ A @ d for j in range(s)]
        for j in range(s):
            R[j * n + i, j] = r
            V[j * n + i, j] = v
            h[j * n + i] = hi[j]
            w[j * n + i] = wi[j]
            nstar[j] += np.trace(A @ dO[j])
            for k in range(s):
                T[j, k] += np.trace(A @ d2O[j, k]) - np.trace(A @ dO[j] @ A @ dO[k])
                B[j * n + i, k] = hi[j] * hi[k]
                C[j * n + i, k] = wi[k] * hi[j]
                M[j * n + i, k] = (d @ (2 * A @ dO[k] @ A @ dO[j] @ A - A @ d2O[j, k] @ A) @ d
                                   + 2 * dmu[k] @ A @ dO[j] @ A @ d + 2 * dmu[j] @ A @ dO[k] @ A @ d
                                   - 2 * d2mu[j, k] @ A @ d + 2 * dmu[j] @ A @ dmu[k])
                Q[j * n + i, k] = -g[k] @ A @ dO[j] @ A @ d - dmu[j] @ A @ g[k]
    return {
        "U": -0.5 * nstar + R.T @ h,
        "J": 0.5 * T - R.T @ M - V.T @ B,
        "ell": 2 * R.T @ w,
        "Up": 2 * (R.T @ Q + V.T @ C),
    }


def block_log_rho(report, data, fam):
    hyp = report.hypothesis
    theta_h, theta_t = report.fit_hat.theta_hat, report.fit_tilde.theta_hat
    hat = _frame(theta_h, data, fam)
    tilde = _frame(theta_t, data, fam)
    a = np.stack([np.linalg.solve(hat[0][i], data.z[i] - hat[2]) for i in range(data.n)])
    z_t = np.stack([tilde[0][i] @ a[i] + tilde[2] for i in range(data.n)])

    at_hat = _blocks(theta_h, data.z, hat, a, data, fam)
    at_tilde = _blocks(theta_t, data.z, hat, a, data, fam)
    bar = _blocks(theta_t, z_t, tilde, a, data, fam)

    om = hyp.omega_indices(data.dims)
    oo = np.ix_(om, om)
    J_bar, U_t, Up_t = bar["Up"], at_tilde["U"], at_tilde["Up"]
    lr = 2 * (report.fit_hat.loglik - report.fit_tilde.loglik)
    q = hyp.q
    return (0.5 * np.log(np.linalg.det(at_hat["J"]))
            - np.log(np.linalg.det(Up_t))
            + 0.5 * np.log(np.linalg.det(at_tilde["J"][oo]))
            - 0.5 * np.log(np.linalg.det(J_bar[oo]))
            + 0.5 * np.log(np.linalg.det(J_bar))
            + 0.5 * q * np.log(U_t @ np.linalg.inv(J_bar) @ U_t)
            - (0.5 * q - 1) * np.log(lr)
            - np.log((at_hat["ell"] - at_tilde["ell"]) @ np.linalg.inv(Up_t) @ U_t))


@pytest.mark.parametrize("kind,shape", [("normal", None), ("student_t", 5.0)])
def test_log_rho_matches_block_matrix_assembly(sim_data, kind, shape):
    fam = EllipticalFamily(kind, shape, 2)
    hyp = HypothesisSpec.from_pairs({0: 0.0})
    checked = 0
    for seed in range(10):
        data, _ = sim_data(kind, shape, m=1, p=1, n=10, seed=100 + seed, eta=0.5)
        try:
            report = lr_test(data, fam, hyp)
        except FitError:
            continue
        if report.flags & {FLAG_RHO, FLAG_LR_NEAR_ZERO}:
            continue
        assert abs(report.log_rho - block_log_rho(report, data, fam)) < 1e-9
        checked += 1
    assert checked >= 5


# -------------------------
# Statistics
# -------------------------
def test_adjusted_statistics_arithmetic():
    lr_star, lr_dstar = adjusted_statistics(5.0, 0.5)
    assert np.isclose(lr_star, 4.05)
    assert np.isclose(lr_dstar, 4.0)
    assert adjusted_statistics(3.2, 0.0) == (3.2, 3.2)


def test_unbinding_constraint_is_flagged(sim_data):
    data, _ = sim_data(m=1, p=1, n=30, seed=21)
    fam = EllipticalFamily()
    fit = fit_mle(data, fam)
    hyp = HypothesisSpec.from_pairs({0: float(fit.theta_hat.theta[0])})
    report = lr_test(data, fam, hyp, fit_hat=fit)
    assert report.lr < 1e-10
    assert FLAG_LR_NEAR_ZERO in report.flags
    assert report.log_rho == 0.0
    assert report.lr_star == report.lr and report.lr_dstar == report.lr


@pytest.mark.parametrize("kind,shape", [("normal", None), ("student_t", 5.0), ("power_exponential", 0.6)])
def test_report_invariants(sim_data, kind, shape):
    fam = EllipticalFamily(kind, shape)
    hyp = HypothesisSpec.from_pairs({0: 0.0, 1: 0.0})
    for seed in range(4):
        data, _ = sim_data(kind, shape, m=1, p=2, n=20, seed=40 + seed, eta=0.0)
        try:
            report = lr_test(data, fam, hyp)
        except FitError:
            continue
        assert report.lr >= 0 and report.lr_star >= 0
        assert all(0.0 <= pv <= 1.0 for pv in report.pvalues)
        assert report.q == 2
        if report.lr > 0:
            bound = report.log_rho ** 2 / report.lr
            assert abs(report.lr_star - report.lr_dstar) <= bound * (1 + 1e-9) + 1e-12
        d = report.to_dict()
        assert set(d) >= {"lr", "log_rho", "lr_star", "lr_dstar", "q", "pvalues", "flags"}


def test_translation_equivariance(sim_data):
    data, _ = sim_data(m=1, p=2, n=25, seed=31, eta=0.3)
    fam = EllipticalFamily("student_t", 5.0)
    hyp = HypothesisSpec.from_pairs({0: 0.0})
    shifted = data.with_z(data.z + np.array([3.0, 0.0, 0.0]))
    r1 = lr_test(data, fam, hyp)
    r2 = lr_test(shifted, fam, hyp)
    t1, t2 = r1.fit_hat.theta_hat, r2.fit_hat.theta_hat
    assert np.allclose(t2.alpha, t1.alpha + 3.0, atol=1e-6)
    assert np.allclose(t2.beta, t1.beta, atol=1e-6)
    assert r1.flags == r2.flags
    for name in ("lr", "log_rho", "lr_star", "lr_dstar"):
        assert abs(getattr(r1, name) - getattr(r2, name)) < 1e-6


def test_fits_feeding_lr_are_local_optima(sim_data):
    data, _ = sim_data(m=1, p=1, n=40, seed=17, eta=1.2)
    fam = EllipticalFamily()
    hyp = HypothesisSpec.from_pairs({0: 1.0})
    report = lr_test(data, fam, hyp)
    rng = np.random.default_rng(0)
    for fit in (report.fit_hat, report.fit_tilde):
        free = fit.free_indices
        for _ in range(40):
            step = np.zeros(fit.theta_hat.dims.s)
            step[free] = rng.normal(0, 1e-3, free.size)
            assert loglik(fit.theta_hat.with_theta(fit.theta_hat.theta + step), data, fam) <= fit.loglik + 1e-9
    assert np.isclose(report.lr, 2 * (report.fit_hat.loglik - report.fit_tilde.loglik))
    assert report.fit_tilde.theta_hat.theta[0] == 1.0


def dispersed_start(rng, data):
    y, x = data.y[:, 0], data.x[:, 0]
    return ParameterVector.pack([[rng.uniform(-2.0, 3.0)]], [y.mean() + rng.normal(0, 2.0)],
                                [x.mean() + rng.normal(0, 2.0)],
                                [[y.var() * rng.uniform(0.3, 3.0)]],
                                [[x.var() * rng.uniform(0.3, 3.0)]])


def test_fits_feeding_lr_are_global_optima(sim_data):
    data, _ = sim_data(m=1, p=1, n=40, seed=17, eta=1.2)
    fam = EllipticalFamily()
    hyp = HypothesisSpec.from_pairs({0: 1.0})
    report = lr_test(data, fam, hyp)
    ll_hat, ll_tilde = report.fit_hat.loglik, report.fit_tilde.loglik

    beta_hat = report.fit_hat.theta_hat.theta[0]
    profile = []
    for b in np.concatenate([beta_hat + np.linspace(-1.5, 1.5, 13), [1.0]]):
        try:
            value = fit_mle(data, fam, constraint=HypothesisSpec.from_pairs({0: float(b)})).loglik
        except FitError as e:
            value = e.result.loglik
        profile.append(value)
        assert value <= ll_hat + 1e-6
    assert abs(profile[-1] - ll_tilde) < 1e-6
    assert abs(profile[6] - ll_hat) < 1e-6 and int(np.argmax(profile[:13])) == 6

    rng = np.random.default_rng(3)
    best_hat, best_tilde = -np.inf, -np.inf
    for _ in range(12):
        start = dispersed_start(rng, data)
        try:
            best_hat = max(best_hat, fit_mle(data, fam, init=start).loglik)
            best_tilde = max(best_tilde, fit_mle(data, fam, init=start, constraint=hyp).loglik)
        except FitError:
            continue
    assert np.isfinite(best_hat) and np.isfinite(best_tilde)
    assert best_hat <= ll_hat + 1e-6 and best_tilde <= ll_tilde + 1e-6
    assert abs(best_hat - ll_hat) < 1e-3 and abs(best_tilde - ll_tilde) < 1e-3
    assert abs(2 * (best_hat - best_tilde) - report.lr) < 1e-3

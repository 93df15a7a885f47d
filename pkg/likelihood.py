# likelihood.py
"""
Log-likelihood, analytic score, observed information and maximum likelihood
fitting (unconstrained, or with psi = vec(beta)[idx] pinned at psi0).

All per-observation terms are accumulated with einsum over the observation
axis, so reduction order is fixed and results do not depend on threading.
"""
import os
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize

from chol_diff import NotPositiveDefiniteError, chol
from elliptical import DomainError, EllipticalFamily
from model import (Dataset, HypothesisSpec, ParameterVector, mu_d2theta, mu_dtheta,
                   mu_of, omega_all, omega_d2theta, omega_dtheta)

MAX_ITER = int(os.environ.get("EIV_MAX_ITER", 500))
SCORE_TOL = float(os.environ.get("EIV_SCORE_TOL", 1e-8))
FTOL = float(os.environ.get("EIV_FTOL", 1e-12))
POLISH_ITER = 25
EIG_FLOOR = float(os.environ.get("EIV_EIG_FLOOR", 1e-3))
COND_LIMIT = 1e12


class FitError(RuntimeError):
    """Optimizer did not converge; `result` holds the best iterate."""

    def __init__(self, message: str, result: "FitResult" = None):
        super().__init__(message)
        self.result = result


@dataclass
class FitResult:
    theta_hat: ParameterVector
    loglik: float
    score_norm: float
    observed_info: np.ndarray
    iterations: int
    converged: bool
    constrained: Optional[HypothesisSpec] = None
    warnings: List[str] = field(default_factory=list)
    message: str = ""

    @property
    def free_indices(self) -> np.ndarray:
        dims = self.theta_hat.dims
        if self.constrained is None:
            return np.arange(dims.s)
        return self.constrained.omega_indices(dims)

    def to_dict(self) -> dict:
        out = {
            "theta": self.theta_hat.to_dict(),
            "loglik": self.loglik,
            "score_norm": self.score_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "warnings": list(self.warnings),
            "message": self.message,
        }
        if self.constrained is not None:
            out["constraint"] = {"psi_indices": list(self.constrained.psi_indices),
                                 "psi0": list(self.constrained.psi0)}
        return out


@dataclass
class LikelihoodTerms:
    """Quantities shared by loglik, score and information at one theta."""
    theta: ParameterVector
    family: EllipticalFamily
    omega: np.ndarray      # (n, k, k)
    factor: np.ndarray     # (n, k, k) lower Cholesky factors
    oinv: np.ndarray       # (n, k, k)
    d: np.ndarray          # (n, k) z_i - mu
    av: np.ndarray         # (n, k) Omega_i^{-1} d_i
    u: np.ndarray          # (n,) d_i' Omega_i^{-1} d_i
    logdet: np.ndarray     # (n,)
    dmu: np.ndarray        # (s, k)
    domega: np.ndarray     # (s, k, k)


def evaluate(theta: ParameterVector, data: Dataset, family: EllipticalFamily) -> LikelihoodTerms:
    fam = family.with_dim(data.m + data.p)
    omega = omega_all(theta, data, fam)
    try:
        L = chol(omega)
    except NotPositiveDefiniteError as e:
        raise NotPositiveDefiniteError(f"Omega_{e.index} not positive definite at theta",
                                       index=e.index, pivot=e.pivot)
    linv = np.linalg.inv(L)
    oinv = np.einsum("iba,ibc->iac", linv, linv)
    d = data.z - mu_of(theta)[None, :]
    av = np.einsum("iab,ib->ia", oinv, d)
    u = np.maximum(np.einsum("ia,ia->i", d, av), 0.0)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    return LikelihoodTerms(theta, fam, omega, L, oinv, d, av, u, logdet,
                           mu_dtheta(theta), omega_dtheta(theta, fam))


def loglik_from_terms(t: LikelihoodTerms) -> float:
    return float(np.sum(-0.5 * t.logdet + t.family.log_p0(t.u)))


def u_derivatives(t: LikelihoodTerms):
    """h_ij = d u_i / d theta_j, and c_ij = Omega_j Omega_i^{-1} d_i."""
    c = np.einsum("jab,ib->ija", t.domega, t.av)
    h = -np.einsum("ija,ia->ij", c, t.av) - 2.0 * t.av @ t.dmu.T
    return h, c


def generator_weights(t: LikelihoodTerms):
    """
    (W(u_i), at_cusp). Rows with u_i = 0 where W is unbounded (power
    exponential with lambda < 1) get weight 0; their u-gradient is 0 too,
    so W(u_i) h_i -> 0 there.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        r = t.family.W(t.u)
    cusp = ~np.isfinite(r)
    return np.where(cusp, 0.0, r), cusp


def check_no_cusp(t: LikelihoodTerms, what: str = "observed information"):
    _, cusp = generator_weights(t)
    if cusp.any():
        i = int(np.flatnonzero(cusp)[0])
        raise DomainError(f"{what} is unbounded: observation {i} sits at the location and "
                          f"W(0) is infinite for {t.family.label}")


def score_from_terms(t: LikelihoodTerms) -> np.ndarray:
    h, _ = u_derivatives(t)
    r, _ = generator_weights(t)
    trace = np.einsum("iab,jba->ij", t.oinv, t.domega)
    return np.sum(-0.5 * trace + r[:, None] * h, axis=0)


def info_from_terms(t: LikelihoodTerms) -> np.ndarray:
    fam = t.family
    check_no_cusp(t)
    r, v = fam.W(t.u), fam.W_prime(t.u)
    d2om = omega_d2theta(t.theta, fam)
    d2mu = mu_d2theta(t.theta)
    h, c = u_derivatives(t)

    B = np.einsum("iab,jbc->ijac", t.oinv, t.domega)
    tr1 = np.einsum("ijab,ikba->jk", B, B)
    tr2 = np.einsum("ab,jkba->jk", t.oinv.sum(axis=0), d2om)

    e = np.einsum("iab,ijb->ija", t.oinv, c)
    nu = np.einsum("iab,jb->ija", t.oinv, t.dmu)
    nu_c = np.einsum("ika,ija->ijk", nu, c)
    m = (-np.einsum("ia,jkab,ib->ijk", t.av, d2om, t.av)
         + 2.0 * np.einsum("ika,ija->ijk", c, e)
         + 2.0 * nu_c + 2.0 * np.transpose(nu_c, (0, 2, 1))
         - 2.0 * np.einsum("jka,ia->ijk", d2mu, t.av)
         + 2.0 * np.einsum("ja,ika->ijk", t.dmu, nu))

    J = -0.5 * tr1 + 0.5 * tr2 - np.einsum("i,ij,ik->jk", v, h, h) - np.einsum("i,ijk->jk", r, m)
    return 0.5 * (J + J.T)


def loglik(theta: ParameterVector, data: Dataset, family: EllipticalFamily) -> float:
    return loglik_from_terms(evaluate(theta, data, family))


def score(theta: ParameterVector, data: Dataset, family: EllipticalFamily) -> np.ndarray:
    return score_from_terms(evaluate(theta, data, family))


def observed_info(theta: ParameterVector, data: Dataset, family: EllipticalFamily) -> np.ndarray:
    return info_from_terms(evaluate(theta, data, family))


# -------------------------
# Estimation
# -------------------------
def _floor_eigen(a: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    a = np.atleast_2d(0.5 * (a + a.T))
    w, V = np.linalg.eigh(a)
    return (V * np.maximum(w, floor)) @ V.T


def initial_theta(data: Dataset) -> ParameterVector:
    """Naive least squares start, corrected for the average known error scales."""
    Y, X = data.y, data.x
    design = np.column_stack([np.ones(data.n), X])
    coef, *_ = np.linalg.lstsq(design, Y, rcond=None)
    alpha = coef[0]
    beta = coef[1:].T
    resid = Y - design @ coef
    sx = np.atleast_2d(np.cov(X, rowvar=False)) - data.sigma_u.mean(axis=0)
    sq = np.atleast_2d(np.cov(resid, rowvar=False)) - data.sigma_e.mean(axis=0)
    return ParameterVector.pack(beta, alpha, X.mean(axis=0), _floor_eigen(sq), _floor_eigen(sx))


def information_diagnostics(J: np.ndarray) -> dict:
    w = np.linalg.eigvalsh(0.5 * (J + J.T))
    lo, hi = float(w[0]), float(w[-1])
    cond = hi / lo if lo > 0 else float("inf")
    return {"min_eigenvalue": lo, "max_eigenvalue": hi, "condition": cond}


def fit_mle(data: Dataset, family: EllipticalFamily, init: Optional[ParameterVector] = None,
            constraint: Optional[HypothesisSpec] = None, max_iter: int = MAX_ITER) -> FitResult:
    """
    Maximize the log-likelihood with a Newton trust-region method on the
    analytic score and observed information. With a constraint, psi is
    frozen at psi0 and only the nuisance coordinates move. Proposals that
    break positive definiteness of some Omega_i get -inf log-likelihood and
    are rejected by the trust-region ratio test.
    """
    dims = data.dims
    fam = family.with_dim(dims.k)
    notes = []
    if data.n <= dims.s / dims.k:
        msg = f"n={data.n} is small for s={dims.s} parameters in dimension {dims.k}"
        warnings.warn(msg)
        notes.append("small_n")

    theta0 = (init if init is not None else initial_theta(data)).theta.copy()
    if constraint is not None:
        constraint.check(dims)
        theta0 = constraint.pin(theta0)
        free = constraint.omega_indices(dims)
    else:
        free = np.arange(dims.s)

    start = evaluate(ParameterVector(dims, theta0), data, fam)
    ll_start = loglik_from_terms(start)

    def expand(x) -> ParameterVector:
        t = theta0.copy()
        t[free] = x
        return ParameterVector(dims, t)

    def fun(x):
        try:
            return -loglik_from_terms(evaluate(expand(x), data, fam))
        except NotPositiveDefiniteError:
            return np.inf

    def jac(x):
        try:
            return -score_from_terms(evaluate(expand(x), data, fam))[free]
        except NotPositiveDefiniteError:
            return np.zeros(free.size)

    def hess(x):
        try:
            return info_from_terms(evaluate(expand(x), data, fam))[np.ix_(free, free)]
        except NotPositiveDefiniteError:
            return np.eye(free.size)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(fun, theta0[free], jac=jac, hess=hess, method="trust-exact",
                       options={"gtol": SCORE_TOL, "maxiter": max_iter})

    x = res.x
    if fun(x) > -ll_start:
        x = theta0[free].copy()
    budget = min(POLISH_ITER, max(max_iter - int(res.nit), 0))
    x, terms, ll, steps, change = _newton_polish(expand, x, free, data, fam, budget)
    theta_hat = expand(x)
    U = score_from_terms(terms)
    J = info_from_terms(terms)
    score_norm = float(np.max(np.abs(U[free]))) if free.size else 0.0
    converged = score_norm < SCORE_TOL and change < FTOL

    diag = information_diagnostics(J[np.ix_(free, free)])
    if diag["min_eigenvalue"] <= 0 or diag["condition"] > COND_LIMIT:
        warnings.warn(f"observed information is ill-conditioned (min eigenvalue {diag['min_eigenvalue']:.3g})")
        notes.append("ill_conditioned_information")

    iterations = int(res.nit) + steps
    result = FitResult(theta_hat, ll, score_norm, J, iterations, bool(converged),
                       constraint, notes, f"{res.message} (+{steps} Newton steps)")
    if not converged:
        raise FitError(f"no convergence after {iterations} iterations (score norm {score_norm:.3g})", result)
    return result


def _newton_polish(expand, x: np.ndarray, free: np.ndarray, data: Dataset,
                   fam: EllipticalFamily, budget: int):
    """
    Full Newton steps on the free block, x += J_ff^{-1} U_f, halved until
    the log-likelihood does not drop and every Omega_i stays positive
    definite. Stops once the score is below SCORE_TOL and the relative
    change of the log-likelihood is below FTOL.
    """
    terms = evaluate(expand(x), data, fam)
    ll = loglik_from_terms(terms)
    change = 0.0
    steps = 0
    while steps < budget:
        U = score_from_terms(terms)[free]
        try:
            J = info_from_terms(terms)[np.ix_(free, free)]
            delta = cho_solve(cho_factor(J), U)
        except (LinAlgError, DomainError):
            break
        slack = FTOL * max(1.0, abs(ll))
        t = 1.0
        accepted = None
        while t >= 1e-6:
            try:
                new = evaluate(expand(x + t * delta), data, fam)
                ll_new = loglik_from_terms(new)
            except NotPositiveDefiniteError:
                ll_new = -np.inf
            if np.isfinite(ll_new) and ll_new >= ll - slack:
                accepted = new
                break
            t *= 0.5
        if accepted is None:
            if np.max(np.abs(U)) < SCORE_TOL:
                # nothing left to gain within rounding
                change = 0.0
            break
        steps += 1
        change = abs(ll_new - ll) / max(1.0, abs(ll))
        x, terms, ll = x + t * delta, accepted, ll_new
        if change < FTOL and np.max(np.abs(score_from_terms(terms)[free])) < SCORE_TOL:
            break
    return x, terms, ll, steps, change


def standard_errors(fit: FitResult) -> np.ndarray:
    """sqrt(diag(J^{-1})) over the free coordinates; pinned coordinates get 0."""
    free = fit.free_indices
    out = np.zeros(fit.theta_hat.dims.s)
    cov = np.linalg.inv(fit.observed_info[np.ix_(free, free)])
    out[free] = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return out


def aic(fit: FitResult) -> float:
    return -2.0 * fit.loglik + 2.0 * fit.free_indices.size

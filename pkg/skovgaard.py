# skovgaard.py
"""
Likelihood ratio test of H0: vec(beta)[idx] = psi0 with Skovgaard's two
adjusted statistics.

The data are re-expressed as (theta_hat, a) through the maximal invariant
a_i = P_i(theta_hat)^{-1} (z_i - mu(theta_hat)), so that
z_i = P_i(theta_hat) a_i + mu(theta_hat). Sample-space derivatives are
derivatives of l(theta; theta_hat, a) in theta_hat with a held fixed.
"""
import os
from dataclasses import dataclass, field
from typing import Optional, Set, Tuple

import numpy as np
from scipy.stats import chi2

from chol_diff import chol, chol_dtheta
from elliptical import EllipticalFamily
from likelihood import (FitResult, check_no_cusp, evaluate, fit_mle, generator_weights,
                        score_from_terms, u_derivatives)
from model import (Dataset, HypothesisSpec, ParameterVector, mu_dtheta, mu_of, omega_all,
                   omega_dtheta)

LR_NEAR_ZERO = float(os.environ.get("EIV_LR_NEAR_ZERO", 1e-10))

FLAG_LR_NEAR_ZERO = "lr_near_zero"
FLAG_RHO = "rho_nonpositive_determinant"
FLAG_FIT = "fit_warning"


class RhoUnavailable(ValueError):
    """A determinant or scalar inside log(rho) is not positive."""


@dataclass
class AncillaryStatistic:
    a: np.ndarray          # (n, k)
    theta: ParameterVector
    mu: np.ndarray         # (k,)
    dmu: np.ndarray        # (s, k)
    factor: np.ndarray     # (n, k, k) P_i at theta
    dfactor: np.ndarray    # (n, s, k, k) dP_i / dtheta_j

    def reconstruct(self) -> np.ndarray:
        return np.einsum("iab,ib->ia", self.factor, self.a) + self.mu


@dataclass
class TestReport:
    lr: float
    log_rho: float
    lr_star: float
    lr_dstar: float
    q: int
    pvalues: Tuple[float, float, float]
    flags: Set[str] = field(default_factory=set)
    hypothesis: Optional[HypothesisSpec] = None
    fit_hat: Optional[FitResult] = None
    fit_tilde: Optional[FitResult] = None

    def to_dict(self) -> dict:
        out = {
            "lr": self.lr,
            "log_rho": self.log_rho,
            "lr_star": self.lr_star,
            "lr_dstar": self.lr_dstar,
            "q": self.q,
            "pvalues": {"lr": self.pvalues[0], "lr_star": self.pvalues[1], "lr_dstar": self.pvalues[2]},
            "flags": sorted(self.flags),
        }
        if self.hypothesis is not None:
            out["hypothesis"] = {"psi_indices": list(self.hypothesis.psi_indices),
                                 "psi0": list(self.hypothesis.psi0)}
        if self.fit_hat is not None:
            out["fit_hat"] = self.fit_hat.to_dict()
        if self.fit_tilde is not None:
            out["fit_tilde"] = self.fit_tilde.to_dict()
        return out


def _frame(theta: ParameterVector, data: Dataset, family: EllipticalFamily):
    """P_i, dP_i/dtheta, mu and dmu/dtheta at theta."""
    P = chol(omega_all(theta, data, family))
    dP = chol_dtheta(P, omega_dtheta(theta, family))
    return P, dP, mu_of(theta), mu_dtheta(theta)


def ancillary(fit_hat: FitResult, data: Dataset, family: EllipticalFamily) -> AncillaryStatistic:
    if not fit_hat.converged:
        raise ValueError("ancillary statistic needs a converged fit")
    fam = family.with_dim(data.m + data.p)
    theta = fit_hat.theta_hat
    P, dP, mu, dmu = _frame(theta, data, fam)
    a = np.linalg.solve(P, (data.z - mu)[..., None])[..., 0]
    return AncillaryStatistic(a, theta, mu, dmu, P, dP)


def sample_space_terms(theta_eval: ParameterVector, frame, a: np.ndarray, data: Dataset,
                       family: EllipticalFamily):
    """
    l'(theta_eval) and the two parts of U'(theta_eval) for the data
    configuration z_i = P_i a_i + mu of the given reference frame:
    the W'-weighted part and the W-weighted part. U' is their sum, with
    U'[k, j] = d^2 l / d theta_k d theta_ref_j.
    """
    P, dP, mu, dmu = frame
    z = np.einsum("iab,ib->ia", P, a) + mu
    t = evaluate(theta_eval, data.with_z(z, check=False), family)
    check_no_cusp(t, "sample-space derivative")
    r, v = generator_weights(t)[0], t.family.W_prime(t.u)
    g = np.einsum("ijab,ib->ija", dP, a) + dmu[None, :, :]
    w = np.einsum("ija,ia->ij", g, t.av)
    ell = 2.0 * (r @ w)

    h, c = u_derivatives(t)
    G = np.einsum("iab,ijb->ija", t.oinv, g)
    inner = np.einsum("ija,ika->ikj", G, c) + np.einsum("ija,ka->ikj", G, t.dmu)
    curvature = 2.0 * np.einsum("i,ik,ij->kj", v, h, w)
    weighted = -2.0 * np.einsum("i,ikj->kj", r, inner)
    return ell, curvature, weighted


def _derivs_at(theta_eval: ParameterVector, frame, a: np.ndarray, data: Dataset,
               family: EllipticalFamily):
    ell, curvature, weighted = sample_space_terms(theta_eval, frame, a, data, family)
    return ell, curvature + weighted


def sample_space_derivs(theta_eval: ParameterVector, fit_hat: FitResult, anc: AncillaryStatistic,
                        data: Dataset, family: EllipticalFamily):
    """
    Returns (l', U', J_bar):
      l'  = d l(theta_eval; theta_hat, a) / d theta_hat
      U'  = d^2 l(theta_eval; theta_hat, a) / d theta d theta_hat
      J_bar = U' with theta_hat moved to theta_eval, i.e. U'(theta_eval; theta_eval, a)
    """
    fam = family.with_dim(data.m + data.p)
    hat_frame = (anc.factor, anc.dfactor, anc.mu, anc.dmu)
    ell, U = _derivs_at(theta_eval, hat_frame, anc.a, data, fam)
    _, J_bar = _derivs_at(theta_eval, _frame(theta_eval, data, fam), anc.a, data, fam)
    return ell, U, J_bar


def _logdet(a: np.ndarray, what: str) -> float:
    sign, val = np.linalg.slogdet(a)
    if sign <= 0 or not np.isfinite(val):
        raise RhoUnavailable(f"|{what}| is not positive")
    return float(val)


def _log_positive(x: float, what: str) -> float:
    if not (np.isfinite(x) and x > 0):
        raise RhoUnavailable(f"{what} = {x:.3g} is not positive")
    return float(np.log(x))


def rho(fit_hat: FitResult, fit_tilde: FitResult, anc: AncillaryStatistic, data: Dataset,
        family: EllipticalFamily, hyp: HypothesisSpec) -> float:
    """log rho. Raises RhoUnavailable when a determinant or scalar is not positive."""
    fam = family.with_dim(data.m + data.p)
    dims = data.dims
    q = hyp.q
    lr = 2.0 * (fit_hat.loglik - fit_tilde.loglik)
    om = hyp.omega_indices(dims)
    oo = np.ix_(om, om)

    theta_t = fit_tilde.theta_hat
    U_t = score_from_terms(evaluate(theta_t, data, fam))
    ell_hat, _, _ = sample_space_derivs(fit_hat.theta_hat, fit_hat, anc, data, fam)
    ell_t, Up_t, J_bar = sample_space_derivs(theta_t, fit_hat, anc, data, fam)

    try:
        quad = float(U_t @ np.linalg.solve(J_bar, U_t))
        den = float((ell_hat - ell_t) @ np.linalg.solve(Up_t, U_t))
    except np.linalg.LinAlgError as e:
        raise RhoUnavailable(f"singular sample-space derivative: {e}")

    return (0.5 * _logdet(fit_hat.observed_info, "J_hat")
            - _logdet(Up_t, "U'_tilde")
            + 0.5 * _logdet(fit_tilde.observed_info[oo], "J_tilde_ww")
            - 0.5 * _logdet(J_bar[oo], "J_bar_ww")
            + 0.5 * _logdet(J_bar, "J_bar")
            + 0.5 * q * _log_positive(quad, "U' J_bar^-1 U")
            - (0.5 * q - 1.0) * _log_positive(lr, "LR")
            - _log_positive(den, "(l'_hat - l'_tilde)' U'^-1 U"))


def adjusted_statistics(lr: float, log_rho: float) -> Tuple[float, float]:
    """(LR*_a, LR**_a) from LR and log rho."""
    lr_star = lr * (1.0 - log_rho / lr) ** 2 if lr > 0 else 0.0
    return lr_star, lr - 2.0 * log_rho


def lr_test(data: Dataset, family: EllipticalFamily, hyp: HypothesisSpec,
            fit_hat: Optional[FitResult] = None) -> TestReport:
    fam = family.with_dim(data.m + data.p)
    hyp.check(data.dims)
    if fit_hat is None:
        fit_hat = fit_mle(data, fam)
    start = ParameterVector(data.dims, hyp.pin(fit_hat.theta_hat.theta))
    fit_tilde = fit_mle(data, fam, init=start, constraint=hyp)
    if fit_tilde.loglik > fit_hat.loglik:
        # the constrained optimum beats the unconstrained one: restart from it
        fit_hat = fit_mle(data, fam, init=fit_tilde.theta_hat)

    flags = set()
    if fit_hat.warnings or fit_tilde.warnings:
        flags.add(FLAG_FIT)
    lr = max(2.0 * (fit_hat.loglik - fit_tilde.loglik), 0.0)
    log_rho = 0.0
    if lr < LR_NEAR_ZERO:
        flags.add(FLAG_LR_NEAR_ZERO)
    else:
        try:
            anc = ancillary(fit_hat, data, fam)
            log_rho = rho(fit_hat, fit_tilde, anc, data, fam, hyp)
        except RhoUnavailable:
            flags.add(FLAG_RHO)
            log_rho = 0.0

    lr_star, lr_dstar = adjusted_statistics(lr, log_rho)
    pvalues = tuple(float(chi2.sf(x, hyp.q)) for x in (lr, lr_star, lr_dstar))
    return TestReport(lr, log_rho, lr_star, lr_dstar, hyp.q, pvalues, flags, hyp, fit_hat, fit_tilde)

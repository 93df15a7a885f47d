# elliptical.py
"""
Elliptical density generators.

A q-variate elliptical density is |Omega|^(-1/2) p0(u) with
u = (z - mu)' Omega^{-1} (z - mu). Three generators ship:

    normal              p0(u) = (2 pi)^(-q/2) exp(-u / 2)
    student_t (nu)      p0(u) = k (1 + u / nu)^(-(nu + q) / 2)
    power_exponential   p0(u) = k exp(-u^lambda / 2),   0 < lambda <= 1

Normalization constants are kept, so log-likelihoods of different families
are directly comparable (AIC). nu and lambda are fixed by the caller.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import gammaln

KINDS = ("normal", "student_t", "power_exponential")


class DomainError(ValueError):
    pass


def _as_u(u):
    arr = np.asarray(u, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError(f"quadratic form must be >= 0, got {u!r}")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


@dataclass(frozen=True)
class EllipticalFamily:
    kind: str = "normal"
    shape: Optional[float] = None
    dim: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown family {self.kind!r}; expected one of {KINDS}")
        if int(self.dim) < 1:
            raise DomainError(f"dimension must be positive, got {self.dim}")
        if self.kind == "student_t":
            if self.shape is None or not np.isfinite(self.shape) or self.shape <= 2:
                raise DomainError(f"student_t needs nu > 2 (finite variance), got {self.shape}")
        elif self.kind == "power_exponential":
            if self.shape is None or not (0 < self.shape <= 1):
                raise DomainError(f"power_exponential needs 0 < lambda <= 1, got {self.shape}")

    def with_dim(self, dim: int) -> "EllipticalFamily":
        return self if dim == self.dim else replace(self, dim=int(dim))

    @property
    def label(self) -> str:
        if self.kind == "student_t":
            return f"student_t(nu={self.shape:g})"
        if self.kind == "power_exponential":
            return f"power_exponential(lambda={self.shape:g})"
        return "normal"

    # ---------- generator ----------
    def log_norm(self) -> float:
        q = self.dim
        if self.kind == "normal":
            return -0.5 * q * np.log(2 * np.pi)
        if self.kind == "student_t":
            nu = self.shape
            return gammaln((nu + q) / 2) - gammaln(nu / 2) - 0.5 * q * np.log(nu * np.pi)
        lam = self.shape
        a = q / (2 * lam)
        return (np.log(q) + gammaln(q / 2) - 0.5 * q * np.log(np.pi)
                - gammaln(1 + a) - (1 + a) * np.log(2))

    def log_p0(self, u):
        arr = _as_u(u)
        if self.kind == "normal":
            val = self.log_norm() - 0.5 * arr
        elif self.kind == "student_t":
            nu = self.shape
            val = self.log_norm() - 0.5 * (nu + self.dim) * np.log1p(arr / nu)
        else:
            val = self.log_norm() - 0.5 * np.power(arr, self.shape)
        return _out(val, u)

    def W(self, u):
        """d log p0 / du."""
        arr = _as_u(u)
        if self.kind == "normal":
            val = np.full_like(arr, -0.5)
        elif self.kind == "student_t":
            nu = self.shape
            val = -(nu + self.dim) / (2 * (nu + arr))
        else:
            lam = self.shape
            with np.errstate(divide="ignore"):
                val = -0.5 * lam * np.power(arr, lam - 1)
        return _out(val, u)

    def W_prime(self, u):
        """d W / du."""
        arr = _as_u(u)
        if self.kind == "normal":
            val = np.zeros_like(arr)
        elif self.kind == "student_t":
            nu = self.shape
            val = (nu + self.dim) / (2 * (nu + arr) ** 2)
        else:
            lam = self.shape
            with np.errstate(divide="ignore", invalid="ignore"):
                val = -0.5 * lam * (lam - 1) * np.power(arr, lam - 2)
            if lam == 1:
                val = np.zeros_like(arr)
        return _out(val, u)

    def c(self) -> float:
        """Var(Z) = c * Omega."""
        if self.kind == "normal":
            return 1.0
        if self.kind == "student_t":
            return self.shape / (self.shape - 2)
        lam, q = self.shape, self.dim
        return float(np.exp(np.log(2) / lam + gammaln((q + 2) / (2 * lam))
                            - np.log(q) - gammaln(q / (2 * lam))))

    # ---------- sampling ----------
    def radial_sample(self, size, rng=None) -> np.ndarray:
        """Draws of R in Z = mu + P R S, with S uniform on the unit sphere."""
        rng = np.random.default_rng(rng)
        q = self.dim
        if self.kind == "normal":
            return np.sqrt(rng.chisquare(q, size=size))
        if self.kind == "student_t":
            return np.sqrt(q * rng.f(q, self.shape, size=size))
        lam = self.shape
        return np.power(2.0 * rng.gamma(q / (2 * lam), 1.0, size=size), 1.0 / (2 * lam))

    def sample(self, mu, scale_chol, rng=None, size: Optional[int] = None) -> np.ndarray:
        """
        One draw (or `size` draws) with location mu and scale P P'.
        scale_chol may also be a stack (n, q, q); then one draw per factor is returned.
        """
        rng = np.random.default_rng(rng)
        mu = np.asarray(mu, dtype=float)
        P = np.asarray(scale_chol, dtype=float)
        q = self.dim
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(P))):
            raise DomainError("non-finite location or scale factor")
        if P.shape[-2:] != (q, q) or mu.shape[-1] != q:
            raise DomainError(f"expected dimension {q}, got mu {mu.shape} and factor {P.shape}")
        if np.any(np.diagonal(P, axis1=-2, axis2=-1) <= 0):
            raise DomainError("scale factor needs a strictly positive diagonal")

        if P.ndim == 3:
            count = P.shape[0]
        else:
            count = 1 if size is None else int(size)
        g = rng.standard_normal((count, q))
        s = g / np.linalg.norm(g, axis=1, keepdims=True)
        r = self.radial_sample(count, rng)
        w = r[:, None] * s
        if P.ndim == 3:
            return mu + np.einsum("iab,ib->ia", P, w)
        out = mu + w @ P.T
        return out[0] if (size is None) else out

    def logpdf(self, z, mu, omega):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        L = np.linalg.cholesky(np.asarray(omega, dtype=float))
        d = z - np.asarray(mu, dtype=float)
        y = np.linalg.solve(L, d.T)
        u = np.sum(y * y, axis=0)
        return -np.sum(np.log(np.diag(L))) + self.log_p0(u)


def family_from_settings(kind: str, nu=None, lam=None, dim: int = 1) -> EllipticalFamily:
    kind = (kind or "normal").strip().lower()
    if kind == "student_t":
        if nu is None:
            raise DomainError("student_t requires nu")
        return EllipticalFamily("student_t", float(nu), dim)
    if kind == "power_exponential":
        if lam is None:
            raise DomainError("power_exponential requires lambda")
        return EllipticalFamily("power_exponential", float(lam), dim)
    return EllipticalFamily(kind, None, dim)


# Convenience top-level wrappers
def log_p0(family: EllipticalFamily, u):
    return family.log_p0(u)


def W(family: EllipticalFamily, u):
    return family.W(u)


def W_prime(family: EllipticalFamily, u):
    return family.W_prime(u)


def c_const(family: EllipticalFamily) -> float:
    return family.c()


def sample(family: EllipticalFamily, mu, scale_chol, rng_seed=None, size=None):
    return family.sample(mu, scale_chol, rng_seed, size=size)

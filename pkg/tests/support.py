import numpy as np

from chol_diff import chol
from elliptical import EllipticalFamily
from model import Dataset, ParameterVector, mu_of, omega_all


def random_spd(rng, k, floor=0.5):
    A = rng.normal(size=(k, k))
    return A @ A.T / k + floor * np.eye(k)


def random_theta(rng, m, p) -> ParameterVector:
    return ParameterVector.pack(rng.normal(0, 0.7, (m, p)), rng.normal(0, 1, m), rng.normal(0, 1, p),
                                random_spd(rng, m), random_spd(rng, p))


def random_dataset(rng, theta: ParameterVector, family: EllipticalFamily, n: int) -> Dataset:
    m, p = theta.dims.m, theta.dims.p
    se = np.stack([np.diag(rng.uniform(0.1, 1.0, m)) for _ in range(n)])
    su = np.stack([np.diag(rng.uniform(0.1, 1.0, p)) for _ in range(n)])
    stub = Dataset(np.zeros((n, m + p)), se, np.zeros((n, p, m)), su, m, p)
    fam = family.with_dim(m + p)
    z = fam.sample(mu_of(theta), chol(omega_all(theta, stub, fam)), rng)
    return stub.with_z(z)


def nearby(rng, theta: ParameterVector, scale=0.05) -> ParameterVector:
    return theta.with_theta(theta.theta + rng.normal(0, scale, theta.dims.s))


def central_diff(f, x, h=1e-5):
    """Jacobian of f at x by central differences, last axis follows x."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def murray_dchol(L, dA):
    """L Phi(L^-1 dA L^-T), Phi keeps the lower triangle and halves the diagonal."""
    Li = np.linalg.inv(L)
    X = Li @ dA @ Li.T
    phi = np.tril(X) - 0.5 * np.diag(np.diag(X))
    return L @ phi

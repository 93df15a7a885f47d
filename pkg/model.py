# model.py
"""
Structural heteroskedastic multivariate measurement-error model.

    y_i = alpha + beta x_i + q_i,   Y_i = y_i + e_i,   X_i = x_i + u_i

Observed Z_i = (Y_i, X_i) is elliptical with location mu(theta) and scale
Omega_i(theta) = c^{-1} [[b Sx b' + Sq + Se_i, b Sx + Sue_i'],
                         [Sx b' + Sue_i,       Sx + Su_i   ]].

theta = (vec beta, alpha, mu_x, vech Sigma_q, vech Sigma_x); vec and vech
are column-major, vech keeps the lower triangle.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from chol_diff import NotPositiveDefiniteError, chol
from elliptical import EllipticalFamily

PSD_TOL = 1e-10


class DatasetError(ValueError):
    def __init__(self, message: str, row: Optional[int] = None, line: Optional[int] = None):
        super().__init__(message)
        self.row = row
        self.line = line


# -------------------------
# vec / vech
# -------------------------
def vech_pairs(k: int) -> List[Tuple[int, int]]:
    return [(r, c) for c in range(k) for r in range(c, k)]


def vech(matrix) -> np.ndarray:
    a = np.asarray(matrix, dtype=float)
    return np.array([a[r, c] for r, c in vech_pairs(a.shape[0])])


def unvech(v, k: Optional[int] = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if k is None:
        k = int(round((np.sqrt(1 + 8 * v.size) - 1) / 2))
    out = np.zeros((k, k))
    for val, (r, c) in zip(v, vech_pairs(k)):
        out[r, c] = val
        out[c, r] = val
    return out


def vech_unit(k: int, pos: int) -> np.ndarray:
    """d Sigma / d (vech Sigma)_pos, a symmetric 0/1 matrix."""
    r, c = vech_pairs(k)[pos]
    e = np.zeros((k, k))
    e[r, c] = 1.0
    e[c, r] = 1.0
    return e


# -------------------------
# Types
# -------------------------
@dataclass(frozen=True)
class ModelDims:
    m: int
    p: int
    n: int = 0

    @property
    def k(self) -> int:
        return self.m + self.p

    @property
    def s(self) -> int:
        m, p = self.m, self.p
        return m * p + m + p + p * (p + 1) // 2 + m * (m + 1) // 2

    def slices(self) -> Dict[str, slice]:
        m, p = self.m, self.p
        sizes = [("beta", m * p), ("alpha", m), ("mu_x", p),
                 ("sigma_q", m * (m + 1) // 2), ("sigma_x", p * (p + 1) // 2)]
        out, start = {}, 0
        for name, size in sizes:
            out[name] = slice(start, start + size)
            start += size
        return out

    def block_of(self, j: int) -> Tuple[str, int]:
        for name, sl in self.slices().items():
            if sl.start <= j < sl.stop:
                return name, j - sl.start
        raise IndexError(f"parameter index {j} outside [0, {self.s})")

    def names(self) -> List[str]:
        out = []
        for j in range(self.s):
            block, pos = self.block_of(j)
            if block == "beta":
                out.append(f"beta[{pos % self.m},{pos // self.m}]")
            elif block in ("sigma_q", "sigma_x"):
                r, c = vech_pairs(self.m if block == "sigma_q" else self.p)[pos]
                out.append(f"{block}[{r},{c}]")
            else:
                out.append(f"{block}[{pos}]")
        return out


@dataclass
class ParameterVector:
    dims: ModelDims
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).copy()
        if self.theta.shape != (self.dims.s,):
            raise ValueError(f"theta must have length {self.dims.s}, got {self.theta.shape}")

    def _block(self, name):
        return self.theta[self.dims.slices()[name]]

    @property
    def beta(self) -> np.ndarray:
        return self._block("beta").reshape((self.dims.m, self.dims.p), order="F")

    @property
    def alpha(self) -> np.ndarray:
        return self._block("alpha").copy()

    @property
    def mu_x(self) -> np.ndarray:
        return self._block("mu_x").copy()

    @property
    def sigma_q(self) -> np.ndarray:
        return unvech(self._block("sigma_q"), self.dims.m)

    @property
    def sigma_x(self) -> np.ndarray:
        return unvech(self._block("sigma_x"), self.dims.p)

    @classmethod
    def pack(cls, beta, alpha, mu_x, sigma_q, sigma_x) -> "ParameterVector":
        beta = np.atleast_2d(np.asarray(beta, dtype=float))
        sigma_q = np.atleast_2d(np.asarray(sigma_q, dtype=float))
        sigma_x = np.atleast_2d(np.asarray(sigma_x, dtype=float))
        m, p = beta.shape
        theta = np.concatenate([beta.reshape(-1, order="F"),
                                np.atleast_1d(np.asarray(alpha, dtype=float)),
                                np.atleast_1d(np.asarray(mu_x, dtype=float)),
                                vech(sigma_q), vech(sigma_x)])
        return cls(ModelDims(m, p), theta)

    def unpack(self):
        return self.beta, self.alpha, self.mu_x, self.sigma_q, self.sigma_x

    def with_theta(self, theta) -> "ParameterVector":
        return ParameterVector(self.dims, theta)

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "alpha": self.alpha.tolist(),
                "mu_x": self.mu_x.tolist(), "sigma_q": self.sigma_q.tolist(),
                "sigma_x": self.sigma_x.tolist(), "theta": self.theta.tolist()}


@dataclass
class Dataset:
    """z rows are (Y_i, X_i); the known error scales are stacked over i."""
    z: np.ndarray
    sigma_e: np.ndarray
    sigma_ue: np.ndarray
    sigma_u: np.ndarray
    m: int = field(default=0)
    p: int = field(default=0)
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        n = self.z.shape[0]
        self.sigma_e = np.asarray(self.sigma_e, dtype=float).reshape(n, -1)
        self.sigma_u = np.asarray(self.sigma_u, dtype=float).reshape(n, -1)
        m = self.m or int(round(np.sqrt(self.sigma_e.shape[1])))
        p = self.p or int(round(np.sqrt(self.sigma_u.shape[1])))
        self.m, self.p = m, p
        self.sigma_e = self.sigma_e.reshape(n, m, m)
        self.sigma_u = self.sigma_u.reshape(n, p, p)
        self.sigma_ue = np.asarray(self.sigma_ue, dtype=float).reshape(n, p, m)
        if self.check:
            self.validate()

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.m, self.p, self.n)

    @property
    def y(self) -> np.ndarray:
        return self.z[:, :self.m]

    @property
    def x(self) -> np.ndarray:
        return self.z[:, self.m:]

    def known_blocks(self) -> np.ndarray:
        """Joint known error scale [[Se, Sue'], [Sue, Su]] per observation."""
        m = self.m
        out = np.zeros((self.n, self.m + self.p, self.m + self.p))
        out[:, :m, :m] = self.sigma_e
        out[:, :m, m:] = np.transpose(self.sigma_ue, (0, 2, 1))
        out[:, m:, :m] = self.sigma_ue
        out[:, m:, m:] = self.sigma_u
        return out

    def validate(self):
        n, k = self.z.shape
        if k != self.m + self.p:
            raise DatasetError(f"rows have {k} columns, expected m + p = {self.m + self.p}")
        for name in ("z", "sigma_e", "sigma_ue", "sigma_u"):
            bad = ~np.all(np.isfinite(getattr(self, name)).reshape(n, -1), axis=1)
            if np.any(bad):
                i = int(np.argmax(bad))
                raise DatasetError(f"row {i}: non-finite {name}", row=i)
        blocks = self.known_blocks()
        for i in range(n):
            if not np.allclose(self.sigma_e[i], self.sigma_e[i].T, atol=PSD_TOL) or \
                    not np.allclose(self.sigma_u[i], self.sigma_u[i].T, atol=PSD_TOL):
                raise DatasetError(f"row {i}: error scale matrix not symmetric", row=i)
            scale = max(1.0, float(np.max(np.abs(blocks[i]))))
            if np.min(np.linalg.eigvalsh(blocks[i])) < -PSD_TOL * scale:
                raise DatasetError(f"row {i}: known error scale block is not positive semidefinite", row=i)

    def take(self, order) -> "Dataset":
        order = np.asarray(order)
        return Dataset(self.z[order], self.sigma_e[order], self.sigma_ue[order],
                       self.sigma_u[order], self.m, self.p)

    def with_z(self, z, check: bool = True) -> "Dataset":
        return Dataset(z, self.sigma_e, self.sigma_ue, self.sigma_u, self.m, self.p, check)


@dataclass(frozen=True)
class HypothesisSpec:
    """H0: vec(beta)[psi_indices] = psi0."""
    psi_indices: Tuple[int, ...]
    psi0: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "psi_indices", tuple(int(i) for i in self.psi_indices))
        object.__setattr__(self, "psi0", tuple(float(v) for v in np.atleast_1d(self.psi0)))
        if len(self.psi_indices) < 1:
            raise ValueError("hypothesis needs at least one restricted coefficient")
        if len(set(self.psi_indices)) != len(self.psi_indices):
            raise ValueError(f"repeated indices in {self.psi_indices}")
        if len(self.psi0) != len(self.psi_indices):
            raise ValueError("psi0 and psi_indices differ in length")

    @classmethod
    def from_pairs(cls, pairs: Dict[int, float]) -> "HypothesisSpec":
        keys = list(pairs)
        return cls(tuple(keys), tuple(pairs[k] for k in keys))

    @property
    def q(self) -> int:
        return len(self.psi_indices)

    def check(self, dims: ModelDims):
        mp = dims.m * dims.p
        for i in self.psi_indices:
            if not 0 <= i < mp:
                raise ValueError(f"hypothesis index {i} outside vec(beta) range [0, {mp})")

    def omega_indices(self, dims: ModelDims) -> np.ndarray:
        psi = set(self.psi_indices)
        return np.array([j for j in range(dims.s) if j not in psi], dtype=int)

    def order(self, dims: ModelDims) -> np.ndarray:
        """Permutation putting psi first, then the nuisance parameters."""
        return np.concatenate([np.array(self.psi_indices, dtype=int), self.omega_indices(dims)])

    def pin(self, theta: np.ndarray) -> np.ndarray:
        out = np.array(theta, dtype=float)
        out[list(self.psi_indices)] = self.psi0
        return out


# -------------------------
# Location and scale
# -------------------------
def mu_of(theta: ParameterVector) -> np.ndarray:
    beta, alpha, mu_x = theta.beta, theta.alpha, theta.mu_x
    return np.concatenate([alpha + beta @ mu_x, mu_x])


def structural_scale(theta: ParameterVector) -> np.ndarray:
    beta, sq, sx = theta.beta, theta.sigma_q, theta.sigma_x
    m = theta.dims.m
    k = theta.dims.k
    out = np.zeros((k, k))
    out[:m, :m] = beta @ sx @ beta.T + sq
    out[:m, m:] = beta @ sx
    out[m:, :m] = sx @ beta.T
    out[m:, m:] = sx
    return out


def omega_all(theta: ParameterVector, data: Dataset, family: EllipticalFamily) -> np.ndarray:
    """Omega_i for every observation, shape (n, k, k). No definiteness check."""
    return (structural_scale(theta)[None, :, :] + data.known_blocks()) / family.c()


def omega_of(theta: ParameterVector, i: int, data: Dataset, family: EllipticalFamily) -> np.ndarray:
    om = omega_all(theta, data.take([i]), family)[0]
    try:
        chol(om)
    except NotPositiveDefiniteError as e:
        raise NotPositiveDefiniteError(f"Omega_{i} not positive definite", index=i, pivot=e.pivot)
    return om


# -------------------------
# Derivatives (Omega derivatives do not depend on i)
# -------------------------
def _beta_unit(dims: ModelDims, pos: int) -> np.ndarray:
    F = np.zeros((dims.m, dims.p))
    F[pos % dims.m, pos // dims.m] = 1.0
    return F


def _embed(dims: ModelDims, ul=None, ur=None, lr=None) -> np.ndarray:
    m, k = dims.m, dims.k
    out = np.zeros((k, k))
    if ul is not None:
        out[:m, :m] = ul
    if ur is not None:
        out[:m, m:] = ur
        out[m:, :m] = ur.T
    if lr is not None:
        out[m:, m:] = lr
    return out


def mu_dtheta(theta: ParameterVector) -> np.ndarray:
    dims = theta.dims
    m, sl = dims.m, dims.slices()
    beta, mu_x = theta.beta, theta.mu_x
    out = np.zeros((dims.s, dims.k))
    for pos in range(m * dims.p):
        out[sl["beta"].start + pos, pos % m] = mu_x[pos // m]
    for a in range(m):
        out[sl["alpha"].start + a, a] = 1.0
    for b in range(dims.p):
        j = sl["mu_x"].start + b
        out[j, :m] = beta[:, b]
        out[j, m + b] = 1.0
    return out


def omega_dtheta(theta: ParameterVector, family: EllipticalFamily) -> np.ndarray:
    dims = theta.dims
    sl = dims.slices()
    beta, sx = theta.beta, theta.sigma_x
    out = np.zeros((dims.s, dims.k, dims.k))
    for pos in range(dims.m * dims.p):
        F = _beta_unit(dims, pos)
        out[sl["beta"].start + pos] = _embed(dims, ul=F @ sx @ beta.T + beta @ sx @ F.T, ur=F @ sx)
    for pos in range(sl["sigma_q"].stop - sl["sigma_q"].start):
        out[sl["sigma_q"].start + pos] = _embed(dims, ul=vech_unit(dims.m, pos))
    for pos in range(sl["sigma_x"].stop - sl["sigma_x"].start):
        G = vech_unit(dims.p, pos)
        out[sl["sigma_x"].start + pos] = _embed(dims, ul=beta @ G @ beta.T, ur=beta @ G, lr=G)
    return out / family.c()


def mu_d2theta(theta: ParameterVector) -> np.ndarray:
    dims = theta.dims
    sl = dims.slices()
    out = np.zeros((dims.s, dims.s, dims.k))
    for pos in range(dims.m * dims.p):
        j = sl["beta"].start + pos
        kk = sl["mu_x"].start + pos // dims.m
        out[j, kk, pos % dims.m] = 1.0
        out[kk, j, pos % dims.m] = 1.0
    return out


def omega_d2theta(theta: ParameterVector, family: EllipticalFamily) -> np.ndarray:
    """
    Second derivatives. Nonzero blocks: (beta, beta) from beta Sx beta',
    and (beta, Sigma_x).
    """
    dims = theta.dims
    sl = dims.slices()
    beta, sx = theta.beta, theta.sigma_x
    mp = dims.m * dims.p
    out = np.zeros((dims.s, dims.s, dims.k, dims.k))
    units = [_beta_unit(dims, pos) for pos in range(mp)]
    for a in range(mp):
        Fa = units[a]
        ja = sl["beta"].start + a
        for b in range(a, mp):
            Fb = units[b]
            jb = sl["beta"].start + b
            block = _embed(dims, ul=Fa @ sx @ Fb.T + Fb @ sx @ Fa.T)
            out[ja, jb] = block
            out[jb, ja] = block
        for pos in range(sl["sigma_x"].stop - sl["sigma_x"].start):
            G = vech_unit(dims.p, pos)
            jx = sl["sigma_x"].start + pos
            block = _embed(dims, ul=Fa @ G @ beta.T + beta @ G @ Fa.T, ur=Fa @ G)
            out[ja, jx] = block
            out[jx, ja] = block
    return out / family.c()

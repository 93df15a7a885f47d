# chol_diff.py
"""
Cholesky factor with positive diagonal, and its forward-mode derivative.

chol_dtheta differentiates the column-by-column Cholesky recurrence

    L_jj = sqrt(A_jj - sum_{k<j} L_jk^2)
    L_ij = (A_ij - sum_{k<j} L_ik L_jk) / L_jj        (i > j)

so that dL is exactly lower triangular and dL L' + L dL' = dA.
Both functions accept leading batch dimensions.
"""
from typing import Optional

import numpy as np


class NotPositiveDefiniteError(ValueError):
    def __init__(self, message: str, index: Optional[int] = None, pivot: Optional[int] = None):
        super().__init__(message)
        self.index = index
        self.pivot = pivot


def _failing_pivot(a: np.ndarray) -> int:
    k = a.shape[0]
    L = np.zeros_like(a)
    for j in range(k):
        piv = a[j, j] - L[j, :j] @ L[j, :j]
        if not piv > 0:
            return j
        L[j, j] = np.sqrt(piv)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return k - 1


def chol(omega) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PD matrix, or of each matrix in a stack."""
    a = np.asarray(omega, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    if a.ndim == 2:
        piv = _failing_pivot(a)
        raise NotPositiveDefiniteError(f"not positive definite (pivot {piv})", pivot=piv)
    flat = a.reshape((-1,) + a.shape[-2:])
    for i, block in enumerate(flat):
        try:
            np.linalg.cholesky(block)
        except np.linalg.LinAlgError:
            piv = _failing_pivot(block)
            raise NotPositiveDefiniteError(
                f"matrix {i} not positive definite (pivot {piv})", index=i, pivot=piv)
    raise NotPositiveDefiniteError("not positive definite")


def chol_dtheta(P, domega) -> np.ndarray:
    """
    Derivatives of the Cholesky factor.

    P:      (..., k, k) lower factor from chol
    domega: (..., s, k, k) symmetric derivatives of the factored matrix
    returns (..., s, k, k) lower-triangular dP with dP P' + P dP' = domega
    """
    L = np.asarray(P, dtype=float)
    dA = np.asarray(domega, dtype=float)
    k = L.shape[-1]
    if dA.shape[-2:] != (k, k):
        raise ValueError(f"factor is {k}x{k} but derivatives have shape {dA.shape}")
    L = L[..., None, :, :]
    shape = np.broadcast_shapes(L.shape, dA.shape)
    L = np.broadcast_to(L, shape)
    dL = np.zeros(shape)
    for j in range(k):
        ljj = L[..., j, j]
        djj = (dA[..., j, j] - 2.0 * np.sum(L[..., j, :j] * dL[..., j, :j], axis=-1)) / (2.0 * ljj)
        dL[..., j, j] = djj
        if j + 1 < k:
            rest = (dA[..., j + 1:, j]
                    - np.sum(dL[..., j + 1:, :j] * L[..., None, j, :j], axis=-1)
                    - np.sum(L[..., j + 1:, :j] * dL[..., None, j, :j], axis=-1)
                    - L[..., j + 1:, j] * djj[..., None])
            dL[..., j + 1:, j] = rest / ljj[..., None]
    return dL

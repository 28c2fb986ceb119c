"""Dense and sparse kernels shared by the POD, solver and test oracles.

Thin wrappers over LAPACK (through NumPy/SciPy) with the contracts the rest of
the package relies on: nonincreasing singular values, upper-triangular
Cholesky factors and explicit errors on non-SPD input.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


class NotSPDError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorization meets a nonpositive pivot."""


def as_dense(A) -> np.ndarray:
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=float)


def economy_svd(A) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``A = U diag(s) V^T``.

    Returns
    -------
    U : ndarray, shape (m, k)
    s : ndarray, shape (k,)
        Nonincreasing, ``k = min(m, n)``.
    V : ndarray, shape (n, k)
    """
    A = as_dense(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError:
        U, s, Vt = sla.svd(A, full_matrices=False, lapack_driver="gesvd")
    return U, s, Vt.T


def cholesky(X) -> np.ndarray:
    """Upper-triangular ``H`` with ``X = H^T H``.

    Raises
    ------
    NotSPDError
        If ``X`` is not symmetric positive definite.
    """
    X = as_dense(X)
    try:
        return sla.cholesky(X, lower=False)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(str(exc)) from None


def generalized_min_singular(D, Xu, Xp) -> float:
    """Inf-sup constant of ``D`` with respect to the norms ``Xu`` and ``Xp``.

    Computes the smallest singular value of ``Hp^{-T} D Hu^{-1}``, which equals
    ``min_q max_v q^T D v / (|v|_Xu |q|_Xp)`` when ``D`` has no more rows than
    columns.
    """
    D = as_dense(D)
    Hu = cholesky(Xu)
    Hp = cholesky(Xp)
    Y = sla.solve_triangular(Hp, D, trans="T", lower=False)
    Z = sla.solve_triangular(Hu, Y.T, trans="T", lower=False).T
    s = np.linalg.svd(Z, compute_uv=False)
    if D.shape[0] > D.shape[1]:
        return 0.0
    return float(s[-1]) if s.size else 0.0


def lu_factor(A):
    """Dense LU factorization; raises on exact singularity."""
    A = as_dense(A)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=True)
    if np.any(np.diag(lu) == 0.0):
        raise np.linalg.LinAlgError("singular matrix")
    return lu, piv


def lu_solve(factor, b) -> np.ndarray:
    return sla.lu_solve(factor, b)


def spmv(A, x) -> np.ndarray:
    return A @ x

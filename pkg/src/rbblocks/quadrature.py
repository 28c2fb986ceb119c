"""Quadrature rules on simplices and intervals.

Simplex rules are built from collapsed (Duffy) coordinates with Gauss-Jacobi
points in the collapsed directions, so a rule with ``n`` points per direction
integrates polynomials of total degree ``2n - 1`` exactly.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def gauss_interval(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of ``degree``.

    Returns
    -------
    points : ndarray, shape (n,)
    weights : ndarray, shape (n,)
    """
    n = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on the unit simplex ``{x >= 0, sum(x) <= 1}``.

    Parameters
    ----------
    dim : int
        Simplex dimension, 1, 2 or 3.
    degree : int
        Total polynomial degree integrated exactly.

    Returns
    -------
    points : ndarray, shape (nq, dim)
    weights : ndarray, shape (nq,)
        Weights sum to ``1 / dim!``.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"unsupported simplex dimension {dim}")
    n = max(1, (degree + 2) // 2)
    if dim == 1:
        x, w = gauss_interval(degree)
        return x[:, None].copy(), w.copy()

    # 1D factors on [0, 1]; factor k carries the weight (1 - v)^k
    factors = []
    for k in range(dim):
        t, w = roots_jacobi(n, k, 0)
        factors.append(((1.0 + t) / 2.0, w / 2.0 ** (k + 1)))

    if dim == 2:
        (u, wu), (v, wv) = factors
        U, V = np.meshgrid(u, v, indexing="ij")
        W = np.outer(wu, wv)
        pts = np.stack([U * (1.0 - V), V], axis=-1).reshape(-1, 2)
        return pts, W.ravel()

    (u, wu), (v, wv), (s, ws) = factors
    U, V, S = np.meshgrid(u, v, s, indexing="ij")
    W = wu[:, None, None] * wv[None, :, None] * ws[None, None, :]
    pts = np.stack([U * (1.0 - V) * (1.0 - S), V * (1.0 - S), S], axis=-1)
    return pts.reshape(-1, 3), W.ravel()

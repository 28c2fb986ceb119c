"""Restarted GMRES and flexible GMRES with right preconditioning."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class KrylovConfig:
    """Linear solver settings.

    Attributes
    ----------
    method : {"gmres", "fgmres", "direct"}
        ``direct`` factorizes the assembled tangent with sparse LU.
    tolerance : float
        Relative residual target.
    restart : int
        Krylov subspace size before restarting.
    max_iterations : int
        Total iteration budget.
    inner : {"simple", "exact", "gmres"}
        Approximation of the local saddle-point inverses.
    inner_tolerance : float
        Relative tolerance of the inner GMRES solves.
    schur_reuse : int
        Number of consecutive linear solves sharing one Schur complement.
    """

    method: str = "fgmres"
    tolerance: float = 1e-8
    restart: int = 200
    max_iterations: int = 2000
    inner: str = "simple"
    inner_tolerance: float = 1e-2
    schur_reuse: int = 20

    def __post_init__(self):
        if self.method not in ("gmres", "fgmres", "direct"):
            raise ValueError(f"unknown Krylov method {self.method!r}")
        if self.inner not in ("simple", "exact", "gmres"):
            raise ValueError(f"unknown inner mode {self.inner!r}")
        if self.restart < 1:
            raise ValueError("restart must be at least 1")
        if self.schur_reuse < 1:
            raise ValueError("Schur reuse period must be at least 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.method == "gmres" and self.inner == "gmres":
            raise ValueError("a variable inner solver requires FGMRES")


@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list[float] = field(default_factory=list)


class KrylovBreakdown(RuntimeError):
    pass


def gmres(matvec: Callable, b: np.ndarray, precond: Callable | None = None, x0: np.ndarray | None = None,
          tol: float = 1e-8, restart: int = 200, maxiter: int = 2000, flexible: bool = False) -> KrylovResult:
    """Right-preconditioned (F)GMRES for ``A x = b``.

    Parameters
    ----------
    matvec : callable
        ``x -> A x``.
    precond : callable, optional
        ``r -> M^{-1} r``. With ``flexible=True`` it may vary between calls.
    tol : float
        Stop when ``|b - A x| <= tol |b|``.

    Returns
    -------
    KrylovResult
        ``iterations`` counts preconditioned Arnoldi steps.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    M = precond if precond is not None else (lambda r: r)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return KrylovResult(np.zeros(n), 0, True, [0.0])
    r = b - matvec(x)
    beta = np.linalg.norm(r)
    history = [beta / bnorm]
    total = 0
    while True:
        if beta <= tol * bnorm:
            return KrylovResult(x, total, True, history)
        if total >= maxiter:
            return KrylovResult(x, total, False, history)
        m = min(restart, maxiter - total)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n)) if flexible else None
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for k in range(m):
            z = M(V[k])
            if flexible:
                Z[k] = z
            w = matvec(z)
            # classical Gram-Schmidt with one reorthogonalization pass
            h = V[: k + 1] @ w
            w = w - h @ V[: k + 1]
            h2 = V[: k + 1] @ w
            w = w - h2 @ V[: k + 1]
            H[: k + 1, k] = h + h2
            H[k + 1, k] = np.linalg.norm(w)
            if H[k + 1, k] > 1e-300:
                V[k + 1] = w / H[k + 1, k]
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                raise KrylovBreakdown("GMRES breakdown with zero Hessenberg column")
            cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            history.append(abs(g[k + 1]) / bnorm)
            if abs(g[k + 1]) <= tol * bnorm:
                break
        kk = k + 1
        y = np.linalg.solve(np.triu(H[:kk, :kk]), g[:kk])
        if flexible:
            x = x + Z[:kk].T @ y
        else:
            x = x + M(V[:kk].T @ y)
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        history[-1] = beta / bnorm


def fgmres(matvec, b, precond=None, x0=None, tol=1e-8, restart=200, maxiter=2000) -> KrylovResult:
    """Flexible GMRES; see :func:`gmres`."""
    return gmres(matvec, b, precond, x0, tol, restart, maxiter, flexible=True)

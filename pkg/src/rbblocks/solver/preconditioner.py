"""Block LDU preconditioner for the coupled saddle-point tangent.

With ``At`` the block-diagonal matrix of local saddle systems and ``Bt`` the
scaled coupling, the tangent factors exactly through the Schur complement
``S = -Bt At^{-1} Bt^T``. A linear solve with right-hand side ``(b_w, b_l)``
then reads

    Z_w = At^{-1} b_w,   X_l = S^{-1} (b_l - Bt Z_w),   X_w = Z_w - At^{-1} Bt^T X_l.

The local inverses are replaced by one SIMPLE sweep, by an inner GMRES solve
or by sparse LU. ``At^{-1} Bt^T`` is formed column by column while building
``S`` and kept, so the second stage costs a dense product.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .. import linalg
from ..assembly import Tangent
from .krylov import KrylovConfig, gmres


class SingularBlockError(np.linalg.LinAlgError):
    pass


class SimpleInner:
    """One SIMPLE sweep on ``[[F, G^T], [G, 0]]`` using ``diag(F)``."""

    def __init__(self, F: sp.csr_matrix, G: sp.csr_matrix):
        d = F.diagonal()
        if np.any(d == 0.0) or not np.all(np.isfinite(d)):
            raise SingularBlockError("zero on the diagonal of the velocity block")
        self.dinv = 1.0 / d
        self.G = G
        self.nu = F.shape[0]
        S = -(G @ sp.diags(self.dinv) @ G.T)
        self.S = spla.splu(S.tocsc())

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        vec = r.ndim == 1
        r2 = r[:, None] if vec else r
        ru, rp = r2[: self.nu], r2[self.nu:]
        us = self.dinv[:, None] * ru
        p = self.S.solve(np.ascontiguousarray(rp - self.G @ us))
        u = us - self.dinv[:, None] * (self.G.T @ p)
        out = np.vstack([u, p])
        return out[:, 0] if vec else out


class ExactInner:
    """Sparse LU of the local saddle matrix."""

    def __init__(self, A: sp.csr_matrix):
        self.lu = spla.splu(A.tocsc())

    def __call__(self, r):
        return self.lu.solve(np.ascontiguousarray(r, dtype=float))


class GmresInner:
    """GMRES on the local saddle matrix, preconditioned by SIMPLE."""

    def __init__(self, A: sp.csr_matrix, simple: SimpleInner, tol: float, restart: int = 100, maxiter: int = 500):
        self.A = A
        self.simple = simple
        self.tol = tol
        self.restart = restart
        self.maxiter = maxiter
        self.iterations = 0

    def _solve(self, r):
        res = gmres(lambda x: self.A @ x, r, self.simple, tol=self.tol, restart=self.restart, maxiter=self.maxiter)
        self.iterations += res.iterations
        return res.x

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if r.ndim == 1:
            return self._solve(r)
        return np.column_stack([self._solve(r[:, k]) for k in range(r.shape[1])])


def schur_reuse_policy(counter: int, n_reuse: int) -> bool:
    """Rebuild the Schur complement when ``counter % n_reuse == 0``."""
    if n_reuse < 1:
        raise ValueError("reuse period must be at least 1")
    return counter % n_reuse == 0


def make_inner(tangent: Tangent, j: int, mode: str, tol: float = 1e-2):
    if mode == "exact":
        return ExactInner(tangent.local(j))
    simple = SimpleInner(tangent.velocity_blocks[j], tangent.divergence_blocks[j])
    if mode == "simple":
        return simple
    if mode == "gmres":
        return GmresInner(tangent.local(j), simple, tol)
    raise ValueError(f"unknown inner mode {mode!r}")


def build_schur(tangent: Tangent, inners: list) -> tuple[np.ndarray, list[np.ndarray]]:
    """Dense Schur complement ``-sum_j Bt_j At_j^{-1} Bt_j^T``.

    Returns
    -------
    S : ndarray
    W : list of ndarray
        ``At_j^{-1} Bt_j^T`` per block (local rows by all multiplier columns).
    """
    nl = tangent.layout.n_multiplier_dofs
    S = np.zeros((nl, nl))
    Ws = []
    for j, inner in enumerate(inners):
        Bj = tangent.coupling_block(j)
        cols = np.unique(Bj.tocoo().row)
        W = np.zeros((Bj.shape[1], nl))
        if cols.size:
            rhs = Bj[cols].T.toarray()
            W[:, cols] = inner(rhs)
            S -= Bj @ W
        Ws.append(W)
    return S, Ws


class SaddlePreconditioner:
    """Block LDU preconditioner with periodic Schur rebuilds.

    Parameters
    ----------
    inner : {"simple", "exact", "gmres"}
    inner_tolerance : float
        Tolerance of the inner GMRES mode.
    schur_reuse : int
        Rebuild period counted in calls to :meth:`update`.
    """

    def __init__(self, inner: str = "simple", inner_tolerance: float = 1e-2, schur_reuse: int = 20):
        if schur_reuse < 1:
            raise ValueError("reuse period must be at least 1")
        self.inner_mode = inner
        self.inner_tolerance = inner_tolerance
        self.schur_reuse = schur_reuse
        self.counter = 0
        self.rebuilds: list[int] = []
        self.tangent: Tangent | None = None
        self.S = None
        self._S_lu = None
        self._W = None

    @classmethod
    def from_config(cls, cfg: KrylovConfig) -> "SaddlePreconditioner":
        return cls(cfg.inner, cfg.inner_tolerance, cfg.schur_reuse)

    def update(self, tangent: Tangent):
        """Refresh the local inverses; rebuild ``S`` according to the reuse policy."""
        self.tangent = tangent
        self.inners = [make_inner(tangent, j, self.inner_mode, self.inner_tolerance)
                       for j in range(tangent.layout.n_blocks)]
        if self._S_lu is None or schur_reuse_policy(self.counter, self.schur_reuse):
            self.S, self._W = build_schur(tangent, self.inners)
            if self.S.size:
                self._S_lu = linalg.lu_factor(self.S)
            else:
                self._S_lu = ()
            self.rebuilds.append(self.counter)
        self.counter += 1

    def apply(self, r: np.ndarray) -> np.ndarray:
        tangent = self.tangent
        lay = tangent.layout
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        m0 = lay.multiplier_start
        rl = r[m0:].copy()
        Z = []
        for j, inner in enumerate(self.inners):
            sl = lay.block(j)
            z = inner(r[sl])
            Z.append(z)
            if rl.size:
                rl -= tangent.coupling_block(j) @ z
        xl = linalg.lu_solve(self._S_lu, rl) if rl.size else rl
        for j in range(len(self.inners)):
            sl = lay.block(j)
            out[sl] = Z[j] - self._W[j] @ xl if rl.size else Z[j]
        out[m0:] = xl
        return out

    __call__ = apply

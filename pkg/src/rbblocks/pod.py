"""Weighted POD, supremizer enrichment and X-orthonormal Gram-Schmidt."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import linalg

DROP_THRESHOLD = 1e-8


@dataclass
class SnapshotMatrix:
    """Snapshots of one field on one reference block.

    ``provenance[k]`` is the (geometry sample, timestep) pair of column ``k``.
    """

    kind: str
    field: str
    data: np.ndarray
    provenance: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError("snapshot data must be a matrix")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("snapshots contain non-finite entries")
        if self.provenance and len(self.provenance) != self.data.shape[1]:
            raise ValueError("one provenance entry per column required")

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]

    def extend(self, columns: np.ndarray, provenance: list[tuple[int, int]]):
        columns = np.asarray(columns, dtype=float).reshape(self.data.shape[0], -1)
        self.data = np.hstack([self.data, columns])
        self.provenance = list(self.provenance) + list(provenance)


@dataclass
class PodBasis:
    """X-orthonormal basis with its POD bookkeeping.

    Attributes
    ----------
    modes : ndarray, shape (n, N)
        Ordered as [POD modes | pressure supremizers | coupling supremizers].
    singular_values : ndarray
        All singular values of the weighted snapshot matrix.
    norm : str
        Name of the norm matrix (``"Xu"`` or ``"Xp"``).
    epsilon : float
    n_pod : int
    n_pressure_supremizers, n_coupling_supremizers : int
        Counts kept after Gram-Schmidt drops.
    dropped : int
    """

    modes: np.ndarray
    singular_values: np.ndarray
    norm: str = "X"
    epsilon: float = 0.0
    n_pod: int = 0
    n_pressure_supremizers: int = 0
    n_coupling_supremizers: int = 0
    dropped: int = 0

    @property
    def size(self) -> int:
        return self.modes.shape[1]


def energy_truncation(singular_values: np.ndarray, epsilon: float) -> int:
    """Smallest ``N`` whose leading squared singular values hold ``1 - epsilon^2`` of the total."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    s2 = np.asarray(singular_values, dtype=float) ** 2
    total = s2.sum()
    if total == 0.0:
        return 1
    ratio = np.cumsum(s2) / total
    target = 1.0 - epsilon**2
    return int(min(np.searchsorted(ratio, target - 1e-12 * target) + 1, len(s2)))


def weighted_pod(S, X=None, epsilon: float = 1e-3, norm: str = "X", n_modes: int | None = None) -> PodBasis:
    """POD of the columns of ``S`` orthonormal in the ``X`` inner product.

    Factors ``X = H^T H``, takes the thin SVD ``H S = U s Z^T`` and returns
    ``H^{-1} U`` truncated by the energy criterion (or to ``n_modes``).

    Raises
    ------
    linalg.NotSPDError
        If ``X`` is not SPD.
    ValueError
        On an empty snapshot set.
    """
    data = S.data if isinstance(S, SnapshotMatrix) else np.asarray(S, dtype=float)
    if data.ndim != 2 or data.shape[1] == 0:
        raise ValueError("empty snapshot set")
    if X is None:
        U, s, _ = linalg.economy_svd(data)
        modes_all = U
    else:
        H = linalg.cholesky(X)
        U, s, _ = linalg.economy_svd(H @ data)
        modes_all = sla.solve_triangular(H, U, lower=False)
    N = n_modes if n_modes is not None else energy_truncation(s, epsilon)
    N = max(1, min(N, modes_all.shape[1]))
    return PodBasis(modes_all[:, :N].copy(), s, norm=norm, epsilon=epsilon, n_pod=N)


def _xdot(X, a, b):
    return float(a @ (X @ b)) if X is not None else float(a @ b)


def gram_schmidt(base: np.ndarray, extra: np.ndarray, X=None, threshold: float = DROP_THRESHOLD):
    """Append ``extra`` columns to an X-orthonormal ``base``.

    Each candidate is projected out twice (classical Gram-Schmidt with
    reorthogonalization) and dropped when its remaining X-norm falls below
    ``threshold`` times its original X-norm.

    Returns the new basis and a boolean mask of accepted extra columns.
    """
    base = np.asarray(base, dtype=float)
    n = base.shape[0]
    extra = np.asarray(extra, dtype=float).reshape(n, -1)
    cap = base.shape[1] + extra.shape[1]
    Q = np.zeros((n, cap))
    XQ = np.zeros((n, cap))
    k = base.shape[1]
    Q[:, :k] = base
    XQ[:, :k] = X @ base if X is not None else base
    accepted = []
    for col in range(extra.shape[1]):
        v = extra[:, col].copy()
        n0 = np.sqrt(max(_xdot(X, v, v), 0.0))
        if n0 == 0.0:
            accepted.append(False)
            continue
        for _ in range(2):
            v -= Q[:, :k] @ (XQ[:, :k].T @ v)
        Xv = X @ v if X is not None else v
        n1 = np.sqrt(max(float(v @ Xv), 0.0))
        if n1 < threshold * n0:
            accepted.append(False)
            continue
        Q[:, k] = v / n1
        XQ[:, k] = Xv / n1
        k += 1
        accepted.append(True)
    return Q[:, :k].copy(), np.array(accepted, dtype=bool)


def enrich_and_orthonormalize(base: PodBasis, extra, X=None, kind: str = "pressure") -> PodBasis:
    """Append supremizers to a basis keeping it X-orthonormal.

    ``kind`` selects which supremizer counter the accepted vectors go to.
    Near-dependent vectors are dropped and counted in ``dropped``.
    """
    modes, acc = gram_schmidt(base.modes, extra, X)
    n_acc = int(acc.sum())
    upd = dict(modes=modes, dropped=base.dropped + int((~acc).sum()))
    if kind == "pressure":
        upd["n_pressure_supremizers"] = base.n_pressure_supremizers + n_acc
    elif kind == "coupling":
        upd["n_coupling_supremizers"] = base.n_coupling_supremizers + n_acc
    else:
        raise ValueError(f"unknown supremizer kind {kind!r}")
    return replace(base, **upd)


def _free_solver(Xu, free):
    Xff = sp.csr_matrix(Xu)[free][:, free].tocsc()
    return spla.splu(Xff)


def pressure_supremizers(ops, pressure_modes: np.ndarray, free: np.ndarray | None = None) -> np.ndarray:
    """Velocity fields ``s`` with ``Xu s = D^T eta`` for each pressure mode ``eta``.

    The solve is restricted to the DOFs in ``free`` (walls stay zero).
    """
    space = ops.space
    free = space.free_dofs if free is None else free
    eta = np.asarray(pressure_modes, dtype=float).reshape(space.n_p, -1)
    rhs = (ops.D.T @ eta)[free]
    out = np.zeros((space.n_u, eta.shape[1]))
    if eta.shape[1]:
        out[free] = _free_solver(ops.Xu, free).solve(np.ascontiguousarray(rhs))
    return out


def coupling_supremizers(ops, coupling_matrices: list, free: np.ndarray | None = None) -> np.ndarray:
    """Velocity fields ``z_l`` with ``Xu z_l = B^T e_l`` for every row of every coupling matrix."""
    space = ops.space
    free = space.free_dofs if free is None else free
    if not coupling_matrices:
        return np.zeros((space.n_u, 0))
    Bt = sp.vstack([sp.csr_matrix(B) for B in coupling_matrices]).T.tocsr()
    rhs = Bt[free].toarray()
    out = np.zeros((space.n_u, rhs.shape[1]))
    out[free] = _free_solver(ops.Xu, free).solve(np.ascontiguousarray(rhs))
    return out

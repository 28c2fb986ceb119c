import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rbblocks import linalg
from rbblocks.fem import TaylorHoodSpace, assemble_static
from rbblocks.mesh import generate_reference_block


def test_svd_diagonal():
    _, s, _ = linalg.economy_svd(np.diag([3.0, 2.0, 1.0]))
    assert np.allclose(s, [3, 2, 1], atol=1e-14)


def test_svd_rank_one(rng):
    u, v = rng.normal(size=6), rng.normal(size=4)
    _, s, _ = linalg.economy_svd(np.outer(u, v))
    assert abs(s[0] - np.linalg.norm(u) * np.linalg.norm(v)) < 1e-12 and np.all(s[1:] <= 1e-12)


def test_svd_random_contract(rng):
    A = rng.normal(size=(20, 7))
    U, s, V = linalg.economy_svd(A)
    assert U.shape == (20, 7) and V.shape == (7, 7)
    assert np.linalg.norm(U * s @ V.T - A) <= 1e-10 * np.linalg.norm(A)
    assert np.allclose(U.T @ U, np.eye(7), atol=1e-10) and np.allclose(V.T @ V, np.eye(7), atol=1e-10)
    assert np.all(np.diff(s) <= 0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_svd_reconstruction_property(A):
    U, s, V = linalg.economy_svd(A)
    assert np.linalg.norm(U * s @ V.T - A) <= 1e-10 * max(np.linalg.norm(A), 1.0)
    assert np.all(np.diff(s) <= 1e-12)


def test_svd_rejects_nan():
    with pytest.raises(ValueError):
        linalg.economy_svd(np.array([[np.nan]]))


def test_cholesky_examples(rng):
    assert np.allclose(linalg.cholesky(np.eye(3)), np.eye(3))
    assert np.allclose(linalg.cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    A = rng.normal(size=(8, 8))
    X = A.T @ A + np.eye(8)
    H = linalg.cholesky(X)
    assert np.allclose(H, np.triu(H))
    assert np.linalg.norm(H.T @ H - X) <= 1e-10 * np.linalg.norm(X)


def test_cholesky_not_spd():
    with pytest.raises(linalg.NotSPDError):
        linalg.cholesky(np.diag([1.0, -1.0]))


def test_inf_sup_identity_and_zero_row():
    I = np.eye(3)
    assert abs(linalg.generalized_min_singular(I, I, I) - 1) < 1e-14
    D = np.eye(3)
    D[1] = 0
    assert linalg.generalized_min_singular(D, I, I) <= 1e-12


def test_inf_sup_taylor_hood_vs_eigen_oracle():
    ops = assemble_static(TaylorHoodSpace(generate_reference_block("T1", 1)), 1.0, 1.0)
    D, Xu, Xp = (linalg.as_dense(M) for M in (ops.D, ops.Xu, ops.Xp))
    beta = linalg.generalized_min_singular(D, Xu, Xp)
    lam = sla.eigh(D @ np.linalg.solve(Xu, D.T), Xp, eigvals_only=True)
    assert beta > 0
    assert abs(beta - np.sqrt(lam[0])) < 1e-8


def test_lu_roundtrip_and_singular(rng):
    A = rng.normal(size=(5, 5)) + 5 * np.eye(5)
    b = rng.normal(size=5)
    assert np.allclose(A @ linalg.lu_solve(linalg.lu_factor(A), b), b)
    with pytest.raises(np.linalg.LinAlgError):
        linalg.lu_factor(np.zeros((2, 2)))


def test_spmv_sparse_dense_agree(rng):
    import scipy.sparse as sp

    A = sp.random(10, 10, density=0.3, random_state=1)
    x = rng.normal(size=10)
    assert np.allclose(linalg.spmv(A, x), A.toarray() @ x)

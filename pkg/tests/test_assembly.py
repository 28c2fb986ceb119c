import numpy as np
import pytest

from conftest import poiseuille_build
from rbblocks.assembly import bdf_coefficients, make_layout
from rbblocks.workbench.config import BlockSpec, ConfigError, CouplingConfig, GeometryConfig, Scenario, TimeConfig
from rbblocks.workbench.scenario import build_system


def test_bdf_coefficients():
    assert bdf_coefficients(1) == ((1.0,), 1.0)
    (a1, a2), b = bdf_coefficients(2)
    assert (a1, a2, b) == (4 / 3, -1 / 3, 2 / 3)
    with pytest.raises(ValueError):
        bdf_coefficients(3)


def test_layout_order():
    lay = make_layout([4, 6], [2, 3], [5, 5])
    assert lay.velocity[0] == slice(0, 4) and lay.pressure[0] == slice(4, 6)
    assert lay.velocity[1] == slice(6, 12) and lay.pressure[1] == slice(12, 15)
    assert lay.multipliers == [slice(15, 20), slice(20, 25)] and lay.size == 25


@pytest.fixture(scope="module")
def bent_pair():
    sc = Scenario(geometry=GeometryConfig(2, (BlockSpec("T2", bend=0.3), BlockSpec("T1", parent=0))),
                  coupling=CouplingConfig(3))
    b = build_system(sc, flow_rate=lambda t: 1.0 + t)
    return b.system


def test_missing_history(bent_pair):
    bent_pair.reset()
    with pytest.raises(RuntimeError):
        bent_pair.residual(bent_pair.zeros(), 0.0)


def test_zero_state_zero_data(bent_pair):
    s = poiseuille_build(flow=0.0, steady=False).system
    s.reset(s.zeros())
    assert np.all(s.residual(s.zeros(), 0.1) == 0)


def test_steady_state_with_matching_history(poiseuille_pair):
    _, res = poiseuille_pair
    Ystar = res.state
    s = poiseuille_build(steady=False).system
    s.reset(Ystar)
    s.push(Ystar)
    R = s.residual(Ystar, 0.0)
    assert np.linalg.norm(R) <= 1e-8 * max(1.0, np.linalg.norm(Ystar))


def test_multiplier_linearity(bent_pair, rng):
    s = bent_pair
    s.reset(rng.normal(size=s.size))
    Y = rng.normal(size=s.size)
    i = 1
    e = np.zeros(s.size)
    k = s.layout.multipliers[i].start + 3
    e[k] = 1.0
    dR = s.residual(Y + e, 0.2) - s.residual(Y, 0.2)
    expect = np.zeros(s.size)
    for (ii, j), B in s.B.items():
        if ii == i:
            expect[s.layout.velocity[j]] = s.dtb() * B.toarray()[3]
    assert np.allclose(dR, expect, atol=1e-12)


def test_multiplier_rows_are_constraint(bent_pair, rng):
    s = bent_pair
    s.reset(rng.normal(size=s.size))
    Y = rng.normal(size=s.size)
    t = 0.3
    R = s.residual(Y, t)
    n_if = len(s.interfaces)
    for i, sl in enumerate(s.layout.multipliers):
        r = sum(B @ Y[s.layout.velocity[j]] for (ii, j), B in s.B.items() if ii == i)
        if i >= n_if:
            r = r - s.inlet_rhs(i - n_if, t)
        assert np.allclose(R[sl] / s.dtb(), r, atol=1e-12)
    assert np.allclose(s.inlet_rhs(0, t), (1 + t) * s.inlet_data[0])


def test_block_decomposition(bent_pair, rng):
    s = bent_pair
    H = [rng.normal(size=s.size) for _ in range(2)]
    s.reset(H[1])
    s.push(H[0])
    (a1, a2), b = s.scheme()
    Y = rng.normal(size=s.size)
    Y[s.layout.multiplier_start:] = 0.0
    t = 0.1
    R = s.residual(Y, t)
    dtb = s.dt * b
    for j, sub in enumerate(s.subdomains):
        f = s.free[j]
        u = s.velocity(Y, j)
        p = s.pressure(Y, j)
        ops = sub.ops
        hist = a1 * H[0][s.layout.velocity[j]] + a2 * H[1][s.layout.velocity[j]]
        Ru = ops.M[f][:, f] @ (u[f] - hist) + dtb * ((ops.K @ u + ops.convective.vector(u) + ops.D.T @ p)[f]
                                                      - s.body_force(j, t))
        assert np.allclose(R[s.layout.velocity[j]], Ru, atol=1e-10)
        assert np.allclose(R[s.layout.pressure[j]], dtb * ops.D @ u, atol=1e-12)


def test_coupling_sparsity(bent_pair):
    s = bent_pair
    for (i, j), B in s.B.items():
        if i < len(s.interfaces):
            assert j in s.interfaces[i].blocks
        else:
            assert j == s.inlets[i - len(s.interfaces)].block
        assert B.nnz > 0


def test_tangent_structure(bent_pair, rng):
    s = bent_pair
    s.reset(rng.normal(size=s.size))
    J = s.tangent(s.zeros()).full()
    m0 = s.layout.multiplier_start
    assert J[m0:, m0:].nnz == 0 or abs(J[m0:, m0:]).max() == 0
    # zero velocity: no convective part and the matrix is symmetric
    assert abs(J - J.T).max() < 1e-12


def test_tangent_matches_finite_differences(bent_pair, rng):
    s = bent_pair
    s.reset(0.2 * rng.normal(size=s.size))
    Y = 0.5 * rng.normal(size=s.size)
    V = rng.normal(size=s.size)
    t = 0.05
    JV = s.tangent(Y, t).matvec(V)
    R0 = s.residual(Y, t)
    eps = np.array([1e-3, 1e-4, 1e-5, 1e-6])
    err = np.array([np.linalg.norm((s.residual(Y + e * V, t) - R0) / e - JV) for e in eps])
    slope = np.polyfit(np.log(eps), np.log(err), 1)[0]
    assert slope >= 0.9


def test_picard_drops_convective_derivative(bent_pair, rng):
    s = bent_pair
    s.reset(rng.normal(size=s.size))
    Y = rng.normal(size=s.size)
    s.linearization = "newton"
    Jn = s.tangent(Y).full()
    s.linearization = "picard"
    Jp = s.tangent(Y).full()
    s.linearization = "newton"
    j = 0
    f = s.free[j]
    N = s.subdomains[j].ops.convective.newton_matrix(s.velocity(Y, j))[f][:, f]
    sl = s.layout.velocity[j]
    assert abs((Jn - Jp)[sl, sl] - s.dtb() * N).max() < 1e-12


def test_bdf1_bootstrap(bent_pair, rng):
    s = bent_pair
    s.reset(rng.normal(size=s.size))
    assert s.scheme() == bdf_coefficients(1)
    s.push(rng.normal(size=s.size))
    assert s.scheme() == bdf_coefficients(2)
    s.push(rng.normal(size=s.size))
    assert len(s.history) == 2


def test_invalid_settings():
    with pytest.raises((ConfigError, ValueError)):
        build_system(Scenario().replace(time=TimeConfig(dt=-1.0)))

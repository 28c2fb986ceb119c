import numpy as np
import pytest

from conftest import poiseuille_build, poiseuille_velocity
from rbblocks.coupling import build_multiplier_basis, reference_port_coupling
from rbblocks.fem import interpolate
from rbblocks.mesh import inlet, outlet
from rbblocks.pod import (coupling_supremizers, enrich_and_orthonormalize, pressure_supremizers, weighted_pod)
from rbblocks.rom import (ROM_MAX_NEWTON, identity_bases, project_operators, reduced_convective,
                          reduced_residual, reduced_schur_singular_values, reduced_tangent, rom_newton_solve,
                          rom_time_loop)
from rbblocks.solver import NewtonConfig, SingularBlockError
from rbblocks.timeloop import TimeSchedule, fom_time_loop
from rbblocks.workbench.config import BlockSpec, CouplingConfig, GeometryConfig, Scenario
from rbblocks.workbench.scenario import build_system


@pytest.fixture(scope="module")
def small_chain():
    """Two coarse tubes, the second one bent, with a low multiplier order."""
    sc = Scenario(geometry=GeometryConfig(2, (BlockSpec("T1"), BlockSpec("T2", parent=0, bend=0.3))),
                  coupling=CouplingConfig(2))
    return build_system(sc, flow_rate=lambda t: 1.0)


def random_bases(system, rng, nu=4, npr=3):
    vel, pre = [], []
    for j, sub in enumerate(system.subdomains):
        V = np.zeros((sub.space.n_u, nu))
        V[system.free[j]] = rng.normal(size=(len(system.free[j]), nu))
        vel.append(V)
        pre.append(rng.normal(size=(sub.space.n_p, npr)))
    return vel, pre


def test_identity_reduction_reproduces_operators(small_chain):
    s = small_chain.system
    vel, pre = identity_bases(s)
    m = project_operators(s, vel, pre, convection="exact")
    for j, blk in enumerate(m.blocks):
        for A, Ah in ((blk.M, s.M[j]), (blk.K, s.K[j]), (blk.D, s.D[j])):
            assert np.allclose(A, Ah.toarray(), atol=1e-12 * abs(Ah).max())
    for k, B in s.B.items():
        assert np.allclose(m.B[k], B.toarray(), atol=1e-14)
    assert [sl.stop - sl.start for sl in m.layout.multipliers] == \
        [sl.stop - sl.start for sl in s.layout.multipliers]


def test_single_mode_and_symmetry(small_chain, rng):
    s = small_chain.system
    vel, pre = random_bases(s, rng, nu=1, npr=1)
    m = project_operators(s, vel, pre)
    assert all(b.M.shape == (1, 1) and b.M[0, 0] > 0 for b in m.blocks)
    vel, pre = random_bases(s, rng, nu=5)
    m = project_operators(s, vel, pre)
    for b in m.blocks:
        assert np.max(np.abs(b.M - b.M.T)) <= 1e-12 * np.abs(b.M).max()
        assert np.all(np.linalg.eigvalsh(b.M) > 0)


def test_projection_errors(small_chain, rng):
    s = small_chain.system
    vel, pre = random_bases(s, rng)
    with pytest.raises(ValueError):
        project_operators(s, vel[:1], pre[:1])
    with pytest.raises(ValueError):
        project_operators(s, [v[:-1] for v in vel], pre)
    with pytest.raises(ValueError):
        project_operators(s, vel, pre, n_c=9)
    with pytest.raises(ValueError):
        project_operators(s, vel, pre, convection="fast")


def test_reduced_convective(small_chain, rng):
    s = small_chain.system
    vel, pre = random_bases(s, rng, nu=5)
    m = project_operators(s, vel, pre, convection="truncated")
    for j, blk in enumerate(m.blocks):
        uN = rng.normal(size=blk.n_u)
        assert np.all(reduced_convective(m, j, np.zeros(blk.n_u)) == 0)
        c = reduced_convective(m, j, uN)
        ce = reduced_convective(m, j, uN, "exact")
        assert np.max(np.abs(c - ce)) <= 1e-12 * max(1.0, np.abs(ce).max())
        assert np.allclose(reduced_convective(m, j, 1.7 * uN), 1.7**2 * c, rtol=1e-12, atol=0)
        with pytest.raises(ValueError):
            reduced_convective(m, j, uN[:-1])


def test_truncation_window(small_chain, rng):
    s = small_chain.system
    vel, pre = random_bases(s, rng, nu=5)
    m = project_operators(s, vel, pre, n_c=2)
    uN = rng.normal(size=5)
    w = uN.copy()
    w[2:] = 0.0
    # with the tail set to zero the truncated and exact forms agree
    assert np.allclose(reduced_convective(m, 0, w), reduced_convective(m, 0, w, "exact"), atol=1e-12)
    assert m.blocks[0].tensor.shape == (5, 2, 2)


def test_identity_rom_matches_fom_trajectory():
    b = poiseuille_build(steady=False, flow=1.0)
    s = b.system
    sched = TimeSchedule(dt=2.5e-3, t0=0.0, T=0.01, ramp_start=-0.005)
    cfg = NewtonConfig(tolerance=1e-12)
    fom = fom_time_loop(s, sched, cfg)
    vel, pre = identity_bases(s)
    m = project_operators(s, vel, pre, convection="exact")
    rom = rom_time_loop(m, sched, NewtonConfig(1e-12, ROM_MAX_NEWTON))
    for Yf, YN in zip(fom.states, rom.states):
        assert np.linalg.norm(m.reconstruct(YN) - Yf) <= 1e-9 * np.linalg.norm(Yf)


def test_stokes_rom_one_newton_iteration(small_chain, rng):
    sc = small_chain.scenario
    b = build_system(sc, flow_rate=lambda t: 1.0, convection=False)
    s = b.system
    vel, pre = identity_bases(s)
    m = project_operators(s, vel, pre)
    m.reset(m.zeros())
    res = rom_newton_solve(m, m.zeros(), 0.0, NewtonConfig(1e-10))
    assert res.iterations == 1


def test_tangent_is_constant(small_chain):
    s = small_chain.system
    vel, pre = identity_bases(s)
    m = project_operators(s, vel, pre, convection="exact")
    m.reset(m.zeros())
    T1 = reduced_tangent(m)
    m.push(m.zeros())
    T2 = reduced_tangent(m)
    m.push(m.zeros())
    assert reduced_tangent(m) is T2 and T1 is not T2
    assert T1.dtb == s.dt and abs(T2.dtb - s.dt * 2 / 3) < 1e-15
    # the tangent is the convection-free Jacobian of the reduced residual
    rng = np.random.default_rng(5)
    Y = rng.normal(size=m.size)
    V = rng.normal(size=m.size)
    s.convection = False
    try:
        h = 1e-6
        fd = (reduced_residual(m, Y + h * V, 0.0) - reduced_residual(m, Y - h * V, 0.0)) / (2 * h)
    finally:
        s.convection = True
    JV = T2.matrix() @ V
    assert np.linalg.norm(fd - JV) <= 1e-7 * np.linalg.norm(JV)
    r = rng.normal(size=m.size)
    assert np.allclose(T2.matrix() @ T2.solve(r), r, atol=1e-9 * np.abs(r).max())


def _store_bases(system, state, coupling):
    """Bases from one FOM state plus supremizers, in the reference frame."""
    vel, pre = [], []
    for j, sub in enumerate(system.subdomains):
        ops = sub.ops
        u = sub.space.pullback @ system.velocity(state, j)
        p = system.pressure(state, j)
        vb = weighted_pod(u[:, None], ops.Xu, 1e-3)
        pb = weighted_pod(p[:, None], ops.Xp, 1e-3)
        vb = enrich_and_orthonormalize(vb, pressure_supremizers(ops, pb.modes), ops.Xu, "pressure")
        if coupling:
            basis = build_multiplier_basis(system.basis.order, 2)
            Bs = [reference_port_coupling(sub.space, tag, basis) for tag in (inlet(0), outlet(0))]
            vb = enrich_and_orthonormalize(vb, coupling_supremizers(ops, Bs), ops.Xu, "coupling")
        vel.append(vb.modes)
        pre.append(pb.modes)
    return vel, pre


def test_missing_coupling_supremizers_negative_control(poiseuille_pair):
    build, res = poiseuille_pair
    s = build.system
    vel, pre = _store_bases(s, res.state, coupling=False)
    m = project_operators(s, vel, pre)
    sv = reduced_schur_singular_values(m)
    assert sv[-1] < 1e-10 * sv[0]
    with pytest.raises(SingularBlockError):
        reduced_tangent(m, s.dt)
    vel, pre = _store_bases(s, res.state, coupling=True)
    m = project_operators(s, vel, pre)
    sv = reduced_schur_singular_values(m)
    assert sv[-1] > 1e-10 * sv[0]


def test_poiseuille_rom_reconstruction(poiseuille_pair):
    build, res = poiseuille_pair
    s = build.system
    vel, pre = _store_bases(s, res.state, coupling=True)
    m = project_operators(s, vel, pre, convection="exact")
    out = rom_newton_solve(m, m.zeros(), 0.0, NewtonConfig(1e-12, ROM_MAX_NEWTON))
    Y = m.reconstruct(out.state)
    for j, sub in enumerate(s.subdomains):
        exact = interpolate(sub.space, poiseuille_velocity)
        u = s.velocity(Y, j)
        assert np.linalg.norm(u - exact) <= 1e-4 * np.linalg.norm(exact)
    scale = np.abs(out.state).max()
    for i in range(len(s.interfaces)):
        jump = sum(B @ m.velocity(out.state, j) for (ii, j), B in m.B.items() if ii == i)
        assert np.linalg.norm(jump) <= 1e-10 * scale


def test_project_roundtrip(poiseuille_pair):
    build, res = poiseuille_pair
    s = build.system
    vel, pre = _store_bases(s, res.state, coupling=True)
    m = project_operators(s, vel, pre)
    Y = res.state
    assert np.linalg.norm(m.reconstruct(m.project(Y)) - Y) <= 1e-10 * np.linalg.norm(Y)

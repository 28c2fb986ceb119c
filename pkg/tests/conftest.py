import numpy as np
import pytest

from rbblocks.mesh import outlet
from rbblocks.solver import NewtonConfig, newton_solve
from rbblocks.workbench.config import CouplingConfig
from rbblocks.workbench.scenario import build_system, chain_scenario

MU = 0.04
U_MAX = 1.5  # unit flow rate through a unit-width port


def poiseuille_velocity(x):
    return np.stack([U_MAX * (1 - 4 * x[:, 1] ** 2), 0 * x[:, 0]], axis=1)


def poiseuille_build(kinds=("T1", "T1"), refinement=2, order=5, steady=True, convection=True, flow=1.0):
    """Straight chain with the exact outlet traction of Poiseuille flow of rate ``flow``."""
    sc = chain_scenario(kinds, refinement, coupling=CouplingConfig(order))
    U = U_MAX * flow

    def h(x, t, n):
        return np.stack([0 * x[:, 0], -8 * MU * U * x[:, 1]], axis=1)

    tractions = {len(kinds) - 1: {outlet(0): h}}
    return build_system(sc, steady=steady, flow_rate=lambda t: flow, tractions=tractions, convection=convection)


def solve_steady(build, tol=1e-12, krylov=None):
    sysm = build.system
    return newton_solve(sysm, sysm.zeros(), 0.0, NewtonConfig(tolerance=tol), krylov)


@pytest.fixture(scope="session")
def poiseuille_pair():
    b = poiseuille_build()
    return b, solve_steady(b)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

"""Steady Poiseuille flow through two coupled straight tubes.

Two T1 blocks are glued at a port by Chebyshev multipliers of order 5. The
inlet carries the parabolic profile with unit flow rate and the outlet the
matching traction, so the coupled solution should be the exact parabola in
both blocks and continuous across the interface.
"""

import numpy as np

from rbblocks.fem import interpolate
from rbblocks.mesh import outlet
from rbblocks.solver import NewtonConfig, newton_solve
from rbblocks.workbench.metrics import probes
from rbblocks.workbench.scenario import build_system, chain_scenario

MU, U_MAX = 0.04, 1.5


def exact(x):
    return np.stack([U_MAX * (1 - 4 * x[:, 1] ** 2), 0 * x[:, 0]], axis=1)


def traction(x, t, n):
    return np.stack([0 * x[:, 0], -8 * MU * U_MAX * x[:, 1]], axis=1)


sc = chain_scenario(("T1", "T1"), 2)
build = build_system(sc, steady=True, flow_rate=lambda t: 1.0, tractions={1: {outlet(0): traction}})
s = build.system
print(f"{len(s.subdomains)} blocks, {s.size} unknowns, {len(s.interfaces)} interface")

res = newton_solve(s, s.zeros(), 0.0, NewtonConfig(1e-10))
print(f"Newton: {res.iterations} iterations, residuals {['%.1e' % r for r in res.residuals]}")

for j, sub in enumerate(s.subdomains):
    e = s.velocity(res.state, j) - interpolate(sub.space, exact)
    print(f"block {j}: H1 distance to the parabola {np.sqrt(e @ (sub.ops.Xu @ e)):.2e}")
print(f"interface jump {np.linalg.norm(s.interface_jump(res.state, 0)):.2e}")

pr = probes(s, res.state)
print(f"inflow {pr.inflow:.6f}, outflow {pr.outflow[0]:.6f}, inlet pressure {pr.inlet_pressure:.4f}")
print(f"wall shear stress max {pr.wss_max:.4f} (analytic {4 * MU * U_MAX:.4f})")

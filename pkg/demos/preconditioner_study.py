"""FGMRES iteration counts of the block LDU preconditioner.

An unsteady run on chains of two and four straight tubes, with the local
saddle solves replaced by one SIMPLE sweep. The Schur complement of the
multipliers is rebuilt every step or reused for 20 tangent updates.
"""

import numpy as np

from rbblocks.solver import KrylovConfig, LinearSolver, NewtonConfig
from rbblocks.timeloop import TimeSchedule, fom_time_loop
from rbblocks.workbench.config import CouplingConfig
from rbblocks.workbench.scenario import build_system, chain_scenario

STEPS = 6

for n_blocks in (2, 4):
    for order in (0, 5):
        for reuse in (1, 20):
            sc = chain_scenario(("T1",) * n_blocks, 2, coupling=CouplingConfig(order))
            t = sc.time
            sched = TimeSchedule(t.dt, t.t0, t.t0 + STEPS * t.dt, t.ramp_start)
            solver = LinearSolver(KrylovConfig("fgmres", 1e-8, 200, 2000, "simple", 1e-2, reuse))
            fom_time_loop(build_system(sc).system, sched, NewtonConfig(1e-8), solver)
            print(f"blocks {n_blocks}  order {order}  reuse {reuse:>2}: "
                  f"mean FGMRES {np.mean(solver.iterations):6.2f} over {len(solver.iterations)} solves")

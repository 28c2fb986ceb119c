"""Offline-online reduction of a two-block chain.

Snapshots of a straight tube feeding a bent tube are collected on a few
sampled geometries. Each block kind gets its own POD basis enriched with
pressure and coupling supremizers. The reduced model is then run on a geometry
from the sample set and compared with the full-order trajectory.
"""

from rbblocks.solver import KrylovConfig
from rbblocks.workbench.config import OfflineConfig, SolverConfig
from rbblocks.workbench.metrics import compute_errors
from rbblocks.workbench.offline import basis_table, build_bases, collect_snapshots
from rbblocks.workbench.runner import run_fom, run_rom
from rbblocks.workbench.scenario import chain_scenario, sample_geometries

sc = chain_scenario(
    ("T1", "T2"), 2,
    solver=SolverConfig(krylov=KrylovConfig(method="direct")),
    offline=OfflineConfig(samples=4, seed=0, half_widths={"T1": {"bend": 0.3},
                                                           "T2": {"bend": 0.3, "length_ratio": 0.2}}),
)
store = collect_snapshots(sc)
online = sample_geometries(sc, sc.offline.samples)[1]
print(f"online geometry: {online}")

rep_f, traj_f, build = run_fom(sc, online, with_probes=False)
print(f"FOM: {build.system.size} unknowns, solve {rep_f.solve_time:.2f}s")

for eps_u in (1e-1, 1e-2, 1e-3):
    bases = build_bases(store, sc, eps_u, 1e-5)
    rep_r, traj_r, model = run_rom(sc, bases, online, with_probes=False, build=build)
    e_u, e_p = compute_errors(build.system, traj_f.states, traj_r.states, traj_f.times)
    print(f"\neps_u = {eps_u:g}: {model.size} reduced unknowns, solve {rep_r.solve_time:.3f}s, "
          f"e_u = {e_u:.2e}, e_p = {e_p:.2e}")
    print("\n".join(basis_table(bases, store)))

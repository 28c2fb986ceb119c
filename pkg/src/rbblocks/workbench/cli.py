"""Command line interface.

Exit codes: 0 success, 1 solver failure, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from ..mesh import BlockKind
from ..solver.krylov import KrylovConfig
from ..solver.newton import NewtonError
from ..solver.preconditioner import SingularBlockError
from ..timeloop import StepFailure
from . import io
from .config import ConfigError, Scenario, load_scenario
from .metrics import compute_errors

log = logging.getLogger("rbblocks")

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="scenario YAML file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="offline sampling seed")
    p.add_argument("--output-dir", type=Path, default=argparse.SUPPRESS, help="directory for all outputs")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="rbblocks", parents=[common],
                                     description="Reduced basis element flow solver on deformed building blocks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", parents=[common], help="generate reference block meshes")
    p.add_argument("--kind", action="append", choices=[k.value for k in BlockKind])
    p.add_argument("--refinement", type=int)

    p = sub.add_parser("snapshot", parents=[common], help="run the FOM on sampled geometries")
    p.add_argument("--samples", type=int)
    p.add_argument("--stride", type=int, default=1, help="keep every k-th time step")

    p = sub.add_parser("pod", parents=[common], help="compute reduced bases from a snapshot store")
    p.add_argument("--store", type=Path)
    p.add_argument("--eps-u", type=float)
    p.add_argument("--eps-p", type=float)
    p.add_argument("--no-pressure-supremizers", action="store_true")
    p.add_argument("--no-coupling-supremizers", action="store_true")

    p = sub.add_parser("run", parents=[common], help="time loop on the scenario geometry")
    p.add_argument("--mode", choices=["fom", "rom"], default="fom")
    p.add_argument("--basis", type=Path)
    p.add_argument("--dump-matrices", action="store_true", help="write block matrices as row/col/value triplets")

    p = sub.add_parser("compare", parents=[common], help="FOM and ROM on the same geometry with error metrics")
    p.add_argument("--basis", type=Path)

    p = sub.add_parser("precond-bench", parents=[common], help="FGMRES iteration counts per preconditioner setting")
    p.add_argument("--inner", action="append", choices=["simple", "exact", "gmres"])
    p.add_argument("--reuse", action="append", type=int)
    p.add_argument("--steps", type=int, default=10, help="number of time steps after the ramp")
    return parser


def _defaults(args):
    for name, value in (("config", None), ("seed", None), ("output_dir", Path("out")), ("verbose", 0)):
        if not hasattr(args, name):
            setattr(args, name, value)
    return args


def _scenario(args) -> Scenario:
    sc = load_scenario(args.config)
    if args.seed is not None:
        sc = sc.replace(offline=dataclasses.replace(sc.offline, seed=args.seed))
    return sc


def cmd_mesh(args, sc: Scenario) -> int:
    from ..mesh import generate_reference_block

    ref = args.refinement or sc.geometry.refinement
    kinds = args.kind or [k.value for k in BlockKind]
    args.output_dir.mkdir(parents=True, exist_ok=True)
    for k in kinds:
        m = generate_reference_block(k, ref)
        path = args.output_dir / f"mesh_{k}_r{ref}.txt"
        path.write_text(m.to_text())
        print(f"{k}: {m.n_vertices} vertices, {m.n_cells} cells -> {path}")
    return EXIT_OK


def cmd_snapshot(args, sc: Scenario) -> int:
    from .offline import collect_snapshots

    n = args.samples or sc.offline.samples
    store = collect_snapshots(sc, n, stride=args.stride)
    out = args.output_dir / "snapshots"
    store.save(out)
    for k in store.kinds:
        print(f"{k}: {store.velocity[k].n_snapshots} snapshots")
    print(f"failed samples: {len(store.failed)} of {n}; store -> {out}")
    return EXIT_SOLVER if len(store.failed) > 0.5 * n else EXIT_OK


def cmd_pod(args, sc: Scenario) -> int:
    from .offline import SnapshotStore, basis_table, build_bases, save_bases

    store = SnapshotStore.load(args.store or args.output_dir / "snapshots")
    bases = build_bases(store, sc, args.eps_u, args.eps_p, False if args.no_pressure_supremizers else None,
                        False if args.no_coupling_supremizers else None)
    out = args.output_dir / "basis"
    save_bases(bases, out)
    print("\n".join(basis_table(bases, store)))
    print(f"bases -> {out}")
    return EXIT_OK


def _bases(args):
    from .offline import load_bases

    return load_bases(args.basis or args.output_dir / "basis")


def dump_matrices(sc: Scenario, directory: Path):
    from .scenario import build_system

    directory.mkdir(parents=True, exist_ok=True)
    sysm = build_system(sc).system
    for j, sub in enumerate(sysm.subdomains):
        for name in ("M", "K", "D", "Xu", "Xp"):
            io.write_triplets(directory / f"block{j}_{name}.txt", getattr(sub.ops, name))
    for (i, j), B in sysm.B_full.items():
        io.write_triplets(directory / f"coupling{i}_block{j}.txt", B)


def cmd_run(args, sc: Scenario) -> int:
    from .runner import run_fom, run_rom

    if args.dump_matrices:
        dump_matrices(sc, args.output_dir / "matrices")
    if args.mode == "fom":
        rep, _, _ = run_fom(sc)
    else:
        rep, _, _ = run_rom(sc, _bases(args))
    rep.write(args.output_dir)
    s = rep.summary()
    print(f"{rep.mode}: {s['steps']} steps, setup {rep.setup_time:.3f}s, solve {rep.solve_time:.3f}s, "
          f"mean Newton {s['mean_newton_iterations']:.2f}, mean Krylov {s['mean_krylov_iterations']:.2f}")
    return EXIT_OK


def cmd_compare(args, sc: Scenario) -> int:
    from .runner import run_fom, run_rom

    bases = _bases(args)
    rf, tf, build = run_fom(sc)
    rr, tr, _ = run_rom(sc, bases)
    e_u, e_p = compute_errors(build.system, tf.states, tr.states, tf.times)
    rr.errors = {"e_u": e_u, "e_p": e_p}
    rf.write(args.output_dir)
    rr.write(args.output_dir)
    speedup = rf.solve_time / rr.solve_time if rr.solve_time > 0 else float("inf")
    summary = {"e_u": e_u, "e_p": e_p, "fom_solve_time": rf.solve_time, "rom_solve_time": rr.solve_time,
               "speedup": speedup}
    (args.output_dir / "compare.yaml").write_text(yaml.safe_dump(summary, sort_keys=False))
    print(f"e_u = {e_u:.3e}  e_p = {e_p:.3e}  solve-phase speedup = {speedup:.1f}x")
    return EXIT_OK


def cmd_precond_bench(args, sc: Scenario) -> int:
    from ..solver.newton import LinearSolver, NewtonConfig
    from ..timeloop import TimeSchedule, fom_time_loop
    from .scenario import build_system

    inners = args.inner or ["simple", "exact"]
    reuses = args.reuse or [sc.solver.krylov.schur_reuse]
    t = sc.time
    sched = TimeSchedule(t.dt, t.t0, t.t0 + args.steps * t.dt, t.ramp_start)
    build = build_system(sc)
    base = sc.solver.krylov
    rows = []
    for inner in inners:
        for reuse in reuses:
            kc = KrylovConfig("fgmres", base.tolerance, base.restart, base.max_iterations, inner,
                              base.inner_tolerance, reuse)
            solver = LinearSolver(kc)
            tic = time.perf_counter()
            fom_time_loop(build.system, sched, NewtonConfig(sc.solver.newton_tolerance,
                                                            sc.solver.newton_max_iterations), solver)
            its = solver.iterations
            rows.append((inner, reuse, float(np.mean(its)), int(np.max(its)), time.perf_counter() - tic))
            print(f"inner={inner:<7} reuse={reuse:<4} mean FGMRES {rows[-1][2]:7.2f}  max {rows[-1][3]:4d}  "
                  f"{rows[-1][4]:.2f}s")
    args.output_dir.mkdir(parents=True, exist_ok=True)
    io.write_csv(args.output_dir / "precond_bench.csv", ["inner", "reuse", "mean_iterations", "max_iterations",
                                                         "seconds"], rows)
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "snapshot": cmd_snapshot, "pod": cmd_pod, "run": cmd_run, "compare": cmd_compare,
            "precond-bench": cmd_precond_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _defaults(parser.parse_args(argv))
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        sc = _scenario(args)
        return COMMANDS[args.command](args, sc)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepFailure, NewtonError, SingularBlockError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

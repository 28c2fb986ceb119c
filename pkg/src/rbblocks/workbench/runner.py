"""Online runs of a scenario with the FOM or the ROM, and the run report."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..assembly import bdf_coefficients
from ..rom import ReducedModel, reduced_tangent, rom_time_loop
from ..solver.newton import LinearSolver, NewtonConfig
from ..timeloop import Trajectory, fom_time_loop
from . import io
from .config import Scenario
from .metrics import probes
from .offline import BlockBasis, reduce_system
from .scenario import Build, build_system


@dataclass
class RunReport:
    """Per-step solver statistics, timings and probe series of one run.

    ``total_time`` covers setup, solve and post-processing; the three parts
    are timed separately.
    """

    mode: str
    times: list[float]
    newton_iterations: list[int]
    krylov_iterations: list[int]
    step_times: list[float]
    step_labels: list[float]
    setup_time: float
    solve_time: float
    post_time: float
    total_time: float
    probes: dict[str, list[float]] = field(default_factory=dict)
    errors: dict[str, float] = field(default_factory=dict)
    sizes: dict[str, int] = field(default_factory=dict)

    def payload(self) -> dict:
        """Numeric content independent of wall-clock timings."""
        return {"times": self.times, "newton": self.newton_iterations, "krylov": self.krylov_iterations,
                "probes": self.probes, "errors": self.errors, "sizes": self.sizes}

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "steps": len(self.newton_iterations),
            "mean_newton_iterations": float(np.mean(self.newton_iterations)) if self.newton_iterations else 0.0,
            "mean_krylov_iterations": float(np.mean(self.krylov_iterations)) if self.krylov_iterations else 0.0,
            "setup_time": self.setup_time, "solve_time": self.solve_time, "post_time": self.post_time,
            "total_time": self.total_time, "errors": dict(self.errors), "sizes": dict(self.sizes),
        }

    def write(self, directory: str | Path, prefix: str | None = None):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        prefix = prefix or self.mode
        io.write_csv(d / f"{prefix}_steps.csv", ["step", "t", "newton", "krylov", "seconds"],
                     [(k, t, n, kr, s) for k, (t, n, kr, s) in enumerate(
                         zip(self.step_labels, self.newton_iterations, self.krylov_iterations,
                             self.step_times))])
        names = list(self.probes)
        io.write_csv(d / f"{prefix}_probes.csv", ["t"] + names,
                     [[t] + [self.probes[n][k] for n in names] for k, t in enumerate(self.times)])
        (d / f"{prefix}_report.yaml").write_text(yaml.safe_dump(self.summary(), sort_keys=False))


def probe_series(system, states, times) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {"inlet_pressure": [], "inflow": [], "wss_max": [], "wss_mean": []}
    for Y in states:
        pr = probes(system, Y)
        out["inlet_pressure"].append(pr.inlet_pressure)
        out["inflow"].append(pr.inflow)
        out["wss_max"].append(pr.wss_max)
        out["wss_mean"].append(pr.wss_mean)
        for k, q in enumerate(pr.outflow):
            out.setdefault(f"outflow_{k}", []).append(q)
    return out


def _report(mode, traj: Trajectory, setup, post, tic, probe_data, sizes) -> RunReport:
    rep = RunReport(mode, list(traj.times), list(traj.newton_iterations), list(traj.krylov_iterations),
                    list(traj.step_times), list(traj.step_labels), setup, traj.solve_time, post,
                    time.perf_counter() - tic, probe_data, sizes=sizes)
    return rep


def run_fom(sc: Scenario, nonaffine=None, with_probes: bool = True) -> tuple[RunReport, Trajectory, Build]:
    tic = time.perf_counter()
    build = build_system(sc, nonaffine)
    s = sc.solver
    newton = NewtonConfig(s.newton_tolerance, s.newton_max_iterations, s.linearization)
    solver = LinearSolver(s.krylov)
    setup = time.perf_counter() - tic
    traj = fom_time_loop(build.system, build.schedule, newton, solver)
    t1 = time.perf_counter()
    pr = probe_series(build.system, traj.states, traj.times) if with_probes else {}
    post = time.perf_counter() - t1
    rep = _report("fom", traj, setup, post, tic, pr, {"dofs": build.system.size})
    return rep, traj, build


def prepare_rom(sc: Scenario, bases: dict[str, BlockBasis], nonaffine=None, build: Build | None = None):
    """FOM assembly on the online geometry, projection and tangent factorization."""
    build = build or build_system(sc, nonaffine)
    model = reduce_system(build, bases, sc)
    dt = sc.time.dt
    for sigma in range(1, sc.time.bdf_order + 1):
        reduced_tangent(model, dt * bdf_coefficients(sigma)[1])
    return build, model


def run_rom(sc: Scenario, bases: dict[str, BlockBasis], nonaffine=None, with_probes: bool = True,
            build: Build | None = None) -> tuple[RunReport, Trajectory, ReducedModel]:
    """Reduced run; the returned trajectory holds reconstructed full-order states."""
    tic = time.perf_counter()
    build, model = prepare_rom(sc, bases, nonaffine, build)
    newton = NewtonConfig(sc.solver.newton_tolerance, sc.rom.newton_max_iterations)
    setup = time.perf_counter() - tic
    rtraj = rom_time_loop(model, build.schedule, newton)
    t1 = time.perf_counter()
    full = Trajectory(list(rtraj.times), [model.reconstruct(y) for y in rtraj.states], rtraj.newton_iterations,
                      rtraj.krylov_iterations, rtraj.step_times, rtraj.step_labels, rtraj.solve_time)
    pr = probe_series(build.system, full.states, full.times) if with_probes else {}
    post = time.perf_counter() - t1
    sizes = {"dofs": model.size, "fom_dofs": build.system.size}
    rep = _report("rom", rtraj, setup, post, tic, pr, sizes)
    return rep, full, model

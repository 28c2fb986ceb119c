"""Offline phase: snapshot collection on sampled geometries and per-kind reduced bases."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..coupling import build_multiplier_basis, reference_port_coupling
from ..mesh import BlockKind, FacetKind
from ..pod import (PodBasis, SnapshotMatrix, coupling_supremizers, enrich_and_orthonormalize, pressure_supremizers,
                   weighted_pod)
from ..rom import ReducedModel, project_operators
from ..solver.newton import LinearSolver, NewtonConfig
from ..timeloop import StepFailure, fom_time_loop
from . import io
from .config import ConfigError, Scenario
from .scenario import build_system, reference_operators, sample_geometries

log = logging.getLogger(__name__)


@dataclass
class SnapshotStore:
    """Velocity and pressure snapshots per block kind."""

    velocity: dict[str, SnapshotMatrix] = field(default_factory=dict)
    pressure: dict[str, SnapshotMatrix] = field(default_factory=dict)
    samples: list = field(default_factory=list)
    failed: list[int] = field(default_factory=list)

    def add(self, kind: str, u: np.ndarray, p: np.ndarray, prov: list[tuple[int, int]]):
        if kind not in self.velocity:
            self.velocity[kind] = SnapshotMatrix(kind, "velocity", u, list(prov))
            self.pressure[kind] = SnapshotMatrix(kind, "pressure", p, list(prov))
        else:
            self.velocity[kind].extend(u, prov)
            self.pressure[kind].extend(p, prov)

    @property
    def kinds(self) -> list[str]:
        return sorted(self.velocity)

    def save(self, directory: str | Path):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for kind in self.kinds:
            for snap in (self.velocity[kind], self.pressure[kind]):
                path = d / f"{kind}_{snap.field}.podm"
                io.write_podm(path, snap.data)
                io.write_sidecar(path, {"kind": kind, "field": snap.field,
                                        "provenance": [list(map(int, p)) for p in snap.provenance]})
        io.write_sidecar(d / "store", {"kinds": self.kinds, "failed": [int(k) for k in self.failed],
                                       "samples": self.samples})

    @classmethod
    def load(cls, directory: str | Path) -> "SnapshotStore":
        d = Path(directory)
        if not io.sidecar_path(d / "store").exists():
            raise FileNotFoundError(f"{d}: no snapshot store")
        meta = io.read_sidecar(d / "store")
        store = cls(samples=meta.get("samples", []), failed=meta.get("failed", []))
        for kind in meta.get("kinds", []):
            for fld, target in (("velocity", store.velocity), ("pressure", store.pressure)):
                path = d / f"{kind}_{fld}.podm"
                side = io.read_sidecar(path)
                target[kind] = SnapshotMatrix(kind, fld, io.read_podm(path),
                                              [tuple(p) for p in side.get("provenance", [])])
        return store


def _solver(sc: Scenario):
    s = sc.solver
    return NewtonConfig(s.newton_tolerance, s.newton_max_iterations, s.linearization), LinearSolver(s.krylov)


def collect_snapshots(sc: Scenario, samples: int | None = None, seed: int | None = None,
                      stride: int = 1) -> SnapshotStore:
    """Run the FOM on sampled geometries and store Piola-pulled snapshots per block kind.

    Columns are ordered by (geometry sample, time step).  A sample whose
    geometry is inadmissible or whose time loop fails is logged and skipped.
    """
    n = sc.offline.samples if samples is None else samples
    store = SnapshotStore()
    geoms = sample_geometries(sc, n, seed)
    store.samples = [[{k: float(v) for k, v in blk.items()} for blk in g] for g in geoms]
    newton, _ = _solver(sc)
    for k, nonaffine in enumerate(geoms):
        try:
            build = build_system(sc, nonaffine)
        except ConfigError as exc:
            log.warning("sample %d skipped: %s", k, exc)
            store.failed.append(k)
            continue
        tic = time.perf_counter()
        try:
            traj = fom_time_loop(build.system, build.schedule, newton, LinearSolver(sc.solver.krylov))
        except StepFailure as exc:
            log.warning("sample %d failed: %s", k, exc)
            store.failed.append(k)
            continue
        log.info("sample %d: %d steps in %.2fs", k, len(traj.step_times), time.perf_counter() - tic)
        sysm = build.system
        steps = list(range(0, len(traj.states), stride))
        for j, pb in enumerate(build.blocks):
            space = sysm.subdomains[j].space
            U = np.stack([space.pullback @ sysm.velocity(traj.states[s], j) for s in steps], axis=1)
            P = np.stack([sysm.pressure(traj.states[s], j) for s in steps], axis=1)
            store.add(pb.kind.value, U, P, [(k, s) for s in steps])
    return store


@dataclass
class BlockBasis:
    """Reduced basis of one block kind (reference frame)."""

    kind: str
    velocity: PodBasis
    pressure: PodBasis


def reference_couplings(kind: BlockKind, refinement: int, order: int, rho: float = 1.06, mu: float = 0.04):
    ops = reference_operators(kind, refinement, rho, mu)
    basis = build_multiplier_basis(order, 2)
    tags = [t for t in ops.space.mesh.tags() if t.kind in (FacetKind.INLET, FacetKind.OUTLET)]
    return [reference_port_coupling(ops.space, t, basis) for t in tags]


def build_bases(store: SnapshotStore, sc: Scenario, eps_u: float | None = None, eps_p: float | None = None,
                pressure_sup: bool | None = None, coupling_sup: bool | None = None) -> dict[str, BlockBasis]:
    """POD per block kind, then supremizer enrichment and X-orthonormalization.

    Velocity bases are ordered [POD modes | pressure supremizers | coupling
    supremizers].
    """
    r = sc.rom
    eps_u = r.eps_u if eps_u is None else eps_u
    eps_p = r.eps_p if eps_p is None else eps_p
    pressure_sup = r.pressure_supremizers if pressure_sup is None else pressure_sup
    coupling_sup = r.coupling_supremizers if coupling_sup is None else coupling_sup
    if not store.kinds:
        raise ValueError("empty snapshot store")
    rho, mu, ref = sc.fluid.density, sc.fluid.viscosity, sc.geometry.refinement
    out = {}
    for kname in store.kinds:
        kind = BlockKind.parse(kname)
        ops = reference_operators(kind, ref, rho, mu)
        vb = weighted_pod(store.velocity[kname], ops.Xu, eps_u, norm="Xu")
        pb = weighted_pod(store.pressure[kname], ops.Xp, eps_p, norm="Xp")
        if pressure_sup:
            vb = enrich_and_orthonormalize(vb, pressure_supremizers(ops, pb.modes), ops.Xu, "pressure")
        if coupling_sup:
            Bs = reference_couplings(kind, ref, sc.coupling.order, rho, mu)
            vb = enrich_and_orthonormalize(vb, coupling_supremizers(ops, Bs), ops.Xu, "coupling")
        out[kname] = BlockBasis(kname, vb, pb)
    return out


def save_bases(bases: dict[str, BlockBasis], directory: str | Path):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for kname, bb in bases.items():
        for fld, b in (("velocity", bb.velocity), ("pressure", bb.pressure)):
            path = d / f"{kname}_{fld}_basis.podm"
            io.write_podm(path, b.modes)
            io.write_sidecar(path, {
                "kind": kname, "field": fld, "norm": b.norm, "epsilon": float(b.epsilon), "n_pod": int(b.n_pod),
                "n_pressure_supremizers": int(b.n_pressure_supremizers),
                "n_coupling_supremizers": int(b.n_coupling_supremizers), "dropped": int(b.dropped),
                "singular_values": [float(s) for s in b.singular_values]})
    io.write_sidecar(d / "bases", {"kinds": sorted(bases)})


def load_bases(directory: str | Path) -> dict[str, BlockBasis]:
    d = Path(directory)
    if not io.sidecar_path(d / "bases").exists():
        raise FileNotFoundError(f"{d}: no reduced bases")
    out = {}
    for kname in io.read_sidecar(d / "bases")["kinds"]:
        parts = []
        for fld in ("velocity", "pressure"):
            path = d / f"{kname}_{fld}_basis.podm"
            m = io.read_sidecar(path)
            parts.append(PodBasis(io.read_podm(path), np.array(m["singular_values"]), m["norm"], m["epsilon"],
                                  m["n_pod"], m["n_pressure_supremizers"], m["n_coupling_supremizers"],
                                  m["dropped"]))
        out[kname] = BlockBasis(kname, *parts)
    return out


def basis_table(bases: dict[str, BlockBasis], store: SnapshotStore | None = None) -> list[str]:
    lines = [f"{'kind':<5}{'N_s':>7}{'N_u':>6}{'N_p':>6}{'sup_p':>7}{'sup_c':>7}{'drop':>6}{'N':>6}"]
    for kname, bb in sorted(bases.items()):
        v, p = bb.velocity, bb.pressure
        ns = store.velocity[kname].n_snapshots if store is not None else len(v.singular_values)
        lines.append(f"{kname:<5}{ns:>7}{v.n_pod:>6}{p.n_pod:>6}{v.n_pressure_supremizers:>7}"
                     f"{v.n_coupling_supremizers:>7}{v.dropped:>6}{v.size:>6}")
    return lines


def reduce_system(build, bases: dict[str, BlockBasis], sc: Scenario | None = None) -> ReducedModel:
    """Project a built FOM onto the per-kind bases."""
    sc = sc or build.scenario
    vel, pre, n_c = [], [], []
    for pb in build.blocks:
        if pb.kind.value not in bases:
            raise ValueError(f"no reduced basis for block kind {pb.kind.value}")
        bb = bases[pb.kind.value]
        vel.append(bb.velocity.modes)
        pre.append(bb.pressure.modes)
        nc = bb.velocity.n_pod if sc.rom.n_c is None else sc.rom.n_c
        if nc > bb.velocity.size:
            raise ValueError(f"n_c = {nc} exceeds the {pb.kind.value} basis size {bb.velocity.size}")
        n_c.append(nc)
    return project_operators(build.system, vel, pre, n_c, sc.rom.convection)

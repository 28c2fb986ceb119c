"""Turn a scenario into deformed blocks, interfaces and a coupled full-order system."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from ..assembly import GlobalSystem, InletDescriptor, Subdomain
from ..coupling import InterfaceDescriptor, SegmentPlacement, build_multiplier_basis
from ..fem import TaylorHoodSpace, assemble_static
from ..geomap import GeoParams, build_map, sample_params
from ..mesh import BlockKind, generate_reference_block, inlet, outlet
from ..timeloop import TimeSchedule, half_sine_pulse, ramped_flow, sampled_waveform
from .config import BlockSpec, ConfigError, Scenario

PORT_TOL = 1e-9


@lru_cache(maxsize=None)
def reference_mesh(kind: BlockKind, refinement: int):
    return generate_reference_block(kind, refinement)


@lru_cache(maxsize=None)
def _reference_ops(kind: BlockKind, refinement: int, rho: float, mu: float):
    return assemble_static(TaylorHoodSpace(reference_mesh(kind, refinement)), rho, mu)


def reference_operators(kind: BlockKind, refinement: int, rho: float = 1.06, mu: float = 0.04):
    """Operators of the undeformed reference block (cached)."""
    return _reference_ops(BlockKind.parse(kind), refinement, float(rho), float(mu))


@dataclass
class PlacedBlock:
    """A block of the tree with its parameters after placement."""

    spec: BlockSpec
    params: GeoParams
    geometry: object

    @property
    def kind(self) -> BlockKind:
        return self.spec.block_kind


def place_blocks(specs, refinement: int, nonaffine: list[dict] | None = None) -> list[PlacedBlock]:
    """Chain the blocks so that each inlet coincides with its parent's outlet.

    The root keeps its own rotation and translation.  A child is rotated so
    that its inflow direction is the parent outlet normal, translated to the
    outlet center, and (for tubes) scaled to the outlet width.

    Parameters
    ----------
    nonaffine : list of dict, optional
        Per-block overrides of the nonaffine parameters (used for sampling).
    """
    placed: list[PlacedBlock] = []
    for j, spec in enumerate(specs):
        kind = spec.block_kind
        params = spec.params()
        if nonaffine is not None and nonaffine[j]:
            params = params.with_nonaffine(kind, {**params.nonaffine(kind), **nonaffine[j]})
        if spec.parent is not None:
            port = placed[spec.parent].geometry.ports()[outlet(spec.parent_outlet)]
            width = port.width
            upd = dict(rotation=port.angle, translation=tuple(port.center))
            if kind.is_tube:
                upd["radius_ratio"] = width
            elif abs(width - 1.0) > PORT_TOL:
                raise ConfigError(f"block {j}: a bifurcation needs a unit-width parent outlet, got {width:.4g}")
            params = replace(params, **upd)
        try:
            geom = build_map(kind, params, reference_mesh(kind, refinement))
        except ValueError as exc:
            raise ConfigError(f"block {j}: {exc}") from exc
        if spec.parent is not None:
            _check_match(placed[spec.parent].geometry.ports()[outlet(spec.parent_outlet)],
                         geom.ports()[inlet(0)], j)
        placed.append(PlacedBlock(spec, params, geom))
    return placed


def _check_match(up, down, j):
    if not (np.allclose(up.start, down.end, atol=1e-8) and np.allclose(up.end, down.start, atol=1e-8)):
        raise ConfigError(f"block {j}: inlet does not match the parent outlet")


def waveform(sc: Scenario):
    inf = sc.inflow
    if inf.waveform == "samples":
        return sampled_waveform(inf.samples)
    return half_sine_pulse(inf.base, inf.peak, inf.period)


def schedule(sc: Scenario) -> TimeSchedule:
    t = sc.time
    return TimeSchedule(t.dt, t.t0, t.T, t.ramp_start)


@dataclass
class Build:
    """Everything derived from a scenario for one geometry."""

    scenario: Scenario
    blocks: list[PlacedBlock]
    system: GlobalSystem

    @property
    def schedule(self) -> TimeSchedule:
        return schedule(self.scenario)


def build_system(sc: Scenario, nonaffine: list[dict] | None = None, steady: bool = False, flow_rate=None,
                 tractions: dict | None = None, forcing=None, convection: bool = True) -> Build:
    """Assemble the coupled FOM of a scenario.

    Parameters
    ----------
    nonaffine : list of dict, optional
        Per-block nonaffine parameter overrides.
    flow_rate : callable, optional
        Inflow rate ``Q(t)``; default is the ramped scenario waveform.
    tractions : dict, optional
        ``{block: {tag: h(x, t, n)}}``; outlets are traction free otherwise.
    """
    geo = sc.geometry
    placed = place_blocks(geo.blocks, geo.refinement, nonaffine)
    rho, mu = sc.fluid.density, sc.fluid.viscosity
    subs = []
    for j, pb in enumerate(placed):
        space = TaylorHoodSpace(reference_mesh(pb.kind, geo.refinement), pb.geometry)
        subs.append(Subdomain(f"{pb.kind.value}[{j}]", assemble_static(space, rho, mu),
                              dict((tractions or {}).get(j, {}))))
    interfaces = []
    for j, pb in enumerate(placed):
        if pb.spec.parent is None:
            continue
        port = placed[pb.spec.parent].geometry.ports()[outlet(pb.spec.parent_outlet)]
        interfaces.append(InterfaceDescriptor(len(interfaces), (pb.spec.parent, j),
                                              (outlet(pb.spec.parent_outlet), inlet(0)),
                                              SegmentPlacement.from_port(port), port.normal))
    if flow_rate is None:
        flow_rate = ramped_flow(waveform(sc), schedule(sc))
    root_port = placed[0].geometry.ports()[inlet(0)]
    inlets = [InletDescriptor(0, inlet(0), root_port, flow_rate)]
    basis = build_multiplier_basis(sc.coupling.order, 2)
    system = GlobalSystem(subs, interfaces, inlets, basis, dt=sc.time.dt, sigma=sc.time.bdf_order, steady=steady,
                          forcing=forcing, linearization=sc.solver.linearization, convection=convection)
    return Build(sc, placed, system)


def chain_scenario(kinds=("T1", "T1"), refinement: int = 2, **sections) -> Scenario:
    """Straight chain of blocks, each attached to outlet 0 of the previous one."""
    from .config import GeometryConfig

    blocks = tuple(BlockSpec(k, parent=None if j == 0 else j - 1) for j, k in enumerate(kinds))
    return Scenario(geometry=GeometryConfig(refinement, blocks), **sections)


def sample_geometries(sc: Scenario, n: int, seed: int | None = None) -> list[list[dict]]:
    """Draw ``n`` nonaffine parameter sets for every block of the tree.

    The first sample is always the center geometry.  Child tube radii follow
    their parent outlet and are not sampled.
    """
    rng = np.random.default_rng(sc.offline.seed if seed is None else seed)
    out = []
    for k in range(n):
        sample = []
        for j, spec in enumerate(sc.geometry.blocks):
            kind = spec.block_kind
            hw = dict(sc.offline.half_widths.get(kind.value, {}))
            if spec.parent is not None:
                hw.pop("radius_ratio", None)
            if k == 0 or not hw:
                sample.append({})
                continue
            p = sample_params(kind, spec.params(), hw, rng)
            sample.append({name: v for name, v in p.nonaffine(kind).items() if name in hw})
        out.append(sample)
    return out


def describe(blocks: list[PlacedBlock]) -> list[str]:
    lines = []
    for j, pb in enumerate(blocks):
        p = pb.params
        if pb.kind.is_tube:
            extra = f"bend={p.bend:+.4f} L/L0={p.length_ratio:.4f} R/R0={p.radius_ratio:.4f}"
        else:
            extra = "angles=" + ",".join(f"{a:+.4f}" for a in p.outlet_angles)
        lines.append(f"{j}: {pb.kind.value} rot={math.degrees(p.rotation):+.2f}deg "
                     f"at=({p.translation[0]:.4f},{p.translation[1]:.4f}) {extra}")
    return lines

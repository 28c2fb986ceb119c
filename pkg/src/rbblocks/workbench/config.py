"""Scenario configuration: a YAML document with a fixed schema.

Every section is optional and falls back to the defaults below; unknown keys
are rejected so that typos fail before any computation starts.

.. code-block:: yaml

    fluid: {density: 1.06, viscosity: 0.04}
    geometry:
      refinement: 2
      blocks:
        - {kind: T1}
        - {kind: T2, parent: 0, parent_outlet: 0, bend: 0.3}
    inflow:
      waveform: pulse          # or "samples"
      base: 0.5
      peak: 1.0
      period: 0.3
      samples: []              # [[t, Q], ...] when waveform is "samples"
      profile: parabolic
    time: {dt: 2.5e-3, t0: 0.0, T: 0.3, ramp_start: -0.02, bdf_order: 2}
    coupling: {order: 5}
    solver:
      newton_tolerance: 1.0e-8
      newton_max_iterations: 20
      linearization: newton
      krylov: {method: fgmres, tolerance: 1.0e-8, inner: simple, schur_reuse: 20}
    rom:
      eps_u: 1.0e-3
      eps_p: 1.0e-3
      n_c: null                # default: number of velocity POD modes
      pressure_supremizers: true
      coupling_supremizers: true
      convection: truncated
    offline:
      samples: 8
      seed: 0
      half_widths: {T1: {bend: 0.2}, B: {outlet_angle_0: 0.1}}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..geomap import GeoParams, PARAMETER_SPACES
from ..mesh import BlockKind
from ..solver.krylov import KrylovConfig


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class FluidConfig:
    density: float = 1.06
    viscosity: float = 0.04


@dataclass(frozen=True)
class BlockSpec:
    """One block of the tree; ``parent`` is None only for the root."""

    kind: str = "T1"
    parent: int | None = None
    parent_outlet: int = 0
    bend: float = 0.0
    length_ratio: float = 1.0
    radius_ratio: float = 1.0
    outlet_angles: tuple[float, ...] = (0.0, 0.0)
    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)

    @property
    def block_kind(self) -> BlockKind:
        return BlockKind.parse(self.kind)

    def params(self) -> GeoParams:
        return GeoParams(self.rotation, tuple(self.translation), self.bend, self.length_ratio, self.radius_ratio,
                         tuple(self.outlet_angles))


@dataclass(frozen=True)
class GeometryConfig:
    refinement: int = 2
    blocks: tuple[BlockSpec, ...] = (BlockSpec("T1"),)


@dataclass(frozen=True)
class InflowConfig:
    waveform: str = "pulse"
    base: float = 0.5
    peak: float = 1.0
    period: float = 0.3
    samples: tuple[tuple[float, float], ...] = ()
    profile: str = "parabolic"


@dataclass(frozen=True)
class TimeConfig:
    dt: float = 2.5e-3
    t0: float = 0.0
    T: float = 0.3
    ramp_start: float = -2e-2
    bdf_order: int = 2


@dataclass(frozen=True)
class CouplingConfig:
    order: int = 5


@dataclass(frozen=True)
class SolverConfig:
    newton_tolerance: float = 1e-8
    newton_max_iterations: int = 20
    linearization: str = "newton"
    krylov: KrylovConfig = field(default_factory=KrylovConfig)


@dataclass(frozen=True)
class RomConfig:
    eps_u: float = 1e-3
    eps_p: float = 1e-3
    n_c: int | None = None
    pressure_supremizers: bool = True
    coupling_supremizers: bool = True
    convection: str = "truncated"
    newton_max_iterations: int = 50


@dataclass(frozen=True)
class OfflineConfig:
    samples: int = 8
    seed: int = 0
    half_widths: dict[str, dict[str, float]] = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    """Complete description of a simulation."""

    fluid: FluidConfig = field(default_factory=FluidConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    inflow: InflowConfig = field(default_factory=InflowConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    coupling: CouplingConfig = field(default_factory=CouplingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    rom: RomConfig = field(default_factory=RomConfig)
    offline: OfflineConfig = field(default_factory=OfflineConfig)

    def __post_init__(self):
        validate(self)

    def replace(self, **sections) -> "Scenario":
        return dataclasses.replace(self, **sections)

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def validate(sc: Scenario):
    """Check cross-field invariants; raises :class:`ConfigError`."""
    if sc.fluid.density <= 0 or sc.fluid.viscosity <= 0:
        raise ConfigError("density and viscosity must be positive")
    t = sc.time
    if t.dt <= 0:
        raise ConfigError("time step must be positive")
    if not t.t0 < t.T:
        raise ConfigError("need t0 < T")
    if t.ramp_start > t.t0:
        raise ConfigError("ramp_start must not exceed t0")
    if t.bdf_order not in (1, 2):
        raise ConfigError("bdf_order must be 1 or 2")
    if sc.coupling.order < 0:
        raise ConfigError("multiplier order must be nonnegative")
    if sc.geometry.refinement < 1:
        raise ConfigError("refinement must be at least 1")
    blocks = sc.geometry.blocks
    if not blocks:
        raise ConfigError("at least one block is required")
    used = set()
    for j, b in enumerate(blocks):
        try:
            kind = b.block_kind
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if j == 0:
            if b.parent is not None:
                raise ConfigError("the first block is the root and carries the inlet; it has no parent")
        else:
            if b.parent is None:
                raise ConfigError(f"block {j} has no parent: only one inlet (at the root) is allowed")
            if not 0 <= b.parent < j:
                raise ConfigError(f"block {j}: parent must be an earlier block")
            pk = blocks[b.parent].block_kind
            if not 0 <= b.parent_outlet < pk.n_outlets:
                raise ConfigError(f"block {j}: parent has no outlet {b.parent_outlet}")
            if (b.parent, b.parent_outlet) in used:
                raise ConfigError(f"block {j}: outlet {b.parent_outlet} of block {b.parent} is already connected")
            used.add((b.parent, b.parent_outlet))
        try:
            PARAMETER_SPACES[kind].check(b.params())
        except ValueError as exc:
            raise ConfigError(f"block {j}: {exc}") from exc
    inf = sc.inflow
    if inf.waveform not in ("pulse", "samples"):
        raise ConfigError(f"unknown waveform {inf.waveform!r}")
    if inf.waveform == "samples" and len(inf.samples) < 2:
        raise ConfigError("a sampled waveform needs at least two (t, Q) pairs")
    if inf.profile != "parabolic":
        raise ConfigError("only the parabolic inflow profile is supported")
    s = sc.solver
    if s.linearization not in ("newton", "picard"):
        raise ConfigError(f"unknown linearization {s.linearization!r}")
    if s.newton_tolerance <= 0 or s.newton_max_iterations < 1:
        raise ConfigError("invalid Newton settings")
    r = sc.rom
    for name in ("eps_u", "eps_p"):
        if not 0 < getattr(r, name) < 1:
            raise ConfigError(f"{name} must lie in (0, 1)")
    if r.n_c is not None and r.n_c < 0:
        raise ConfigError("n_c must be nonnegative")
    if r.convection not in ("exact", "truncated"):
        raise ConfigError(f"unknown convection mode {r.convection!r}")
    o = sc.offline
    if o.samples < 1:
        raise ConfigError("need at least one offline sample")
    for kname, hws in o.half_widths.items():
        try:
            kind = BlockKind.parse(kname)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        allowed = set(PARAMETER_SPACES[kind].bounds)
        bad = set(hws) - allowed
        if bad:
            raise ConfigError(f"unknown {kname} half-widths: {sorted(bad)}")
        if any(v < 0 for v in hws.values()):
            raise ConfigError("half-widths must be nonnegative")


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return data


def _tuple(v):
    return tuple(tuple(x) if isinstance(x, list) else x for x in v)


def scenario_from_dict(data: dict | None) -> Scenario:
    """Build a :class:`Scenario` from parsed YAML, rejecting unknown keys."""
    data = data or {}
    top = _build(Scenario, data, "scenario")
    try:
        fluid = FluidConfig(**_build(FluidConfig, top.get("fluid"), "fluid")) if top.get("fluid") else FluidConfig()
        g = _build(GeometryConfig, top.get("geometry"), "geometry") if top.get("geometry") else {}
        blocks = []
        for k, b in enumerate(g.get("blocks", [{"kind": "T1"}])):
            bd = dict(_build(BlockSpec, b, f"geometry.blocks[{k}]"))
            for key in ("outlet_angles", "translation"):
                if key in bd:
                    bd[key] = tuple(float(v) for v in bd[key])
            blocks.append(BlockSpec(**bd))
        geometry = GeometryConfig(refinement=int(g.get("refinement", 2)), blocks=tuple(blocks))
        inf = dict(_build(InflowConfig, top.get("inflow"), "inflow") or {}) if top.get("inflow") else {}
        if "samples" in inf:
            inf["samples"] = tuple(tuple(float(x) for x in row) for row in inf["samples"])
        inflow = InflowConfig(**inf)
        time = TimeConfig(**(_build(TimeConfig, top.get("time"), "time") if top.get("time") else {}))
        coupling = CouplingConfig(**(_build(CouplingConfig, top.get("coupling"), "coupling")
                                     if top.get("coupling") else {}))
        s = dict(_build(SolverConfig, top.get("solver"), "solver") or {}) if top.get("solver") else {}
        if "krylov" in s:
            s["krylov"] = KrylovConfig(**_build(KrylovConfig, s["krylov"], "solver.krylov"))
        solver = SolverConfig(**s)
        rom = RomConfig(**(_build(RomConfig, top.get("rom"), "rom") if top.get("rom") else {}))
        off = dict(_build(OfflineConfig, top.get("offline"), "offline") or {}) if top.get("offline") else {}
        if "half_widths" in off:
            hw = off["half_widths"] or {}
            if not isinstance(hw, dict) or not all(isinstance(v, dict) for v in hw.values()):
                raise ConfigError("offline.half_widths: expected a mapping of mappings")
            off["half_widths"] = {k: {n: float(x) for n, x in v.items()} for k, v in hw.items()}
        offline = OfflineConfig(**off)
        return Scenario(fluid, geometry, inflow, time, coupling, solver, rom, offline)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path: str | Path | None) -> Scenario:
    """Read a YAML scenario file; ``None`` gives the default scenario."""
    if path is None:
        return Scenario()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return scenario_from_dict(data)


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(sc.to_dict(), sort_keys=False)

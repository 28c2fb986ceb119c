"""Reduced-basis-element solver for incompressible flow in networks of deformed building blocks."""

from .assembly import GlobalSystem, InletDescriptor, Subdomain, bdf_coefficients
from .coupling import InterfaceDescriptor, MultiplierBasis, build_multiplier_basis
from .fem import BlockOperators, TaylorHoodSpace, assemble_static
from .geomap import GeoParams, build_map
from .mesh import BlockKind, FacetKind, FacetTag, SimplicialMesh, generate_reference_block
from .pod import PodBasis, SnapshotMatrix, weighted_pod
from .rom import ReducedModel, project_operators, rom_time_loop
from .timeloop import TimeSchedule, Trajectory, fom_time_loop

__version__ = "0.1.0"

__all__ = [
    "BlockKind", "BlockOperators", "FacetKind", "FacetTag", "GeoParams", "GlobalSystem", "InletDescriptor",
    "InterfaceDescriptor", "MultiplierBasis", "PodBasis", "ReducedModel", "SimplicialMesh", "SnapshotMatrix",
    "Subdomain", "TaylorHoodSpace", "TimeSchedule", "Trajectory", "assemble_static", "bdf_coefficients",
    "build_map", "build_multiplier_basis", "fom_time_loop", "generate_reference_block", "project_operators",
    "rom_time_loop", "weighted_pod",
]

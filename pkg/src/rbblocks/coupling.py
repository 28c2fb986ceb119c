"""Spectral Lagrange multipliers on block interfaces.

In 2D the reference interface is the segment [-1, 1] with Chebyshev
polynomials of the second kind, orthonormal for the weight
``(2 / pi) sqrt(1 - s^2)``. In 3D the reference interface is the unit disk
with the ridge polynomials ``U_n(x cos w + y sin w) / sqrt(pi)``, which are
orthonormal for the Lebesgue measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import QUAD_DEGREE, TaylorHoodSpace
from .geomap import PhysicalPort
from .mesh import FacetKind, FacetTag


def chebyshev_u(n: int, s) -> np.ndarray:
    """``U_n(s)`` by the three-term recurrence."""
    if n < 0:
        raise ValueError("order must be nonnegative")
    s = np.asarray(s, dtype=float)
    prev, cur = np.ones_like(s), 2.0 * s
    if n == 0:
        return prev
    for _ in range(n - 1):
        prev, cur = cur, 2.0 * s * cur - prev
    return cur


def segment_basis_eval(n: int, s) -> np.ndarray:
    """Segment multiplier function of degree ``n`` at ``s`` in [-1, 1].

    ``U_n`` itself is orthonormal for the weight ``(2 / pi) sqrt(1 - s^2)``.
    """
    s = np.asarray(s, dtype=float)
    if np.any(np.abs(s) > 1 + 1e-12):
        raise ValueError("point outside the reference segment")
    return chebyshev_u(n, s)


def disk_basis_eval(n: int, k: int, x, y) -> np.ndarray:
    """Disk ridge polynomial ``P^n_k(x, y) = U_n(x cos w + y sin w) / sqrt(pi)``, ``w = k pi / (n + 1)``."""
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x**2 + y**2 > 1 + 1e-12):
        raise ValueError("point outside the unit disk")
    w = k * math.pi / (n + 1)
    return chebyshev_u(n, x * math.cos(w) + y * math.sin(w)) / math.sqrt(math.pi)


@dataclass(frozen=True)
class MultiplierBasis:
    """Vector multiplier basis: scalar functions times canonical vectors.

    Index ``p = i * n_scalar + j`` pairs component ``i`` with scalar
    function ``j``; scalar functions are ordered by degree.
    """

    order: int
    dim: int

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be nonnegative")
        if self.dim not in (2, 3):
            raise ValueError("dimension must be 2 or 3")

    @property
    def n_scalar(self) -> int:
        n = self.order
        return n + 1 if self.dim == 2 else (n + 1) * (n + 2) // 2

    @property
    def count(self) -> int:
        return self.dim * self.n_scalar

    def scalar_labels(self) -> list[tuple[int, int]]:
        if self.dim == 2:
            return [(j, 0) for j in range(self.order + 1)]
        return [(j, k) for j in range(self.order + 1) for k in range(j + 1)]

    def scalar_values(self, ref_points) -> np.ndarray:
        """Scalar functions at reference interface points, shape (npts, n_scalar)."""
        pts = np.asarray(ref_points, dtype=float)
        if self.dim == 2:
            s = pts.reshape(-1)
            return np.stack([segment_basis_eval(j, s) for j in range(self.order + 1)], axis=-1)
        pts = pts.reshape(-1, 2)
        return np.stack([disk_basis_eval(j, k, pts[:, 0], pts[:, 1]) for j, k in self.scalar_labels()], axis=-1)

    def values(self, ref_points) -> np.ndarray:
        """Vector functions, shape (npts, count, dim)."""
        sv = self.scalar_values(ref_points)
        out = np.zeros(sv.shape[:1] + (self.count, self.dim))
        for i in range(self.dim):
            out[:, i * self.n_scalar:(i + 1) * self.n_scalar, i] = sv
        return out


def build_multiplier_basis(n: int, d: int) -> MultiplierBasis:
    return MultiplierBasis(n, d)


@dataclass(frozen=True)
class SegmentPlacement:
    """Affine map ``Theta(s) = center + s * half_width * tangent`` onto a port."""

    center: np.ndarray
    tangent: np.ndarray
    half_width: float

    @classmethod
    def from_port(cls, port: PhysicalPort) -> "SegmentPlacement":
        return cls(port.center, port.tangent, 0.5 * port.width)

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.center + s[..., None] * self.half_width * self.tangent

    def inverse(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = (x - self.center) @ self.tangent / self.half_width
        return np.clip(s, -1.0, 1.0)


@dataclass(frozen=True)
class InterfaceDescriptor:
    """Interface between an upstream block ``blocks[0]`` and a downstream block ``blocks[1]``.

    ``tags`` are the port tags on each side; the upstream side carries the
    sign +1, the downstream side -1. ``placement`` maps the reference
    segment onto the physical interface and is shared by both sides.
    """

    index: int
    blocks: tuple[int, int]
    tags: tuple[FacetTag, FacetTag]
    placement: SegmentPlacement
    normal: np.ndarray

    def sign(self, side: int) -> float:
        if side == self.blocks[0]:
            return 1.0
        if side == self.blocks[1]:
            return -1.0
        raise ValueError(f"block {side} is not adjacent to interface {self.index}")

    def tag(self, side: int) -> FacetTag:
        return self.tags[0] if side == self.blocks[0] else self.tags[1]


def _port_matrix(space: TaylorHoodSpace, tag: FacetTag, placement: SegmentPlacement,
                 basis: MultiplierBasis, sign: float) -> sp.csr_matrix:
    if basis.dim != 2 or space.dim != 2:
        raise NotImplementedError("coupling assembly is implemented for 2D blocks")
    degree = max(QUAD_DEGREE, 2 * basis.order + 4)
    try:
        fb, w, _ = space.facet_quadrature(tag, degree)
    except KeyError:
        raise ValueError(f"port {tag} not found on the block mesh") from None
    s = placement.inverse(fb.points.reshape(-1, 2)).reshape(w.shape)
    xi = basis.values(s.ravel()).reshape(w.shape + (basis.count, 2))
    Be = sign * np.einsum("fq,fqpk,fqjk->fpj", w, xi, fb.values)
    nf, nl, nv = Be.shape
    rows = np.broadcast_to(np.arange(nl)[None, :, None], Be.shape)
    cols = np.broadcast_to(fb.vdofs[:, None, :], Be.shape)
    B = sp.csr_matrix((Be.ravel(), (rows.ravel(), cols.ravel())), shape=(nl, space.n_u))
    B.sum_duplicates()
    return B


def assemble_coupling(space: TaylorHoodSpace, iface: InterfaceDescriptor, basis: MultiplierBasis,
                      side: int) -> sp.csr_matrix:
    """Signed coupling matrix ``c int xi_p . phi_q`` of one side of an interface.

    Returns
    -------
    scipy.sparse.csr_matrix, shape (basis.count, space.n_u)
    """
    sign = iface.sign(side)
    return _port_matrix(space, iface.tag(side), iface.placement, basis, sign)


def assemble_inlet_coupling(space: TaylorHoodSpace, tag: FacetTag, basis: MultiplierBasis,
                            placement: SegmentPlacement | None = None):
    """Weak Dirichlet matrix of an inlet port and the matching data map.

    Returns
    -------
    B_in : scipy.sparse.csr_matrix
    rhs : callable
        ``rhs(g)`` with ``g`` a velocity DOF vector returns ``B_in @ g``.
    """
    if tag.kind is not FacetKind.INLET:
        raise ValueError(f"port {tag} is not an inlet")
    if placement is None:
        placement = SegmentPlacement.from_port(space.geometry.ports()[tag]) if space.geometry is not None \
            else _reference_placement(space, tag)
    B = _port_matrix(space, tag, placement, basis, 1.0)

    def rhs(g):
        return B @ np.asarray(g, dtype=float)

    return B, rhs


def _reference_placement(space: TaylorHoodSpace, tag: FacetTag) -> SegmentPlacement:
    port = space.mesh.ports[tag]
    return SegmentPlacement.from_port(PhysicalPort(tag, port.start, port.end))


def reference_port_coupling(space: TaylorHoodSpace, tag: FacetTag, basis: MultiplierBasis) -> sp.csr_matrix:
    """Coupling matrix of one port of the undeformed reference block (used for supremizers)."""
    return _port_matrix(space, tag, _reference_placement(space, tag), basis, 1.0)

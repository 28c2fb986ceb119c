"""Parametrized deformations of reference blocks and the Piola transformation.

Every block map has the form ``x = Q phi(xhat) + t`` with ``Q`` a rotation and
``phi`` a nonaffine deformation. Tubes bend along a centerline whose tangent
angle goes from 0 to the outlet angle with a C1 cubic blend; cross sections
stay straight and orthogonal to the centerline, so both ports are straight
segments. The bifurcation rotates each outlet port rigidly about the base of
its arm and extends the displacement harmonically into the block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import BlockKind, FacetKind, FacetTag, SimplicialMesh, inlet, outlet

INSIDE_TOL = 1e-10
ADMISSIBLE_MARGIN = 0.1


@dataclass(frozen=True)
class GeoParams:
    """Geometric parameters of one subdomain.

    Attributes
    ----------
    rotation : float
        Angle of the rigid rotation ``Q`` in radians.
    translation : tuple of float
        Rigid translation ``t``.
    bend : float
        Tubes: angle between outlet and inlet normals, radians.
    length_ratio : float
        Tubes: deformed over reference centerline length.
    radius_ratio : float
        Tubes: deformed over reference diameter.
    outlet_angles : tuple of float
        Bifurcation: rotation of each outlet port about the base of its arm.
    """

    rotation: float = 0.0
    translation: tuple[float, ...] = (0.0, 0.0)
    bend: float = 0.0
    length_ratio: float = 1.0
    radius_ratio: float = 1.0
    outlet_angles: tuple[float, ...] = (0.0, 0.0)

    def nonaffine(self, kind: BlockKind) -> dict[str, float]:
        if kind.is_tube:
            return {"bend": self.bend, "length_ratio": self.length_ratio, "radius_ratio": self.radius_ratio}
        return {f"outlet_angle_{i}": a for i, a in enumerate(self.outlet_angles)}

    def with_nonaffine(self, kind: BlockKind, values: dict[str, float]) -> "GeoParams":
        if kind.is_tube:
            return replace(self, **values)
        angles = tuple(values[f"outlet_angle_{i}"] for i in range(len(self.outlet_angles)))
        return replace(self, outlet_angles=angles)


@dataclass(frozen=True)
class ParameterSpace:
    """Box bounds of the nonaffine parameters of a block kind."""

    kind: BlockKind
    bounds: dict[str, tuple[float, float]]

    def check(self, params: GeoParams, tol: float = 1e-14):
        for name, value in params.nonaffine(self.kind).items():
            lo, hi = self.bounds[name]
            if not (lo - tol <= value <= hi + tol):
                raise ValueError(f"{self.kind.value} parameter {name}={value} outside [{lo}, {hi}]")
        if self.kind.is_tube and not tube_admissible(self.kind, params):
            raise ValueError(
                f"{self.kind.value} bend {params.bend} too strong for length ratio "
                f"{params.length_ratio} and radius ratio {params.radius_ratio}"
            )


PARAMETER_SPACES = {
    **{
        k: ParameterSpace(k, {"bend": (-math.pi / 4, math.pi / 4), "length_ratio": (0.5, 2.0),
                              "radius_ratio": (0.5, 2.0)})
        for k in (BlockKind.T1, BlockKind.T2, BlockKind.T3)
    },
    BlockKind.B: ParameterSpace(
        BlockKind.B, {"outlet_angle_0": (-math.pi / 6, math.pi / 6), "outlet_angle_1": (-math.pi / 6, math.pi / 6)}
    ),
}


def tube_admissible(kind: BlockKind, params: GeoParams) -> bool:
    """Whether the bent tube keeps ``det J >= margin * L / Lhat`` everywhere.

    ``det J`` is smallest on the inner side at mid-length, where it equals
    ``(R / Lhat) (L - 0.75 R |alpha|)``.
    """
    L = params.length_ratio * kind.length
    R = params.radius_ratio
    return L - 0.75 * R * abs(params.bend) >= ADMISSIBLE_MARGIN * L


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class PhysicalPort:
    """Oriented straight port segment in physical space."""

    tag: FacetTag
    start: np.ndarray
    end: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.start + self.end)

    @property
    def width(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def tangent(self) -> np.ndarray:
        return (self.end - self.start) / self.width

    @property
    def normal(self) -> np.ndarray:
        t = self.tangent
        return np.array([t[1], -t[0]])

    @property
    def angle(self) -> float:
        """Direction angle of the outward normal."""
        n = self.normal
        return math.atan2(n[1], n[0])


class BlockGeometry:
    """A deformed building block ``x = Q phi(xhat) + t``.

    Subclasses provide the nonaffine part. Arrays of points have shape
    ``(n, d)``; matrices have shape ``(n, d, d)``.
    """

    kind: BlockKind
    params: GeoParams
    mesh: SimplicialMesh | None

    def __init__(self, kind: BlockKind, params: GeoParams, mesh: SimplicialMesh | None):
        self.kind = kind
        self.params = params
        self.mesh = mesh
        self.Q = rotation_matrix(params.rotation)
        self.shift = np.asarray(params.translation, dtype=float)
        if self.shift.shape != (2,):
            raise ValueError("translation must be a 2-vector")

    # nonaffine part, overridden
    def _phi(self, xhat: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def map(self, xhat) -> np.ndarray:
        """Physical coordinates of reference points."""
        xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
        return self._phi(xhat) @ self.Q.T + self.shift

    def contains(self, xhat, tol: float = INSIDE_TOL) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, xhat) -> np.ndarray:
        """``J_Phi`` at reference points; the bifurcation returns ``Q``.

        Raises
        ------
        ValueError
            If a point lies outside the reference block.
        """
        xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
        if not np.all(self.contains(xhat)):
            raise ValueError("point outside the reference block")
        return self.piola_jacobian(xhat)

    # quantities used by assembly, no containment check
    def piola_jacobian(self, xhat: np.ndarray) -> np.ndarray:
        """Jacobian used by the Piola transformation."""
        raise NotImplementedError

    def piola_jacobian_gradient(self, xhat: np.ndarray) -> np.ndarray:
        """``dJ[k, m, l] = d J_km / d xhat_l`` of the Piola Jacobian."""
        raise NotImplementedError

    @property
    def straight_cells(self) -> bool:
        """True when physical cells are straight images of reference cells."""
        return False

    def physical_vertices(self) -> np.ndarray:
        return self.map(self.mesh.vertices)

    def ports(self) -> dict[FacetTag, PhysicalPort]:
        ref = self.mesh.ports if self.mesh is not None else self._reference_ports()
        out = {}
        for tag, port in ref.items():
            a, b = self.map(np.stack([port.start, port.end]))
            out[tag] = PhysicalPort(tag, a, b)
        return out

    def _reference_ports(self):
        raise NotImplementedError


def _smoothstep(s):
    return 3 * s**2 - 2 * s**3, 6 * s * (1 - s), 6 - 12 * s


_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


class TubeGeometry(BlockGeometry):
    """Bent, stretched and widened tube with analytic Jacobian."""

    def __init__(self, kind: BlockKind, params: GeoParams, mesh: SimplicialMesh | None = None):
        super().__init__(kind, params, mesh)
        self.ref_length = kind.length
        self.length = params.length_ratio * kind.length
        self.radius = params.radius_ratio
        self.bend = params.bend

    def _theta(self, s):
        h, dh, ddh = _smoothstep(s)
        return self.bend * h, self.bend * dh, self.bend * ddh

    def centerline(self, s: np.ndarray) -> np.ndarray:
        """``c(s) = L int_0^s (cos theta, sin theta)`` by Gauss-Legendre quadrature."""
        s = np.asarray(s, dtype=float)
        tau = 0.5 * s[..., None] * (_GL_X + 1.0)
        th, _, _ = self._theta(tau)
        w = 0.5 * s[..., None] * _GL_W
        return self.length * np.stack([(w * np.cos(th)).sum(-1), (w * np.sin(th)).sum(-1)], axis=-1)

    def _frame(self, xhat):
        s = xhat[:, 0] / self.ref_length
        th, dth, ddth = self._theta(s)
        t = np.stack([np.cos(th), np.sin(th)], -1)
        n = np.stack([-np.sin(th), np.cos(th)], -1)
        return s, t, n, dth, ddth

    def _phi(self, xhat):
        s, _, n, _, _ = self._frame(xhat)
        if self.bend == 0.0:
            c = np.stack([self.length * s, np.zeros_like(s)], -1)
        else:
            c = self.centerline(s)
        return c + self.radius * xhat[:, 1:2] * n

    def piola_jacobian(self, xhat):
        xhat = np.atleast_2d(xhat)
        _, t, n, dth, _ = self._frame(xhat)
        y = xhat[:, 1]
        col0 = ((self.length - self.radius * y * dth) / self.ref_length)[:, None] * t
        col1 = self.radius * n
        J = np.stack([col0, col1], axis=-1)
        return np.einsum("ij,njk->nik", self.Q, J)

    def piola_jacobian_gradient(self, xhat):
        xhat = np.atleast_2d(xhat)
        _, t, n, dth, ddth = self._frame(xhat)
        y = xhat[:, 1]
        L, R, Lh = self.length, self.radius, self.ref_length
        d00 = (-(R * y * ddth)[:, None] * t + ((L - R * y * dth) * dth)[:, None] * n) / Lh**2
        d01 = -(R * dth / Lh)[:, None] * t
        H = np.zeros((len(xhat), 2, 2, 2))
        # H[:, k, m, l] = d^2 phi_k / dxhat_m dxhat_l
        H[:, :, 0, 0] = d00
        H[:, :, 0, 1] = d01
        H[:, :, 1, 0] = d01
        return np.einsum("ij,njml->niml", self.Q, H)

    def contains(self, xhat, tol: float = INSIDE_TOL):
        xhat = np.atleast_2d(xhat)
        return (
            (xhat[:, 0] >= -tol) & (xhat[:, 0] <= self.ref_length + tol) & (np.abs(xhat[:, 1]) <= 0.5 + tol)
        )

    def _reference_ports(self):
        from .mesh import ReferencePort

        L = self.ref_length
        return {
            inlet(0): ReferencePort(inlet(0), np.array([0.0, 0.5]), np.array([0.0, -0.5])),
            outlet(0): ReferencePort(outlet(0), np.array([L, -0.5]), np.array([L, 0.5])),
        }


def _p1_laplacian(mesh: SimplicialMesh) -> sp.csr_matrix:
    X = mesh.vertices[mesh.cells]
    F = (X[:, 1:] - X[:, :1]).transpose(0, 2, 1)
    det = np.linalg.det(F)
    Finv = np.linalg.inv(F)
    gref = np.vstack([-np.ones(mesh.dim), np.eye(mesh.dim)])
    grads = np.einsum("aj,njk->nak", gref, Finv)
    vol = np.abs(det) / math.factorial(mesh.dim)
    Ke = np.einsum("nak,nbk,n->nab", grads, grads, vol)
    rows = np.repeat(mesh.cells, mesh.dim + 1, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, mesh.dim + 1)).ravel()
    return sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(mesh.n_vertices,) * 2)


class BifurcationGeometry(BlockGeometry):
    """Bifurcation with rigidly rotated outlets and harmonic displacement extension."""

    def __init__(self, params: GeoParams, mesh: SimplicialMesh):
        if mesh is None or mesh.kind is not BlockKind.B:
            raise ValueError("the bifurcation map needs the reference bifurcation mesh")
        super().__init__(BlockKind.B, params, mesh)
        if len(params.outlet_angles) != 2:
            raise ValueError("the 2D bifurcation takes one angle per outlet (2)")
        self.displacement = self._harmonic_displacement()
        self.deformed = mesh.vertices + self.displacement
        vol = _cell_dets(self.deformed, mesh.cells)
        if np.any(vol <= 0):
            raise ValueError("bifurcation deformation is not bijective for these angles")
        self._ref_cell_inv = np.linalg.inv(
            (mesh.vertices[mesh.cells][:, 1:] - mesh.vertices[mesh.cells][:, :1]).transpose(0, 2, 1)
        )

    def _harmonic_displacement(self) -> np.ndarray:
        mesh = self.mesh
        fixed: dict[int, np.ndarray] = {}
        for f, tag in mesh.facet_tags.items():
            if tag.kind is FacetKind.INLET:
                for v in f:
                    fixed[v] = np.zeros(2)
        for k, angle in enumerate(self.params.outlet_angles):
            base = _arm_base(mesh, k)
            R = rotation_matrix(angle)
            for f in mesh.boundary_facets(outlet(k)):
                for v in f:
                    x = mesh.vertices[v]
                    fixed[v] = base + R @ (x - base) - x
        K = _p1_laplacian(mesh)
        n = mesh.n_vertices
        idx = np.array(sorted(fixed))
        free = np.setdiff1d(np.arange(n), idx)
        U = np.zeros((n, 2))
        U[idx] = np.array([fixed[i] for i in idx])
        if free.size:
            Kff = K[free][:, free].tocsc()
            rhs = -K[free][:, idx] @ U[idx]
            lu = spla.splu(Kff)
            U[free] = lu.solve(rhs)
        return U

    @property
    def straight_cells(self) -> bool:
        return True

    def _locate(self, xhat):
        mesh = self.mesh
        X0 = mesh.vertices[mesh.cells[:, 0]]
        lam = np.einsum("cij,ncj->nci", self._ref_cell_inv, xhat[:, None, :] - X0[None])
        bary = np.concatenate([1.0 - lam.sum(-1, keepdims=True), lam], axis=-1)
        score = bary.min(-1)
        cell = score.argmax(-1)
        return cell, bary[np.arange(len(xhat)), cell], score[np.arange(len(xhat)), cell]

    def _phi(self, xhat):
        cell, bary, _ = self._locate(xhat)
        disp = np.einsum("na,nak->nk", bary, self.displacement[self.mesh.cells[cell]])
        return xhat + disp

    def physical_vertices(self) -> np.ndarray:
        return self.deformed @ self.Q.T + self.shift

    def contains(self, xhat, tol: float = INSIDE_TOL):
        _, _, score = self._locate(np.atleast_2d(xhat))
        return score >= -tol

    def piola_jacobian(self, xhat):
        return np.broadcast_to(self.Q, (len(np.atleast_2d(xhat)), 2, 2)).copy()

    def piola_jacobian_gradient(self, xhat):
        return np.zeros((len(np.atleast_2d(xhat)), 2, 2, 2))


def _arm_base(mesh: SimplicialMesh, k: int) -> np.ndarray:
    from .mesh import bifurcation_outline

    pts = bifurcation_outline()
    base = 0.5 * (pts["crotch"] + pts["outer"])
    return base if k == 0 else base * np.array([1.0, -1.0])


def _cell_dets(vertices, cells):
    X = vertices[cells]
    return np.linalg.det((X[:, 1:] - X[:, :1]).transpose(0, 2, 1))


def build_map(kind: "BlockKind | str", params: GeoParams | None = None,
              mesh: SimplicialMesh | None = None) -> BlockGeometry:
    """Geometry of a deformed block.

    Parameters
    ----------
    kind : BlockKind or str
    params : GeoParams, optional
        Defaults to the identity deformation.
    mesh : SimplicialMesh, optional
        Reference mesh; required for the bifurcation, whose map is defined by a
        discrete harmonic extension on it.

    Raises
    ------
    ValueError
        If the parameters fall outside the kind's parameter space.
    """
    kind = BlockKind.parse(kind)
    params = params or GeoParams()
    PARAMETER_SPACES[kind].check(params)
    if kind.is_tube:
        return TubeGeometry(kind, params, mesh)
    return BifurcationGeometry(params, mesh)


def _as_values(geometry: BlockGeometry, v, xhat) -> np.ndarray:
    if callable(v):
        return np.asarray(v(geometry.map(xhat)), dtype=float)
    return np.asarray(v, dtype=float).reshape(len(xhat), -1)


def piola_pullback(geometry: BlockGeometry, v, xhat) -> np.ndarray:
    """Reference field ``det(J) J^{-1} v(Phi(xhat))`` at the points ``xhat``.

    ``v`` is either a callable on physical points or an array of its values at
    ``Phi(xhat)``.
    """
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    J = geometry.piola_jacobian(xhat)
    det = np.linalg.det(J)
    if np.any(np.abs(det) < 1e-14):
        raise np.linalg.LinAlgError("singular Jacobian")
    vals = _as_values(geometry, v, xhat)
    return det[:, None] * np.linalg.solve(J, vals[..., None])[..., 0]


def piola_pushforward(geometry: BlockGeometry, vhat, xhat) -> np.ndarray:
    """Physical values ``J vhat / det(J)`` at ``Phi(xhat)``; inverse of :func:`piola_pullback`."""
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    J = geometry.piola_jacobian(xhat)
    det = np.linalg.det(J)
    if np.any(np.abs(det) < 1e-14):
        raise np.linalg.LinAlgError("singular Jacobian")
    vals = np.asarray(vhat, dtype=float).reshape(len(xhat), -1)
    return np.einsum("nij,nj->ni", J, vals) / det[:, None]


def piola_matrices(geometry: BlockGeometry | None, nodes: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Nodal pullback and pushforward matrices for interleaved vector DOFs.

    Returns sparse block-diagonal ``(P, P^{-1})`` with ``uhat = P u``.
    """
    n, d = nodes.shape
    if geometry is None:
        eye = sp.identity(n * d, format="csr")
        return eye, eye
    J = geometry.piola_jacobian(nodes)
    det = np.linalg.det(J)
    P = det[:, None, None] * np.linalg.inv(J)
    Pinv = J / det[:, None, None]
    return sp.block_diag(list(P), format="csr"), sp.block_diag(list(Pinv), format="csr")


def sample_params(kind: "BlockKind | str", center: GeoParams, half_widths: dict[str, float],
                  rng: np.random.Generator) -> GeoParams:
    """Uniform sample of the nonaffine parameters around ``center``.

    Parameters
    ----------
    half_widths : dict
        Half-width per nonaffine parameter name; missing names stay fixed.
    rng : numpy.random.Generator

    Raises
    ------
    ValueError
        If ``center +- half_widths`` leaves the parameter space.
    """
    kind = BlockKind.parse(kind)
    space = PARAMETER_SPACES[kind]
    base = center.nonaffine(kind)
    unknown = set(half_widths) - set(base)
    if unknown:
        raise ValueError(f"unknown parameters for {kind.value}: {sorted(unknown)}")
    for name, hw in half_widths.items():
        if hw < 0:
            raise ValueError("half-widths must be nonnegative")
        lo, hi = space.bounds[name]
        if base[name] - hw < lo - 1e-14 or base[name] + hw > hi + 1e-14:
            raise ValueError(f"interval for {name} escapes [{lo}, {hi}]")
    if kind.is_tube:
        # the admissibility constraint is monotone, so the worst corner decides
        worst = dict(base)
        worst["bend"] = abs(base["bend"]) + half_widths.get("bend", 0.0)
        worst["length_ratio"] = base["length_ratio"] - half_widths.get("length_ratio", 0.0)
        worst["radius_ratio"] = base["radius_ratio"] + half_widths.get("radius_ratio", 0.0)
        if not tube_admissible(kind, center.with_nonaffine(kind, worst)):
            raise ValueError("sampling box contains inadmissible bent tubes")
    values = dict(base)
    for name in sorted(base):
        hw = half_widths.get(name, 0.0)
        if hw > 0:
            values[name] = float(rng.uniform(base[name] - hw, base[name] + hw))
    return center.with_nonaffine(kind, values)

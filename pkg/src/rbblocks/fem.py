"""P2-P1 Taylor-Hood spaces and per-block finite element operators.

Velocity basis functions live on the reference mesh and are carried to the
physical block by the Piola factor ``A = J / det(J)`` of the geometry:

    phi_(a, c)(x) = A(xhat) N_a(xhat) P_a e_c,    P_a = A(xhat_a)^{-1},

so that the nodal degrees of freedom are physical velocity vectors at the
mapped P2 nodes. With this choice the physical divergence matrix equals the
reference one times the nodal pullback ``P``; for straight or affinely mapped
blocks ``A`` is constant and the space is the usual P2 space. Velocity DOFs
are interleaved: DOF ``d * node + c`` is component ``c`` at ``node``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from .geomap import BlockGeometry, piola_matrices
from .mesh import FacetKind, FacetTag, SimplicialMesh, local_edges
from .quadrature import simplex_rule

QUAD_DEGREE = 6


def p2_shape(bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """P2 Lagrange shape functions in barycentric coordinates.

    Parameters
    ----------
    bary : ndarray, shape (..., d + 1)

    Returns
    -------
    values : ndarray, shape (..., nloc)
        Vertex functions first, then edge functions in ``local_edges`` order.
    dvalues : ndarray, shape (..., nloc, d + 1)
        Derivatives with respect to each barycentric coordinate.
    """
    nb = bary.shape[-1]
    edges = list(combinations(range(nb), 2))
    nloc = nb + len(edges)
    vals = np.empty(bary.shape[:-1] + (nloc,))
    dvals = np.zeros(bary.shape[:-1] + (nloc, nb))
    for i in range(nb):
        vals[..., i] = bary[..., i] * (2 * bary[..., i] - 1)
        dvals[..., i, i] = 4 * bary[..., i] - 1
    for e, (i, j) in enumerate(edges):
        vals[..., nb + e] = 4 * bary[..., i] * bary[..., j]
        dvals[..., nb + e, i] = 4 * bary[..., j]
        dvals[..., nb + e, j] = 4 * bary[..., i]
    return vals, dvals


def _bary_gradient(dim: int) -> np.ndarray:
    """d lambda / d xi on the master simplex, shape (d + 1, d)."""
    return np.vstack([-np.ones(dim), np.eye(dim)])


class _Scatter:
    """Sum element contributions into a CSR matrix with a fixed pattern."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
        self.shape = shape
        keys = rows.ravel().astype(np.int64) * shape[1] + cols.ravel()
        uniq, self.inverse = np.unique(keys, return_inverse=True)
        self.n = uniq.size
        r = uniq // shape[1]
        self.indices = (uniq % shape[1]).astype(np.int32)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=shape[0]))]).astype(np.int32)

    def __call__(self, values: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.inverse, weights=values.ravel(), minlength=self.n)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


@dataclass
class BasisAtPoints:
    """Velocity and pressure basis data at a batch of points, per cell.

    Shapes use ``nc`` cells, ``nq`` points per cell, ``nv = nloc * d`` local
    velocity DOFs and ``d`` space dimensions.
    """

    cells: np.ndarray  # (nc,)
    points: np.ndarray  # physical points (nc, nq, d)
    ref_points: np.ndarray  # (nc, nq, d)
    G: np.ndarray  # geometric Jacobian dx/dxhat (nc, nq, d, d)
    values: np.ndarray  # (nc, nq, nv, d)
    grads: np.ndarray  # (nc, nq, nv, d, d), [.., k, j] = d phi_k / d x_j
    p_values: np.ndarray  # (nc, nq, d + 1)
    p_grads: np.ndarray  # (nc, nq, d + 1, d)
    vdofs: np.ndarray  # (nc, nv)
    pdofs: np.ndarray  # (nc, d + 1)


class TaylorHoodSpace:
    """P2 velocity / P1 pressure pair on a (possibly deformed) block.

    Parameters
    ----------
    mesh : SimplicialMesh
        Reference mesh.
    geometry : BlockGeometry, optional
        Deformation; ``None`` means the identity.
    """

    def __init__(self, mesh: SimplicialMesh, geometry: BlockGeometry | None = None):
        self.mesh = mesh
        self.geometry = geometry
        d = self.dim = mesh.dim
        nv = mesh.n_vertices
        self.edges = mesh.edges()
        keys = self.edges[:, 0] * nv + self.edges[:, 1]
        order = np.argsort(keys)
        cell_edges = []
        for a, b in local_edges(d):
            pair = np.sort(mesh.cells[:, [a, b]], axis=1)
            k = pair[:, 0] * nv + pair[:, 1]
            cell_edges.append(order[np.searchsorted(keys[order], k)])
        self.cell_nodes = np.concatenate([mesh.cells, nv + np.stack(cell_edges, axis=1)], axis=1)
        self.nodes = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[self.edges[:, 0]] + mesh.vertices[self.edges[:, 1]])])
        self.n_nodes = len(self.nodes)
        self.n_u = d * self.n_nodes
        self.n_p = nv
        self.nloc = self.cell_nodes.shape[1]
        self.cell_vdofs = (d * self.cell_nodes[:, :, None] + np.arange(d)).reshape(mesh.n_cells, -1)

        if geometry is None:
            self.physical_nodes = self.nodes.copy()
            self._phys_vertices = mesh.vertices
        elif geometry.straight_cells:
            pv = geometry.physical_vertices()
            self._phys_vertices = pv
            self.physical_nodes = np.vstack([pv, 0.5 * (pv[self.edges[:, 0]] + pv[self.edges[:, 1]])])
        else:
            self._phys_vertices = None
            self.physical_nodes = geometry.map(self.nodes)
        self.pullback, self.pushforward = piola_matrices(geometry, self.nodes)
        if geometry is None:
            self._node_P = np.broadcast_to(np.eye(d), (self.n_nodes, d, d))
        else:
            J = geometry.piola_jacobian(self.nodes)
            self._node_P = np.linalg.det(J)[:, None, None] * np.linalg.inv(J)

        X = mesh.vertices[mesh.cells]
        self._X0 = X[:, 0]
        self._F = (X[:, 1:] - X[:, :1]).transpose(0, 2, 1)
        self._Finv = np.linalg.inv(self._F)
        self._Fdet = np.abs(np.linalg.det(self._F))
        if np.any(self._Fdet < 1e-14):
            raise ValueError("degenerate cell")
        if self._phys_vertices is not None:
            Xp = self._phys_vertices[mesh.cells]
            Fp = (Xp[:, 1:] - Xp[:, :1]).transpose(0, 2, 1)
            self._Gcell = Fp @ self._Finv
        self._facet_cells = None
        self.wall_nodes = self._wall_nodes()
        wall = (d * self.wall_nodes[:, None] + np.arange(d)).ravel()
        self.dirichlet_dofs = np.sort(wall)
        mask = np.ones(self.n_u, bool)
        mask[self.dirichlet_dofs] = False
        self.free_dofs = np.flatnonzero(mask)

    def _wall_nodes(self) -> np.ndarray:
        nodes = set()
        edge_index = {tuple(e): i for i, e in enumerate(self.edges.tolist())}
        nv = self.mesh.n_vertices
        for f, tag in self.mesh.facet_tags.items():
            if tag.kind is FacetKind.WALL:
                nodes.update(f)
                for a, b in combinations(f, 2):
                    nodes.add(nv + edge_index[(a, b)])
        return np.array(sorted(nodes), dtype=np.int64)

    def port_nodes(self, tag: FacetTag) -> np.ndarray:
        """Nodes lying on the facets carrying ``tag`` (including endpoints)."""
        nodes = set()
        edge_index = {tuple(e): i for i, e in enumerate(self.edges.tolist())}
        nv = self.mesh.n_vertices
        for f in self.mesh.boundary_facets(tag):
            nodes.update(f)
            for a, b in combinations(f, 2):
                nodes.add(nv + edge_index[(a, b)])
        return np.array(sorted(nodes), dtype=np.int64)

    # basis evaluation -------------------------------------------------
    def evaluate(self, cells: np.ndarray, bary: np.ndarray) -> BasisAtPoints:
        """Basis data at barycentric points ``bary`` (nc, nq, d + 1) of ``cells``."""
        d = self.dim
        cells = np.asarray(cells)
        xi = bary[..., 1:]
        xhat = self._X0[cells][:, None, :] + np.einsum("cij,cqj->cqi", self._F[cells], xi)
        nc, nq = xhat.shape[:2]
        flat = xhat.reshape(-1, d)
        N, dN = p2_shape(bary)
        dbar = _bary_gradient(d)
        # reference gradients d N / d xhat
        dNx = np.einsum("cqab,bj,cjk->cqak", dN, dbar, self._Finv[cells])
        if self.geometry is None:
            A = np.broadcast_to(np.eye(d), (nc, nq, d, d))
            dA = np.zeros((nc, nq, d, d, d))
            G = A
            points = xhat
        else:
            J = self.geometry.piola_jacobian(flat).reshape(nc, nq, d, d)
            dJ = self.geometry.piola_jacobian_gradient(flat).reshape(nc, nq, d, d, d)
            g = np.linalg.det(J)
            Jinv = np.linalg.inv(J)
            trace = np.einsum("cqij,cqjil->cql", Jinv, dJ)
            A = J / g[..., None, None]
            dA = (dJ - J[..., None] * trace[:, :, None, None, :]) / g[..., None, None, None]
            if self.geometry.straight_cells:
                G = np.broadcast_to(self._Gcell[cells][:, None], (nc, nq, d, d))
                pv = self._phys_vertices[self.mesh.cells[cells]]
                points = np.einsum("cqa,cak->cqk", bary, pv)
            else:
                G = J
                points = self.geometry.map(flat).reshape(nc, nq, d)
        Ginv = np.linalg.inv(G)
        nodeP = self._node_P[self.cell_nodes[cells]]  # (nc, nloc, d, d)
        # values[c, q, a, comp, k] = N_a (A P_a)[k, comp]
        AP = np.einsum("cqkm,camn->cqakn", A, nodeP)
        values = N[..., None, None] * AP
        dAP = np.einsum("cqkml,camn->cqaknl", dA, nodeP)
        gref = dAP * N[..., None, None, None] + AP[..., None] * dNx[:, :, :, None, None, :]
        grads = np.einsum("cqaknl,cqlj->cqankj", gref, Ginv)
        values = values.transpose(0, 1, 2, 4, 3).reshape(nc, nq, self.nloc * d, d)
        grads = grads.reshape(nc, nq, self.nloc * d, d, d)
        p_grads = np.broadcast_to(
            np.einsum("bj,cjk->cbk", dbar, self._Finv[cells])[:, None], (nc, nq, d + 1, d)
        )
        p_grads = np.einsum("cqbl,cqlj->cqbj", p_grads, Ginv)
        return BasisAtPoints(
            cells=cells, points=points, ref_points=xhat, G=np.asarray(G), values=values, grads=grads,
            p_values=bary, p_grads=p_grads, vdofs=self.cell_vdofs[cells], pdofs=self.mesh.cells[cells],
        )

    def cell_quadrature(self, degree: int = QUAD_DEGREE) -> tuple[BasisAtPoints, np.ndarray]:
        """Basis data at cell quadrature points and physical weights (nc, nq)."""
        pts, w = simplex_rule(self.dim, degree)
        nc = self.mesh.n_cells
        bary = np.concatenate([1 - pts.sum(1, keepdims=True), pts], axis=1)
        basis = self.evaluate(np.arange(nc), np.broadcast_to(bary, (nc,) + bary.shape))
        weights = w[None, :] * self._Fdet[:, None] * np.abs(np.linalg.det(basis.G))
        return basis, weights

    def facet_quadrature(self, tag: FacetTag, degree: int = QUAD_DEGREE):
        """Basis data on the facets carrying ``tag``.

        Returns
        -------
        basis : BasisAtPoints
            One pseudo-cell per facet (the adjacent cell).
        weights : ndarray, shape (nf, nq)
            Physical surface measure.
        normals : ndarray, shape (nf, nq, d)
            Physical outward unit normals.
        """
        d = self.dim
        facets = self.mesh.boundary_facets(tag)
        if self._facet_cells is None:
            self._facet_cells = {}
            for c, cell in enumerate(self.mesh.cells.tolist()):
                for f in combinations(sorted(cell), d):
                    if f in self.mesh.facet_tags:
                        self._facet_cells[f] = c
        cells = np.array([self._facet_cells[f] for f in facets])
        pts, w = simplex_rule(d - 1, degree)
        V = self.mesh.vertices
        fv = V[np.array(facets)]  # (nf, d, d)
        xhat = fv[:, :1] + np.einsum("fkj,qk->fqj", (fv[:, 1:] - fv[:, :1]), pts)
        lam = np.einsum("fij,fqj->fqi", self._Finv[cells], xhat - self._X0[cells][:, None])
        bary = np.concatenate([1 - lam.sum(-1, keepdims=True), lam], axis=-1)
        basis = self.evaluate(cells, bary)
        # reference facet normal and measure
        T = fv[:, 1:] - fv[:, :1]
        if d == 2:
            nref = np.stack([T[:, 0, 1], -T[:, 0, 0]], -1)
            meas = np.linalg.norm(nref, axis=-1)
        else:
            nref = np.cross(T[:, 0], T[:, 1])
            meas = np.linalg.norm(nref, axis=-1)
        nref = nref / meas[:, None]
        centroid = V[self.mesh.cells[cells]].mean(1)
        flip = np.einsum("fj,fj->f", nref, fv[:, 0] - centroid) < 0
        nref[flip] *= -1
        # 2D: rule weights sum to 1 on the edge; 3D: weights sum to 1/2 and |cross| is twice the area
        Ginv_T = np.linalg.inv(basis.G).transpose(0, 1, 3, 2)
        nphys = np.einsum("fqij,fj->fqi", Ginv_T, nref)
        scale = np.linalg.norm(nphys, axis=-1)
        weights = w[None, :] * meas[:, None] * np.abs(np.linalg.det(basis.G)) * scale
        return basis, weights, nphys / scale[..., None]

    # interpolation ----------------------------------------------------
    def interpolate(self, f, field: str = "velocity") -> np.ndarray:
        """Nodal interpolant of ``f`` evaluated at physical nodes."""
        if field == "velocity":
            vals = np.asarray(f(self.physical_nodes), dtype=float).reshape(self.n_nodes, self.dim)
            return vals.ravel()
        if field == "pressure":
            return np.asarray(f(self.physical_nodes[: self.n_p]), dtype=float).reshape(self.n_p)
        raise ValueError(f"unknown field {field!r}")


def interpolate(space: TaylorHoodSpace, f, field: str = "velocity") -> np.ndarray:
    """Nodal interpolant of an analytic field on the physical block."""
    return space.interpolate(f, field)


class ConvectiveAssembler:
    """Assembles the convective matrix, its Newton part and related forms."""

    def __init__(self, space: TaylorHoodSpace, rho: float, degree: int = QUAD_DEGREE):
        self.space = space
        self.rho = rho
        self.basis, self.weights = space.cell_quadrature(degree)
        vd = space.cell_vdofs
        nv = vd.shape[1]
        rows = np.repeat(vd, nv, axis=1)
        cols = np.tile(vd, (1, nv))
        self._scatter = _Scatter(rows, cols, (space.n_u, space.n_u))
        self._rw = rho * self.weights

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.space.n_u,):
            raise ValueError(f"velocity vector has length {u.shape}, expected {self.space.n_u}")
        return u

    def field(self, u):
        ul = u[self.basis.vdofs]
        uq = np.einsum("cj,cqjk->cqk", ul, self.basis.values)
        gu = np.einsum("cj,cqjkm->cqkm", ul, self.basis.grads)
        return uq, gu

    def matrix(self, u) -> sp.csr_matrix:
        """``C(u)_ij = int rho [(u . grad) phi_j] . phi_i``."""
        u = self._check(u)
        uq, _ = self.field(u)
        adv = np.einsum("cqm,cqjkm->cqjk", uq, self.basis.grads)
        Ke = np.einsum("cq,cqik,cqjk->cij", self._rw, self.basis.values, adv)
        return self._scatter(Ke)

    def newton_matrix(self, u) -> sp.csr_matrix:
        """Derivative part ``N(u)_ij = int rho [(phi_j . grad) u] . phi_i``."""
        u = self._check(u)
        _, gu = self.field(u)
        t = np.einsum("cqkm,cqjm->cqjk", gu, self.basis.values)
        Ke = np.einsum("cq,cqik,cqjk->cij", self._rw, self.basis.values, t)
        return self._scatter(Ke)

    def vector(self, u) -> np.ndarray:
        """``c(u)_i = int rho [(u . grad) u] . phi_i``."""
        u = self._check(u)
        uq, gu = self.field(u)
        adv = np.einsum("cqm,cqkm->cqk", uq, gu)
        ve = np.einsum("cq,cqik,cqk->ci", self._rw, self.basis.values, adv)
        return np.bincount(self.basis.vdofs.ravel(), weights=ve.ravel(), minlength=self.space.n_u)

    def mode_fields(self, modes: np.ndarray):
        """Values and gradients of mode columns at quadrature points."""
        loc = modes[self.basis.vdofs]  # (nc, nv, N)
        vals = np.einsum("cjn,cqjk->ncqk", loc, self.basis.values)
        grads = np.einsum("cjn,cqjkm->ncqkm", loc, self.basis.grads)
        return vals, grads

    def trilinear_tensor(self, modes: np.ndarray, n_c: int | None = None) -> np.ndarray:
        """``T[i, l, m] = int rho [(zeta_m . grad) zeta_l] . zeta_i`` for l, m < n_c."""
        modes = np.asarray(modes, dtype=float)
        if modes.ndim != 2 or modes.shape[0] != self.space.n_u:
            raise ValueError("modes must be an (n_u, N) array")
        N = modes.shape[1]
        n_c = N if n_c is None else n_c
        if not (0 <= n_c <= N):
            raise ValueError("truncation index out of range")
        vals, grads = self.mode_fields(modes)
        wv = vals * self._rw[None, ..., None]
        T = np.empty((N, n_c, n_c))
        for m in range(n_c):
            adv = np.einsum("cqj,lcqkj->lcqk", vals[m], grads[:n_c])
            T[:, :, m] = np.einsum("icqk,lcqk->il", wv, adv)
        return T


def assemble_convective(ops: "BlockOperators", u) -> sp.csr_matrix:
    """Convective matrix ``C(u)`` of a block."""
    return ops.convective.matrix(u)


def assemble_convective_trilinear(ops: "BlockOperators", modes: np.ndarray, i: int, l: int, m: int) -> float:
    """Single trilinear value ``int rho [(zeta_m . grad) zeta_l] . zeta_i`` for mode columns."""
    modes = np.asarray(modes, dtype=float)
    N = modes.shape[1]
    for idx in (i, l, m):
        if not 0 <= idx < N:
            raise IndexError(f"mode index {idx} out of range for {N} modes")
    conv = ops.convective
    vals, grads = conv.mode_fields(modes[:, [i, l, m]])
    adv = np.einsum("cqj,cqkj->cqk", vals[2], grads[1])
    return float(np.einsum("cq,cqk,cqk->", conv._rw, vals[0], adv))


@dataclass
class BlockOperators:
    """Finite element matrices of one block in physical DOFs.

    All velocity matrices act on the full interleaved velocity vector,
    Dirichlet DOFs included; elimination happens in the global system.
    """

    space: TaylorHoodSpace
    rho: float
    mu: float
    M: sp.csr_matrix
    K: sp.csr_matrix
    D: sp.csr_matrix
    Xu: sp.csr_matrix
    Xp: sp.csr_matrix
    convective: ConvectiveAssembler = field(repr=False)


def assemble_static(space: TaylorHoodSpace, rho: float, mu: float, degree: int = QUAD_DEGREE) -> BlockOperators:
    """Mass, stiffness, divergence and norm matrices of a block.

    Parameters
    ----------
    space : TaylorHoodSpace
    rho : float
        Density in g/cm^3.
    mu : float
        Dynamic viscosity in g/(cm s).
    """
    if rho <= 0 or mu <= 0:
        raise ValueError("density and viscosity must be positive")
    conv = ConvectiveAssembler(space, rho, degree)
    b, w = conv.basis, conv.weights
    vd, pd = b.vdofs, b.pdofs
    nvl, npl = vd.shape[1], pd.shape[1]
    mass = np.einsum("cq,cqik,cqjk->cij", w, b.values, b.values)
    strain = 0.5 * (b.grads + b.grads.transpose(0, 1, 2, 4, 3))
    Kel = 2 * mu * np.einsum("cq,cqikl,cqjkl->cij", w, strain, strain)
    H1 = mass + np.einsum("cq,cqikl,cqjkl->cij", w, b.grads, b.grads)
    div = np.einsum("cqjkk->cqj", b.grads)
    Del = -np.einsum("cq,cqa,cqj->caj", w, b.p_values, div)
    Pel = np.einsum("cq,cqa,cqb->cab", w, b.p_values, b.p_values)
    nu, np_ = space.n_u, space.n_p
    M = conv._scatter(rho * mass)
    K = conv._scatter(Kel)
    Xu = conv._scatter(H1)
    D = sp.csr_matrix(
        (Del.ravel(), (np.repeat(pd, nvl, axis=1).ravel(), np.tile(vd, (1, npl)).ravel())), shape=(np_, nu)
    )
    Xp = sp.csr_matrix(
        (Pel.ravel(), (np.repeat(pd, npl, axis=1).ravel(), np.tile(pd, (1, npl)).ravel())), shape=(np_, np_)
    )
    D.sum_duplicates()
    Xp.sum_duplicates()
    return BlockOperators(space, rho, mu, M, K, D, Xu, Xp, conv)

"""Global block system of the coupled full-order model.

Unknowns are stored in one flat vector laid out as

    [u_1, p_1, u_2, p_2, ..., lambda_interface_1, ..., lambda_inlet_1, ...]

where ``u_j`` holds the velocity DOFs of block ``j`` that are not on the
wall (wall DOFs are eliminated with the homogeneous Dirichlet condition).
The BDF residual of one time step is

    R_u = M (u - sum_i a_i u_{k-i+1}) + dt b [(K + C(u)) u + D^T p + B^T lam - F]
    R_p = dt b D u
    R_lam = dt b (B u - G)

and the steady variant drops the mass term and the ``dt b`` factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .coupling import (InterfaceDescriptor, MultiplierBasis, SegmentPlacement, assemble_coupling,
                       assemble_inlet_coupling)
from .fem import QUAD_DEGREE, BlockOperators
from .geomap import PhysicalPort
from .mesh import FacetTag


def bdf_coefficients(sigma: int) -> tuple[tuple[float, ...], float]:
    """History weights ``alpha_j`` and right-hand side weight ``beta`` of BDF order ``sigma``."""
    if sigma == 1:
        return (1.0,), 1.0
    if sigma == 2:
        return (4.0 / 3.0, -1.0 / 3.0), 2.0 / 3.0
    raise ValueError(f"unsupported BDF order {sigma}")


@dataclass
class Subdomain:
    """One deformed block of the global geometry."""

    name: str
    ops: BlockOperators
    tractions: dict[FacetTag, Callable] = field(default_factory=dict)

    @property
    def space(self):
        return self.ops.space

    @property
    def geometry(self):
        return self.ops.space.geometry


@dataclass
class InletDescriptor:
    """Weakly imposed inflow on a port of one block.

    The imposed velocity is ``flow_rate(t)`` times a parabolic profile of unit
    flow rate directed along the inward normal.
    """

    block: int
    tag: FacetTag
    port: PhysicalPort
    flow_rate: Callable[[float], float]

    @property
    def placement(self) -> SegmentPlacement:
        return SegmentPlacement.from_port(self.port)

    def unit_profile(self, x: np.ndarray) -> np.ndarray:
        """Parabolic profile with unit flow rate through the port."""
        W = self.port.width
        eta = (x - self.port.center) @ self.port.tangent
        speed = 1.5 / W * np.clip(1.0 - (2.0 * eta / W) ** 2, 0.0, None)
        return -speed[:, None] * self.port.normal[None, :]


@dataclass
class Layout:
    """Offsets of the block and multiplier segments in the flat state vector."""

    velocity: list[slice]
    pressure: list[slice]
    multipliers: list[slice]
    size: int

    @property
    def n_blocks(self) -> int:
        return len(self.velocity)

    @property
    def n_multiplier_dofs(self) -> int:
        return sum(s.stop - s.start for s in self.multipliers)

    @property
    def multiplier_start(self) -> int:
        return self.multipliers[0].start if self.multipliers else self.size

    def block(self, j: int) -> slice:
        return slice(self.velocity[j].start, self.pressure[j].stop)


def make_layout(n_velocity: list[int], n_pressure: list[int], n_multiplier: list[int]) -> Layout:
    off = 0
    vel, pre, lam = [], [], []
    for nu, np_ in zip(n_velocity, n_pressure):
        vel.append(slice(off, off + nu))
        off += nu
        pre.append(slice(off, off + np_))
        off += np_
    for nl in n_multiplier:
        lam.append(slice(off, off + nl))
        off += nl
    return Layout(vel, pre, lam, off)


@dataclass
class Tangent:
    """Saddle-point tangent ``[[A, Bt^T], [Bt, 0]]`` with per-block structure.

    ``blocks[j]`` is the local saddle matrix of block ``j`` (velocity and
    pressure); ``couplings[(i, j)]`` is the scaled coupling of multiplier
    segment ``i`` with the velocity of block ``j``.
    """

    layout: Layout
    velocity_blocks: list[sp.csr_matrix]
    divergence_blocks: list[sp.csr_matrix]
    couplings: dict[tuple[int, int], sp.csr_matrix]
    _full: sp.csr_matrix | None = None
    _local: list | None = None
    _coupling: dict = field(default_factory=dict)

    def local(self, j: int) -> sp.csr_matrix:
        if self._local is None:
            self._local = [None] * self.layout.n_blocks
        if self._local[j] is None:
            F, G = self.velocity_blocks[j], self.divergence_blocks[j]
            self._local[j] = sp.bmat([[F, G.T], [G, None]], format="csr")
        return self._local[j]

    def coupling_block(self, j: int) -> sp.csr_matrix:
        """Rows of all multipliers against the local (u, p) unknowns of block ``j``."""
        if j not in self._coupling:
            self._coupling[j] = self._coupling_block(j)
        return self._coupling[j]

    def _coupling_block(self, j: int) -> sp.csr_matrix:
        lay = self.layout
        nl = lay.n_multiplier_dofs
        nloc = (lay.velocity[j].stop - lay.velocity[j].start) + (lay.pressure[j].stop - lay.pressure[j].start)
        rows, cols, vals = [], [], []
        for (i, jj), B in self.couplings.items():
            if jj != j:
                continue
            Bc = B.tocoo()
            rows.append(Bc.row + lay.multipliers[i].start - lay.multiplier_start)
            cols.append(Bc.col)
            vals.append(Bc.data)
        if not rows:
            return sp.csr_matrix((nl, nloc))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nl, nloc))

    def full(self) -> sp.csr_matrix:
        if self._full is None:
            lay = self.layout
            nb = lay.n_blocks
            nl = len(lay.multipliers)
            grid = [[None] * (nb + nl) for _ in range(nb + nl)]
            for j in range(nb):
                grid[j][j] = self.local(j)
            for (i, j), B in self.couplings.items():
                npj = lay.pressure[j].stop - lay.pressure[j].start
                Bp = sp.hstack([B, sp.csr_matrix((B.shape[0], npj))])
                grid[nb + i][j] = Bp
                grid[j][nb + i] = Bp.T
            for i in range(nl):
                size = lay.multipliers[i].stop - lay.multipliers[i].start
                if grid[nb + i][nb + i] is None:
                    grid[nb + i][nb + i] = sp.csr_matrix((size, size))
            self._full = sp.bmat(grid, format="csr")
        return self._full

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.full() @ x


class GlobalSystem:
    """Coupled FOM on a set of subdomains.

    Parameters
    ----------
    subdomains : list of Subdomain
    interfaces : list of InterfaceDescriptor
    inlets : list of InletDescriptor
    basis : MultiplierBasis
    dt : float
    sigma : int
        BDF order; the first steps use the highest order the history allows.
    steady : bool
        Solve the stationary problem instead of a time step.
    forcing : callable, optional
        Body force ``f(x, t)`` on physical points, shape (n, d).
    linearization : {"newton", "picard"}
    convection : bool
        Set to False for the Stokes equations.
    """

    def __init__(self, subdomains: list[Subdomain], interfaces: list[InterfaceDescriptor],
                 inlets: list[InletDescriptor], basis: MultiplierBasis, dt: float = 2.5e-3, sigma: int = 2,
                 steady: bool = False, forcing: Callable | None = None, linearization: str = "newton",
                 convection: bool = True):
        bdf_coefficients(sigma)
        if dt <= 0:
            raise ValueError("time step must be positive")
        if linearization not in ("newton", "picard"):
            raise ValueError(f"unknown linearization {linearization!r}")
        self.subdomains = subdomains
        self.interfaces = interfaces
        self.inlets = inlets
        self.basis = basis
        self.dt = float(dt)
        self.sigma = sigma
        self.steady = steady
        self.forcing = forcing
        self.linearization = linearization
        self.convection = convection
        self.history: list[np.ndarray] = []

        self.free = [s.space.free_dofs for s in subdomains]
        self.M = [s.ops.M[f][:, f].tocsr() for s, f in zip(subdomains, self.free)]
        self.K = [s.ops.K[f][:, f].tocsr() for s, f in zip(subdomains, self.free)]
        self.D = [s.ops.D[:, f].tocsr() for s, f in zip(subdomains, self.free)]
        nl = basis.count
        self.layout = make_layout([len(f) for f in self.free], [s.space.n_p for s in subdomains],
                                  [nl] * (len(interfaces) + len(inlets)))
        # coupling matrices on free DOFs, keyed by (multiplier segment, block)
        self.B: dict[tuple[int, int], sp.csr_matrix] = {}
        self.B_full: dict[tuple[int, int], sp.csr_matrix] = {}
        for i, iface in enumerate(interfaces):
            for j in iface.blocks:
                Bf = assemble_coupling(subdomains[j].space, iface, basis, j)
                self.B_full[(i, j)] = Bf
                self.B[(i, j)] = Bf[:, self.free[j]].tocsr()
        self.inlet_data = []
        for k, inl in enumerate(inlets):
            i = len(interfaces) + k
            space = subdomains[inl.block].space
            Bf, _ = assemble_inlet_coupling(space, inl.tag, basis, inl.placement)
            self.B_full[(i, inl.block)] = Bf
            self.B[(i, inl.block)] = Bf[:, self.free[inl.block]].tocsr()
            g_unit = space.interpolate(inl.unit_profile)
            self.inlet_data.append(Bf @ g_unit)
        self._rhs_cache: dict = {}

    # layout helpers ------------------------------------------------------
    @property
    def size(self) -> int:
        return self.layout.size

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)

    def velocity(self, Y: np.ndarray, j: int) -> np.ndarray:
        """Full velocity vector of block ``j`` including wall zeros."""
        u = np.zeros(self.subdomains[j].space.n_u)
        u[self.free[j]] = Y[self.layout.velocity[j]]
        return u

    def pressure(self, Y: np.ndarray, j: int) -> np.ndarray:
        return Y[self.layout.pressure[j]]

    def multiplier(self, Y: np.ndarray, i: int) -> np.ndarray:
        return Y[self.layout.multipliers[i]]

    def pack(self, velocities: list[np.ndarray], pressures: list[np.ndarray],
             multipliers: list[np.ndarray] | None = None) -> np.ndarray:
        Y = self.zeros()
        for j in range(self.layout.n_blocks):
            Y[self.layout.velocity[j]] = velocities[j][self.free[j]]
            Y[self.layout.pressure[j]] = pressures[j]
        for i, lam in enumerate(multipliers or []):
            Y[self.layout.multipliers[i]] = lam
        return Y

    # time stepping ---------------------------------------------------------
    def order(self) -> int:
        return min(self.sigma, len(self.history))

    def scheme(self) -> tuple[tuple[float, ...], float]:
        """Coefficients in use at the current step; (), 1 in steady mode."""
        if self.steady:
            return (), 1.0
        sigma = self.order()
        if sigma == 0:
            raise RuntimeError("missing history: push an initial state first")
        return bdf_coefficients(sigma)

    def dtb(self) -> float:
        _, beta = self.scheme()
        return 1.0 if self.steady else self.dt * beta

    def push(self, Y: np.ndarray):
        self.history.insert(0, np.array(Y, dtype=float))
        del self.history[self.sigma:]

    def reset(self, Y0: np.ndarray | None = None):
        self.history = []
        if Y0 is not None:
            self.push(Y0)

    # data ------------------------------------------------------------------
    def body_force(self, j: int, t: float) -> np.ndarray:
        """Free-DOF load vector from the body force and outlet tractions."""
        sub = self.subdomains[j]
        space = sub.space
        F = np.zeros(space.n_u)
        if self.forcing is not None:
            key = ("cell", j)
            if key not in self._rhs_cache:
                self._rhs_cache[key] = space.cell_quadrature(QUAD_DEGREE)
            b, w = self._rhs_cache[key]
            f = np.asarray(self.forcing(b.points.reshape(-1, space.dim), t)).reshape(b.points.shape)
            Fe = np.einsum("cq,cqik,cqk->ci", w, b.values, f)
            F += np.bincount(b.vdofs.ravel(), weights=Fe.ravel(), minlength=space.n_u)
        for tag, h in sub.tractions.items():
            key = ("facet", j, tag)
            if key not in self._rhs_cache:
                self._rhs_cache[key] = space.facet_quadrature(tag, QUAD_DEGREE)
            b, w, n = self._rhs_cache[key]
            hv = np.asarray(h(b.points.reshape(-1, space.dim), t, n.reshape(-1, space.dim))).reshape(b.points.shape)
            Fe = np.einsum("cq,cqik,cqk->ci", w, b.values, hv)
            F += np.bincount(b.vdofs.ravel(), weights=Fe.ravel(), minlength=space.n_u)
        return F[self.free[j]]

    def inlet_rhs(self, k: int, t: float) -> np.ndarray:
        return self.inlets[k].flow_rate(t) * self.inlet_data[k]

    # residual and tangent -----------------------------------------------
    def residual(self, Y: np.ndarray, t: float) -> np.ndarray:
        """BDF (or steady) residual at the unknown state ``Y`` and time ``t``."""
        alphas, _ = self.scheme()
        dtb = self.dtb()
        lay = self.layout
        R = np.zeros(self.size)
        for j, sub in enumerate(self.subdomains):
            uf = Y[lay.velocity[j]]
            p = Y[lay.pressure[j]]
            Au = self.K[j] @ uf + self.D[j].T @ p - self.body_force(j, t)
            if self.convection:
                u = self.velocity(Y, j)
                Au += sub.ops.convective.vector(u)[self.free[j]]
            for (i, jj), B in self.B.items():
                if jj == j:
                    Au += B.T @ Y[lay.multipliers[i]]
            Ru = dtb * Au
            if not self.steady:
                hist = sum(a * H[lay.velocity[j]] for a, H in zip(alphas, self.history))
                Ru += self.M[j] @ (uf - hist)
            R[lay.velocity[j]] = Ru
            R[lay.pressure[j]] = dtb * (self.D[j] @ uf)
        n_if = len(self.interfaces)
        for i in range(len(lay.multipliers)):
            r = np.zeros(self.basis.count)
            for (ii, j), B in self.B.items():
                if ii == i:
                    r += B @ Y[lay.velocity[j]]
            if i >= n_if:
                r -= self.inlet_rhs(i - n_if, t)
            R[lay.multipliers[i]] = dtb * r
        return R

    def tangent(self, Y: np.ndarray, t: float | None = None) -> Tangent:
        """Jacobian of :meth:`residual` (Picard drops the convective derivative)."""
        dtb = self.dtb()
        Fs, Gs = [], []
        for j, sub in enumerate(self.subdomains):
            f = self.free[j]
            A = self.K[j]
            if self.convection:
                u = self.velocity(Y, j)
                C = sub.ops.convective.matrix(u)
                if self.linearization == "newton":
                    C = C + sub.ops.convective.newton_matrix(u)
                A = A + C[f][:, f]
            F = dtb * A
            if not self.steady:
                F = F + self.M[j]
            Fs.append(F.tocsr())
            Gs.append((dtb * self.D[j]).tocsr())
        couplings = {k: (dtb * B).tocsr() for k, B in self.B.items()}
        return Tangent(self.layout, Fs, Gs, couplings)

    # diagnostics -----------------------------------------------------------
    def interface_jump(self, Y: np.ndarray, i: int) -> np.ndarray:
        """``sum_j B^[i](j) u_j`` for interface ``i``."""
        r = np.zeros(self.basis.count)
        for (ii, j), B in self.B.items():
            if ii == i:
                r += B @ Y[self.layout.velocity[j]]
        return r

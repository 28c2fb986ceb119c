"""Online reduced model: projected block operators, reduced coupling and the reduced time loop.

Velocity bases are stored on the reference block and pushed forward with the
Piola map of the online geometry; pressure bases are used as they are.  The
multipliers are not reduced, so a reduced state is laid out as

    [u^N_1, p^N_1, u^N_2, p^N_2, ..., lambda_1, ..., lambda_inlet, ...]

with the multiplier segments of the full-order system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .assembly import GlobalSystem, Layout, bdf_coefficients, make_layout
from .solver.newton import NewtonConfig, NewtonResult, newton_iterate
from .solver.preconditioner import SingularBlockError
from .timeloop import TimeSchedule, Trajectory, run_time_loop

ROM_MAX_NEWTON = 50
SCHUR_RCOND = 1e-13


@dataclass
class BlockReduction:
    """Projected operators of one subdomain.

    ``Vu`` is the physical-frame velocity basis on the free DOFs and
    ``Vu_full`` the same basis on all DOFs (zero on the wall).
    """

    Vu: np.ndarray
    Vu_full: np.ndarray
    Vp: np.ndarray
    M: np.ndarray
    K: np.ndarray
    D: np.ndarray
    n_c: int
    tensor: np.ndarray | None = None

    @property
    def n_u(self) -> int:
        return self.Vu.shape[1]

    @property
    def n_p(self) -> int:
        return self.Vp.shape[1]


@dataclass
class ReducedModel:
    """Reduced counterpart of a :class:`~rbblocks.assembly.GlobalSystem`.

    Attributes
    ----------
    system : GlobalSystem
        Full-order system supplying the data, the BDF history logic and the
        multiplier layout.
    blocks : list of BlockReduction
    B : dict
        Reduced coupling ``B^h V_u`` keyed by (multiplier segment, block).
    layout : Layout
    convection : {"exact", "truncated"}
    """

    system: GlobalSystem
    blocks: list[BlockReduction]
    B: dict[tuple[int, int], np.ndarray]
    layout: Layout
    convection: str = "truncated"
    history: list[np.ndarray] = field(default_factory=list)
    _tangents: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.layout.size

    @property
    def sigma(self) -> int:
        return self.system.sigma

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)

    # history -------------------------------------------------------------
    def push(self, Y: np.ndarray):
        self.history.insert(0, np.array(Y, dtype=float))
        del self.history[self.sigma:]

    def reset(self, Y0: np.ndarray | None = None):
        self.history = []
        if Y0 is not None:
            self.push(Y0)

    def scheme(self):
        if self.system.steady:
            return (), 1.0
        order = min(self.sigma, len(self.history))
        if order == 0:
            raise RuntimeError("missing history: push an initial state first")
        return bdf_coefficients(order)

    def dtb(self) -> float:
        _, beta = self.scheme()
        return 1.0 if self.system.steady else self.system.dt * beta

    # state helpers -------------------------------------------------------
    def velocity(self, YN: np.ndarray, j: int) -> np.ndarray:
        return YN[self.layout.velocity[j]]

    def pressure(self, YN: np.ndarray, j: int) -> np.ndarray:
        return YN[self.layout.pressure[j]]

    def multiplier(self, YN: np.ndarray, i: int) -> np.ndarray:
        return YN[self.layout.multipliers[i]]

    def reconstruct(self, YN: np.ndarray) -> np.ndarray:
        """Full-order state vector of the reduced state ``YN``."""
        sys = self.system
        Y = sys.zeros()
        for j, blk in enumerate(self.blocks):
            Y[sys.layout.velocity[j]] = blk.Vu @ self.velocity(YN, j)
            Y[sys.layout.pressure[j]] = blk.Vp @ self.pressure(YN, j)
        for i in range(len(self.layout.multipliers)):
            Y[sys.layout.multipliers[i]] = self.multiplier(YN, i)
        return Y

    def reconstruct_fields(self, YN: np.ndarray, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Velocity (all DOFs) and pressure of block ``j``."""
        blk = self.blocks[j]
        return blk.Vu_full @ self.velocity(YN, j), blk.Vp @ self.pressure(YN, j)

    def project(self, Y: np.ndarray) -> np.ndarray:
        """Galerkin coefficients of a full-order state (exact when it lies in the span)."""
        sys = self.system
        YN = self.zeros()
        for j, blk in enumerate(self.blocks):
            F = sys.subdomains[j].ops
            f = sys.free[j]
            Xu = F.Xu[f][:, f]
            Gu = blk.Vu.T @ (Xu @ blk.Vu)
            YN[self.layout.velocity[j]] = np.linalg.solve(Gu, blk.Vu.T @ (Xu @ Y[sys.layout.velocity[j]]))
            Gp = blk.Vp.T @ (F.Xp @ blk.Vp)
            YN[self.layout.pressure[j]] = np.linalg.solve(Gp, blk.Vp.T @ (F.Xp @ Y[sys.layout.pressure[j]]))
        for i in range(len(self.layout.multipliers)):
            YN[self.layout.multipliers[i]] = Y[sys.layout.multipliers[i]]
        return YN


def _as_reference_velocity(space, modes):
    modes = np.asarray(modes, dtype=float)
    if modes.ndim != 2 or modes.shape[0] != space.n_u:
        raise ValueError(f"velocity basis must have {space.n_u} rows, got {modes.shape}")
    return modes


def project_operators(system: GlobalSystem, velocity_modes: list[np.ndarray], pressure_modes: list[np.ndarray],
                      n_c: list[int] | int | None = None, convection: str = "truncated",
                      frame: str = "reference") -> ReducedModel:
    """Project the operators of ``system`` onto per-block bases.

    Parameters
    ----------
    system : GlobalSystem
        Full-order system on the online geometry.
    velocity_modes : list of ndarray, shape (n_u, N_u)
        Velocity modes per block, on all DOFs.
    pressure_modes : list of ndarray, shape (n_p, N_p)
    n_c : int or list of int, optional
        Convective truncation index per block; defaults to all velocity modes.
        The window covers the first ``n_c`` columns of the (enriched) basis.
    convection : {"exact", "truncated"}
    frame : {"reference", "physical"}
        Frame of ``velocity_modes``; reference modes are pushed forward with
        the Piola map of each block.
    """
    nb = len(system.subdomains)
    if len(velocity_modes) != nb or len(pressure_modes) != nb:
        raise ValueError("one velocity and one pressure basis per block required")
    if convection not in ("exact", "truncated"):
        raise ValueError(f"unknown convection mode {convection!r}")
    if frame not in ("reference", "physical"):
        raise ValueError(f"unknown frame {frame!r}")
    if n_c is None or np.isscalar(n_c):
        n_c = [n_c] * nb
    blocks = []
    for j, sub in enumerate(system.subdomains):
        space = sub.space
        Vhat = _as_reference_velocity(space, velocity_modes[j])
        Vfull = space.pushforward @ Vhat if frame == "reference" else Vhat
        Vp = np.asarray(pressure_modes[j], dtype=float)
        if Vp.ndim != 2 or Vp.shape[0] != space.n_p:
            raise ValueError(f"pressure basis must have {space.n_p} rows, got {Vp.shape}")
        f = system.free[j]
        Vu = np.ascontiguousarray(Vfull[f])
        nc = Vu.shape[1] if n_c[j] is None else int(n_c[j])
        if not 0 <= nc <= Vu.shape[1]:
            raise ValueError(f"convective truncation {nc} out of range for block {j}")
        blk = BlockReduction(Vu=Vu, Vu_full=Vfull, Vp=Vp, M=Vu.T @ (system.M[j] @ Vu),
                             K=Vu.T @ (system.K[j] @ Vu), D=Vp.T @ (system.D[j] @ Vu), n_c=nc)
        if convection == "truncated" and system.convection:
            blk.tensor = sub.ops.convective.trilinear_tensor(Vfull, nc)
        blocks.append(blk)
    B = {k: np.asarray(Bk @ blocks[k[1]].Vu) for k, Bk in system.B.items()}
    nl = [s.stop - s.start for s in system.layout.multipliers]
    layout = make_layout([b.n_u for b in blocks], [b.n_p for b in blocks], nl)
    return ReducedModel(system, blocks, B, layout, convection)


def reduced_convective(model: ReducedModel, j: int, uN: np.ndarray, mode: str | None = None) -> np.ndarray:
    """Reduced convective vector ``V^T c(V u^N)`` of block ``j``.

    ``mode="exact"`` assembles the full-order term and projects it;
    ``mode="truncated"`` contracts the precomputed trilinear tensor over the
    first ``n_c`` coefficients.
    """
    mode = mode or model.convection
    blk = model.blocks[j]
    uN = np.asarray(uN, dtype=float)
    if uN.shape != (blk.n_u,):
        raise ValueError(f"reduced velocity must have length {blk.n_u}")
    if mode == "exact":
        sub = model.system.subdomains[j]
        c = sub.ops.convective.vector(blk.Vu_full @ uN)
        return blk.Vu.T @ c[model.system.free[j]]
    if mode == "truncated":
        if blk.tensor is None:
            raise ValueError("model was built without the convective tensor")
        w = uN[:blk.n_c]
        return np.einsum("ilm,l,m->i", blk.tensor, w, w, optimize=True)
    raise ValueError(f"unknown convection mode {mode!r}")


class ReducedTangent:
    """Factorized constant reduced tangent ``[[M + dtb K, dtb D^T, dtb B^T], [dtb D, 0], [dtb B, 0]]``.

    The block matrices are factorized densely, the dense multiplier Schur
    complement ``S = -sum_j C_j L_j^{-1} C_j^T`` is assembled and factorized
    once, and :meth:`solve` applies the exact block LDU inverse.
    """

    def __init__(self, model: ReducedModel, dtb: float, steady: bool = False):
        self.dtb = dtb
        lay = model.layout
        self.layout = lay
        nl = lay.n_multiplier_dofs
        off = lay.multiplier_start
        self.local, self.factors, self.C, self.W = [], [], [], []
        S = np.zeros((nl, nl))
        for j, blk in enumerate(model.blocks):
            F = dtb * blk.K + (0.0 if steady else blk.M)
            G = dtb * blk.D
            L = np.block([[F, G.T], [G, np.zeros((blk.n_p, blk.n_p))]])
            C = np.zeros((nl, blk.n_u + blk.n_p))
            for (i, jj), Bij in model.B.items():
                if jj == j:
                    rows = slice(lay.multipliers[i].start - off, lay.multipliers[i].stop - off)
                    C[rows, :blk.n_u] = dtb * Bij
            try:
                fac = linalg.lu_factor(L)
            except np.linalg.LinAlgError as exc:
                raise SingularBlockError(f"reduced block {j} is singular") from exc
            W = linalg.lu_solve(fac, C.T) if nl else np.zeros((L.shape[0], 0))
            S -= C @ W
            self.local.append(L)
            self.factors.append(fac)
            self.C.append(C)
            self.W.append(W)
        self.schur = S
        self.schur_singular_values = np.linalg.svd(S, compute_uv=False) if nl else np.zeros(0)
        sv = self.schur_singular_values
        if nl and (sv[-1] <= SCHUR_RCOND * max(sv[0], 1e-300)):
            raise SingularBlockError(
                f"reduced Schur complement is singular (sigma_min = {sv[-1]:.3e}); "
                "coupling supremizers are probably missing")
        self.schur_factor = linalg.lu_factor(S) if nl else None

    def matrix(self) -> np.ndarray:
        lay = self.layout
        A = np.zeros((lay.size, lay.size))
        off = lay.multiplier_start
        for j, (L, C) in enumerate(zip(self.local, self.C)):
            b = lay.block(j)
            A[b, b] = L
            A[off:, b] = C
            A[b, off:] = C.T
        return A

    def solve(self, r: np.ndarray) -> np.ndarray:
        lay = self.layout
        off = lay.multiplier_start
        x = np.zeros_like(r)
        Z = [linalg.lu_solve(fac, r[lay.block(j)]) for j, fac in enumerate(self.factors)]
        if self.schur_factor is None:
            for j, z in enumerate(Z):
                x[lay.block(j)] = z
            return x
        rl = r[off:] - sum(C @ z for C, z in zip(self.C, Z))
        xl = linalg.lu_solve(self.schur_factor, rl)
        for j, z in enumerate(Z):
            x[lay.block(j)] = z - self.W[j] @ xl
        x[off:] = xl
        return x


def reduced_schur_singular_values(model: ReducedModel, dtb: float | None = None) -> np.ndarray:
    """Singular values of the reduced multiplier Schur complement (no singularity check)."""
    dtb = model.system.dt * 2.0 / 3.0 if dtb is None else dtb
    nl = model.layout.n_multiplier_dofs
    off = model.layout.multiplier_start
    S = np.zeros((nl, nl))
    for j, blk in enumerate(model.blocks):
        L = np.block([[blk.M + dtb * blk.K, dtb * blk.D.T], [dtb * blk.D, np.zeros((blk.n_p, blk.n_p))]])
        C = np.zeros((nl, blk.n_u + blk.n_p))
        for (i, jj), Bij in model.B.items():
            if jj == j:
                lay = model.layout
                C[lay.multipliers[i].start - off:lay.multipliers[i].stop - off, :blk.n_u] = dtb * Bij
        S -= C @ np.linalg.lstsq(L, C.T, rcond=None)[0]
    return np.linalg.svd(S, compute_uv=False)


def reduced_tangent(model: ReducedModel, dtb: float | None = None) -> ReducedTangent:
    """Constant reduced tangent for the current BDF weight, built once and cached."""
    dtb = model.dtb() if dtb is None else dtb
    steady = model.system.steady
    key = (float(dtb), steady)
    if key not in model._tangents:
        model._tangents[key] = ReducedTangent(model, dtb, steady)
    return model._tangents[key]


def reduced_residual(model: ReducedModel, YN: np.ndarray, t: float) -> np.ndarray:
    """Galerkin projection of the full-order residual at the reduced state ``YN``."""
    sys = model.system
    alphas, _ = model.scheme()
    dtb = model.dtb()
    lay = model.layout
    R = np.zeros(model.size)
    for j, blk in enumerate(model.blocks):
        uN = YN[lay.velocity[j]]
        pN = YN[lay.pressure[j]]
        Au = blk.K @ uN + blk.D.T @ pN - blk.Vu.T @ sys.body_force(j, t)
        if sys.convection:
            Au += reduced_convective(model, j, uN)
        for (i, jj), B in model.B.items():
            if jj == j:
                Au += B.T @ YN[lay.multipliers[i]]
        Ru = dtb * Au
        if not sys.steady:
            hist = sum(a * H[lay.velocity[j]] for a, H in zip(alphas, model.history))
            Ru += blk.M @ (uN - hist)
        R[lay.velocity[j]] = Ru
        R[lay.pressure[j]] = dtb * (blk.D @ uN)
    n_if = len(sys.interfaces)
    for i in range(len(lay.multipliers)):
        r = np.zeros(sys.basis.count)
        for (ii, j), B in model.B.items():
            if ii == i:
                r += B @ YN[lay.velocity[j]]
        if i >= n_if:
            r -= sys.inlet_rhs(i - n_if, t)
        R[lay.multipliers[i]] = dtb * r
    return R


def rom_newton_solve(model: ReducedModel, YN0: np.ndarray, t: float, cfg: NewtonConfig | None = None) -> NewtonResult:
    """Newton iterations on the reduced residual with the fixed approximate tangent."""
    cfg = cfg or NewtonConfig(max_iterations=ROM_MAX_NEWTON)
    tangent = reduced_tangent(model)

    def solve(Y, R):
        return tangent.solve(-R), 0

    return newton_iterate(lambda Y: reduced_residual(model, Y, t), solve, YN0, cfg)


def rom_time_loop(model: ReducedModel, schedule: TimeSchedule, cfg: NewtonConfig | None = None,
                  YN0: np.ndarray | None = None) -> Trajectory:
    """Reduced time loop; states are reduced vectors, see :meth:`ReducedModel.reconstruct`."""
    cfg = cfg or NewtonConfig(max_iterations=ROM_MAX_NEWTON)
    return run_time_loop(model, schedule, lambda Y, t: rom_newton_solve(model, Y, t, cfg), YN0)


def identity_bases(system: GlobalSystem) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Reference-frame bases spanning the whole free FE space of every block."""
    vel, pre = [], []
    for j, sub in enumerate(system.subdomains):
        space = sub.space
        E = np.zeros((space.n_u, len(system.free[j])))
        E[system.free[j], np.arange(len(system.free[j]))] = 1.0
        vel.append(np.asarray(space.pullback @ E))
        pre.append(np.eye(space.n_p))
    return vel, pre

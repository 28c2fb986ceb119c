"""Newton-Raphson driver for the coupled systems."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .krylov import KrylovConfig, gmres
from .preconditioner import SaddlePreconditioner


@dataclass
class NewtonConfig:
    """Nonlinear solver settings.

    Attributes
    ----------
    tolerance : float
        Stop when ``|R(Y_l)| / |R(Y_0)|`` falls below it.
    max_iterations : int
    linearization : {"newton", "picard"}
    absolute_tolerance : float
        Residual norm treated as already converged.
    """

    tolerance: float = 1e-8
    max_iterations: int = 20
    linearization: str = "newton"
    absolute_tolerance: float = 1e-14

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("need at least one Newton iteration")
        if self.linearization not in ("newton", "picard"):
            raise ValueError(f"unknown linearization {self.linearization!r}")


class NewtonError(RuntimeError):
    """Nonconvergence; carries the residual history."""

    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = residuals


@dataclass
class NewtonResult:
    state: np.ndarray
    iterations: int
    residuals: list[float]
    krylov_iterations: list[int] = field(default_factory=list)


def newton_iterate(residual: Callable[[np.ndarray], np.ndarray],
                   solve: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, int]],
                   Y0: np.ndarray, cfg: NewtonConfig) -> NewtonResult:
    """Generic Newton loop.

    Parameters
    ----------
    residual : callable
        ``Y -> R(Y)``.
    solve : callable
        ``(Y, R) -> (dY, krylov_iterations)`` solving ``J(Y) dY = -R``.
    """
    Y = np.array(Y0, dtype=float)
    R = residual(Y)
    r0 = float(np.linalg.norm(R))
    history = [r0]
    its = []
    if r0 <= cfg.absolute_tolerance:
        return NewtonResult(Y, 0, history, its)
    for k in range(1, cfg.max_iterations + 1):
        dY, n_lin = solve(Y, R)
        its.append(n_lin)
        Y = Y + dY
        R = residual(Y)
        rn = float(np.linalg.norm(R))
        history.append(rn)
        if not np.isfinite(rn):
            raise NewtonError("Newton iteration diverged", history)
        if rn / r0 < cfg.tolerance or rn <= cfg.absolute_tolerance:
            return NewtonResult(Y, k, history, its)
    raise NewtonError(f"Newton did not converge in {cfg.max_iterations} iterations", history)


class LinearSolver:
    """Solves tangent systems either directly or with preconditioned (F)GMRES."""

    def __init__(self, krylov: KrylovConfig | None = None):
        self.cfg = krylov or KrylovConfig(method="direct")
        self.preconditioner = None
        if self.cfg.method != "direct":
            self.preconditioner = SaddlePreconditioner.from_config(self.cfg)
        self.iterations: list[int] = []

    def __call__(self, tangent, rhs: np.ndarray) -> tuple[np.ndarray, int]:
        if self.cfg.method == "direct":
            lu = spla.splu(tangent.full().tocsc())
            return lu.solve(rhs), 0
        self.preconditioner.update(tangent)
        A = tangent.full()
        res = gmres(lambda x: A @ x, rhs, self.preconditioner, tol=self.cfg.tolerance, restart=self.cfg.restart,
                    maxiter=self.cfg.max_iterations, flexible=self.cfg.method == "fgmres")
        if not res.converged:
            raise NewtonError(f"linear solver did not converge in {res.iterations} iterations", res.residuals)
        self.iterations.append(res.iterations)
        return res.x, res.iterations


def newton_solve(system, Y0: np.ndarray, t: float, cfg: NewtonConfig | None = None,
                 krylov: KrylovConfig | LinearSolver | None = None) -> NewtonResult:
    """Solve ``R(Y) = 0`` for one time step (or the steady problem) of a :class:`GlobalSystem`."""
    cfg = cfg or NewtonConfig()
    solver = krylov if isinstance(krylov, LinearSolver) else LinearSolver(krylov)
    system.linearization = cfg.linearization

    def solve(Y, R):
        return solver(system.tangent(Y, t), -R)

    return newton_iterate(lambda Y: system.residual(Y, t), solve, Y0, cfg)

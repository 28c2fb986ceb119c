"""Nonlinear and linear solvers for the block saddle-point systems."""

from .krylov import KrylovBreakdown, KrylovConfig, KrylovResult, fgmres, gmres
from .newton import LinearSolver, NewtonConfig, NewtonError, NewtonResult, newton_iterate, newton_solve
from .preconditioner import (ExactInner, GmresInner, SaddlePreconditioner, SimpleInner, SingularBlockError,
                             build_schur, schur_reuse_policy)

__all__ = [
    "ExactInner", "GmresInner", "KrylovBreakdown", "KrylovConfig", "KrylovResult", "LinearSolver",
    "NewtonConfig", "NewtonError", "NewtonResult", "SaddlePreconditioner", "SimpleInner",
    "SingularBlockError", "build_schur", "fgmres", "gmres", "newton_iterate", "newton_solve",
    "schur_reuse_policy",
]

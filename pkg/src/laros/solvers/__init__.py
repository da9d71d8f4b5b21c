from laros.solvers.common import NotConvergedError, SolveReport, SolverConfig, StopReason
from laros.solvers.dual import DualConfig, DualState, dual_solve
from laros.solvers.primal import PrimalConfig, PrimalState, primal_solve

__all__ = [
    "DualConfig",
    "DualState",
    "NotConvergedError",
    "PrimalConfig",
    "PrimalState",
    "SolveReport",
    "SolverConfig",
    "StopReason",
    "dual_solve",
    "primal_solve",
]

"""Configuration, reporting and stop bookkeeping shared by the primal and dual solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Optional, Protocol

from pydantic import BaseModel, Field

from laros import LarosError
from laros.problem import DualPoint, PairedVariable, ProblemSpec, duality_gap, objective

if TYPE_CHECKING:
    from laros.certificate import CertificateResult

# lambda schedule anchors, relative to 1/theta
LAMBDA0_SCALE = 1.0
LAMBDA_MAX_SCALE = 1e4


class StopReason(str, Enum):
    RESIDUAL = "residual"
    CERTIFIED = "certified"
    ITERATION_CAP = "iteration_cap"


class CertifierCallback(Protocol):
    def __call__(
        self, spec: ProblemSpec, X: PairedVariable, dual_estimate: float
    ) -> CertificateResult: ...


class SolverConfig(BaseModel):
    """
    Outer and inner loop settings of a proximal point solve.

    Attributes:
        lambda0:
            Initial proximal parameter; None means 1/theta.

        lambda_growth:
            Factor applied to lambda after every outer iteration whose inner
            solve met its tolerance; lambda is held otherwise.

        lambda_max:
            Cap on lambda; None means 1e4/theta.

        eps:
            Outer tolerance on the residual.

        max_outer:
            Outer iteration cap.

        max_inner:
            Iteration cap of each inner subproblem.

        inner_tol:
            Scale of the summable inner tolerance sequence; None means eps.

        cert_cadence:
            The certifier runs on outer iterations that are multiples of this.

        rank_hint:
            If set, singular value thresholding computes only this many leading
            triples to start with, doubling as needed.

        gap_tol:
            Duality gap, relative to 1 + |objective|, accepted at a residual
            stop; None means eps.

        strict:
            Raise NotConvergedError instead of returning when the cap is hit.
    """

    lambda0: Optional[float] = Field(default=None, gt=0)
    lambda_growth: float = Field(default=1.2, ge=1)
    lambda_max: Optional[float] = Field(default=None, gt=0)
    eps: float = Field(default=1e-6, gt=0)
    max_outer: int = Field(default=1000, ge=1)
    max_inner: int = Field(default=30, ge=1)
    inner_tol: Optional[float] = Field(default=None, gt=0)
    cert_cadence: int = Field(default=10, ge=1)
    rank_hint: Optional[int] = Field(default=None, ge=1)
    gap_tol: Optional[float] = Field(default=None, gt=0)
    strict: bool = False

    def initial_lambda(self, theta: float) -> float:
        lam = self.lambda0 if self.lambda0 is not None else LAMBDA0_SCALE / theta
        return min(lam, self.lambda_cap(theta))

    def lambda_cap(self, theta: float) -> float:
        cap = self.lambda_max if self.lambda_max is not None else LAMBDA_MAX_SCALE / theta
        if self.lambda0 is not None:
            cap = max(cap, self.lambda0)
        return cap

    def next_lambda(self, lam: float, theta: float) -> float:
        return min(lam * self.lambda_growth, self.lambda_cap(theta))

    def accepts(self, spec: ProblemSpec, residual: float, feasibility: float, gap: float) -> bool:
        """
        Whether the outer loop may stop on its residual.

        A residual below eps alone is not enough: the iterate must also satisfy
        ||A(X) - b|| <= eps (1 + ||b||) and have a relative duality gap within
        gap_tol.
        """
        gap_tol = self.gap_tol if self.gap_tol is not None else self.eps
        return (
            residual <= self.eps
            and feasibility <= self.eps * (1.0 + spec.b.norm())
            and gap <= gap_tol
        )

    @property
    def inner_scale(self) -> float:
        return self.inner_tol if self.inner_tol is not None else self.eps


@dataclass
class SolveReport:
    """
    Outcome of one solve: the (outer, inner, time, certify time) tuple plus context.

    Attributes:
        algorithm:
            "primal" or "dual".

        outer_iters:
            Outer iterations performed.

        inner_iters_total:
            Inner iterations summed over all outer iterations.

        wall_seconds:
            Total wall time, certification included.

        certify_seconds:
            Wall time spent in the certifier; 0.0 when no certifier ran.

        certified:
            Whether the last certification succeeded.

        stop_reason:
            Why the outer loop ended.

        objective:
            ||X1||_* + theta ||X2||_1 at the returned iterate.

        residual:
            Final outer residual.

        feasibility:
            ||A(X) - b|| at the returned iterate.

        gap:
            Objective minus the dual lower bound of the returned multiplier,
            relative to 1 + |objective|.

        certificate:
            Result of the last certification attempt, if any.
    """

    algorithm: str
    outer_iters: int
    inner_iters_total: int
    wall_seconds: float
    certify_seconds: float
    certified: bool
    stop_reason: StopReason
    objective: float
    residual: float
    feasibility: float = math.inf
    gap: float = math.inf
    certificate: Optional[Any] = field(default=None, repr=False)

    def as_tuple(self) -> tuple[int, int, float, float]:
        return (self.outer_iters, self.inner_iters_total, self.wall_seconds, self.certify_seconds)

    def __str__(self) -> str:
        return (
            f"({self.outer_iters},{self.inner_iters_total},"
            f"{self.wall_seconds:.2f}s,{self.certify_seconds:.2f}s)"
        )


class NotConvergedError(LarosError, RuntimeError):
    """Raised by strict solves that hit the outer iteration cap."""

    def __init__(self, X: PairedVariable, state: Any, report: SolveReport):
        self.X = X
        self.state = state
        self.report = report
        super().__init__(
            f"{report.algorithm} solve stopped at the iteration cap "
            f"({report.outer_iters} outer iterations, residual {report.residual:.3e})"
        )


def relative_gap(spec: ProblemSpec, X: PairedVariable, z: DualPoint) -> float:
    """Return duality_gap(spec, X, z) / (1 + |objective(spec, X)|), floored at 0."""
    gap = duality_gap(spec, X, z)
    return max(gap, 0.0) / (1.0 + abs(objective(spec, X)))


def merit(residual: float, feasibility: float, gap: float) -> float:
    """Score used to pick the iterate returned at the iteration cap."""
    return max(residual, feasibility, gap)


def inner_tolerance(scale: float, k: int, power: float) -> float:
    """Summable inner tolerance min(0.1, 1/k^power) * scale for outer iteration k >= 1."""
    return min(0.1, 1.0 / max(k, 1) ** power) * scale

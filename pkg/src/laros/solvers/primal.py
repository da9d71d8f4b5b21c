"""
Primal proximal point algorithm.

Each outer iteration maximizes the concave inner function Theta_lam(X, .) by
fixed-step gradient ascent, then applies the proximal mappings at the maximizer.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from laros.problem import (
    DualPoint,
    PairedVariable,
    ProblemSpec,
    feasibility_residual,
    lipschitz_modulus,
    objective,
    project_dual_cone,
    prox_l1,
    prox_nuclear,
)
from laros.solvers.common import (
    CertifierCallback,
    NotConvergedError,
    SolveReport,
    SolverConfig,
    StopReason,
    inner_tolerance,
    merit,
    relative_gap,
)

logger = logging.getLogger(__name__)

INNER_TOL_POWER = 2.0


class PrimalConfig(SolverConfig):
    """Settings of the primal algorithm; see SolverConfig."""


@dataclass
class PrimalState:
    X: PairedVariable
    z: DualPoint
    lam: float
    outer_iter: int = 0
    inner_iter_total: int = 0
    residual: float = math.inf
    feasibility: float = math.inf
    gap: float = math.inf
    inner_converged: bool = False


def _shifted(spec: ProblemSpec, X: PairedVariable, z: DualPoint, lam: float) -> PairedVariable:
    """Return X + lam B z, where B1 z = A z1 + Z2 and B2 z = -Z2."""
    return PairedVariable(X.X1 + lam * (z.z1 * spec.A + z.Z2), X.X2 - lam * z.Z2)


def _inner_terms(
    spec: ProblemSpec,
    X: PairedVariable,
    z: DualPoint,
    lam: float,
    rank_hint: Optional[int] = None,
) -> tuple[float, DualPoint, PairedVariable]:
    shifted = _shifted(spec, X, z, lam)
    P = PairedVariable(
        prox_nuclear(shifted.X1, lam, rank_hint), prox_l1(shifted.X2, lam * spec.theta)
    )
    value = z.z1 - (np.vdot(P.X1, P.X1) + np.vdot(P.X2, P.X2)) / (2.0 * lam)
    gradient = DualPoint(1.0 - float(np.vdot(spec.A, P.X1)), P.X2 - P.X1)
    return float(value), gradient, P


def theta_inner_value(spec: ProblemSpec, X: PairedVariable, z: DualPoint, lam: float) -> float:
    """
    Evaluate Theta_lam(X, z).

    Theta_lam(X, z) = <z, b> - ||p1(X1 + lam B1 z)||^2 / (2 lam)
                             - ||p2(X2 + lam B2 z)||^2 / (2 lam),

    with p1 the nuclear norm prox of parameter lam and p2 the l1 prox of
    parameter lam * theta.
    """
    return _inner_terms(spec, X, z, lam)[0]


def theta_inner_gradient(
    spec: ProblemSpec, X: PairedVariable, z: DualPoint, lam: float
) -> DualPoint:
    """Return grad_z Theta_lam(X, z) = (1 - <A, P1>, P2 - P1)."""
    return _inner_terms(spec, X, z, lam)[1]


def moreau_envelope(spec: ProblemSpec, X: PairedVariable, lam: float, z: DualPoint) -> float:
    """Value of the Moreau-Yoshida regularization at X, given the inner maximizer z."""
    return X.norm() ** 2 / (2.0 * lam) + theta_inner_value(spec, X, z, lam)


def solve_inner(
    spec: ProblemSpec,
    X: PairedVariable,
    lam: float,
    cfg: PrimalConfig,
    z0: Optional[DualPoint] = None,
    tol: Optional[float] = None,
) -> tuple[DualPoint, int]:
    """
    Maximize Theta_lam(X, .) by gradient ascent with step 1/Lipschitz.

    Given-When-Then:
    - Given a primal point X and a warm start z0 (zero when omitted)
    - When ascent steps are taken until the gradient norm drops below tol
    - Then the approximate maximizer and the number of steps are returned

    Args:
        spec: Problem instance
        X: Current primal iterate
        lam: Proximal parameter
        cfg: Solver settings; max_inner caps the number of steps
        z0: Warm start
        tol: Gradient-norm tolerance; defaults to cfg.inner_scale

    Returns:
        Tuple of (z, iterations)
    """
    z, iterations, _ = _ascend(spec, X, lam, cfg, z0, tol)
    return z, iterations


def _ascend(
    spec: ProblemSpec,
    X: PairedVariable,
    lam: float,
    cfg: PrimalConfig,
    z0: Optional[DualPoint],
    tol: Optional[float],
) -> tuple[DualPoint, int, bool]:
    tol = cfg.inner_scale if tol is None else tol
    threshold = tol * max(1.0, spec.b.norm())
    step = 1.0 / lipschitz_modulus(spec, lam)
    z = z0.copy() if z0 is not None else DualPoint.zeros(spec.shape)

    for iteration in range(cfg.max_inner):
        _, gradient, _ = _inner_terms(spec, X, z, lam, cfg.rank_hint)
        if gradient.norm() <= threshold:
            return z, iteration, True
        z = project_dual_cone(z + step * gradient, spec.cone)
    return z, cfg.max_inner, False


def prox_update(
    spec: ProblemSpec,
    X: PairedVariable,
    z: DualPoint,
    lam: float,
    rank_hint: Optional[int] = None,
) -> PairedVariable:
    """Return (p1(X1 + lam B1 z), p2(X2 + lam B2 z)), the proximal point of X."""
    return _inner_terms(spec, X, z, lam, rank_hint)[2]


def primal_step(spec: ProblemSpec, state: PrimalState, cfg: PrimalConfig) -> PrimalState:
    """
    Run one outer iteration: inner ascent, proximal update, lambda update.

    Lambda grows only when the ascent met its tolerance. On a flat stretch of
    Theta the prox outputs stay put while z walks across it, and the distance
    covered per step shrinks as 1/lambda.
    """
    k = state.outer_iter + 1
    tol = inner_tolerance(cfg.inner_scale, k, INNER_TOL_POWER)
    z, iterations, converged = _ascend(spec, state.X, state.lam, cfg, state.z, tol)
    X = prox_update(spec, state.X, z, state.lam, cfg.rank_hint)
    return PrimalState(
        X=X,
        z=z,
        lam=cfg.next_lambda(state.lam, spec.theta) if converged else state.lam,
        outer_iter=k,
        inner_iter_total=state.inner_iter_total + iterations,
        residual=(X - state.X).norm() / state.lam,
        feasibility=feasibility_residual(spec, X),
        gap=relative_gap(spec, X, z),
        inner_converged=converged,
    )


def _merit(state: PrimalState) -> float:
    return merit(state.residual, state.feasibility, state.gap)


def primal_solve(
    spec: ProblemSpec,
    cfg: Optional[PrimalConfig] = None,
    certifier: Optional[CertifierCallback] = None,
    X0: Optional[PairedVariable] = None,
) -> tuple[PairedVariable, PrimalState, SolveReport]:
    """
    Solve the program with the primal proximal point algorithm.

    A prox step that leaves X unchanged gives a zero residual even when X is
    infeasible, so the stop also goes through SolverConfig.accepts.

    Args:
        spec: Problem instance
        cfg: Solver settings
        certifier: Optional callback run every cfg.cert_cadence outer iterations;
            a certified result stops the loop
        X0: Starting point; zero when omitted

    Returns:
        Tuple of (X, final state, report)

    Raises:
        NotConvergedError: Only with cfg.strict, when the iteration cap is hit
    """
    cfg = cfg or PrimalConfig()
    started = time.perf_counter()
    state = PrimalState(
        X=X0.copy() if X0 is not None else PairedVariable.zeros(spec.shape),
        z=DualPoint.zeros(spec.shape),
        lam=cfg.initial_lambda(spec.theta),
    )
    best = state
    stop_reason = StopReason.ITERATION_CAP
    certify_seconds = 0.0
    certificate = None

    while state.outer_iter < cfg.max_outer:
        state = primal_step(spec, state, cfg)
        if _merit(state) <= _merit(best):
            best = state
        logger.debug(
            f"primal k={state.outer_iter} lam={state.lam:.3e} "
            f"residual={state.residual:.3e} feasibility={state.feasibility:.3e} "
            f"gap={state.gap:.3e} inner={state.inner_iter_total}"
        )
        if cfg.accepts(spec, state.residual, state.feasibility, state.gap):
            stop_reason = StopReason.RESIDUAL
            break
        if certifier is not None and state.outer_iter % cfg.cert_cadence == 0:
            certify_started = time.perf_counter()
            certificate = certifier(spec, state.X, state.z.z1)
            certify_seconds += time.perf_counter() - certify_started
            if certificate.certified:
                stop_reason = StopReason.CERTIFIED
                break

    final = state if stop_reason is not StopReason.ITERATION_CAP else best
    report = SolveReport(
        algorithm="primal",
        outer_iters=state.outer_iter,
        inner_iters_total=state.inner_iter_total,
        wall_seconds=time.perf_counter() - started,
        certify_seconds=certify_seconds,
        certified=stop_reason is StopReason.CERTIFIED,
        stop_reason=stop_reason,
        objective=objective(spec, final.X),
        residual=final.residual,
        feasibility=final.feasibility,
        gap=final.gap,
        certificate=certificate,
    )
    logger.info(f"Primal solve stopped by {stop_reason.value} {report}")
    if stop_reason is StopReason.ITERATION_CAP and cfg.strict:
        raise NotConvergedError(final.X, final, report)
    return final.X, final, report

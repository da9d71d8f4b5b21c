"""
Dual proximal point algorithm.

The outer loop is a proximal step on the dual function, i.e. a multiplier
update; each inner subproblem

    min_X ||X1||_* + theta ||X2||_1 + Psi_lam(X; y)

is solved by an accelerated proximal gradient method with a monotone line
search on the curvature t and function-value restarts.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from laros.problem import (
    DualPoint,
    PairedVariable,
    ProblemSpec,
    apply_adjoint,
    apply_map,
    feasibility_residual,
    lipschitz_modulus,
    objective,
    project_dual_cone,
    prox_l1,
    singular_value_shrink,
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

INNER_TOL_POWER = 1.5
LINE_SEARCH_SHRINK = 0.8
MAJORIZATION_SLACK = 1e-12


class DualConfig(SolverConfig):
    """Settings of the dual algorithm; see SolverConfig."""


@dataclass
class ApgState:
    """
    Iterate of the accelerated proximal gradient method.

    Attributes:
        X_cur, X_prev:
            Current and previous iterates.

        tau_cur, tau_prev:
            Momentum scalars tau_k and tau_{k-1}.

        t:
            Curvature of the quadratic model; 0 < t <= L.

        L:
            Lipschitz constant of grad Psi.

        Y:
            Extrapolated point the last step was taken from.

        value:
            P(X_cur) + Psi(X_cur).
    """

    X_cur: PairedVariable
    X_prev: PairedVariable
    tau_cur: float
    tau_prev: float
    t: float
    L: float
    Y: Optional[PairedVariable] = None
    value: float = math.inf


@dataclass
class DualState:
    y: DualPoint
    X: PairedVariable
    lam: float
    outer_iter: int = 0
    inner_iter_total: int = 0
    residual: float = math.inf
    feasibility: float = math.inf
    gap: float = math.inf


def next_tau(tau: float) -> float:
    """Return (sqrt(1 + 4 tau^2) + 1) / 2, so that next^2 - next = tau^2."""
    return 0.5 * (math.sqrt(1.0 + 4.0 * tau * tau) + 1.0)


def _multiplier(spec: ProblemSpec, X: PairedVariable, y: DualPoint, lam: float) -> DualPoint:
    """Return Pi_{Q*}(y + lam (b - A(X)))."""
    return project_dual_cone(y + lam * (spec.b - apply_map(spec, X)), spec.cone)


def psi_value(spec: ProblemSpec, X: PairedVariable, y: DualPoint, lam: float) -> float:
    """Return Psi_lam(X; y) = ||Pi_{Q*}(y + lam (b - A(X)))||^2 / (2 lam)."""
    return _multiplier(spec, X, y, lam).norm() ** 2 / (2.0 * lam)


def psi_gradient(spec: ProblemSpec, X: PairedVariable, y: DualPoint, lam: float) -> PairedVariable:
    """Return grad_X Psi_lam(X; y) = -A* Pi_{Q*}(y + lam (b - A(X)))."""
    return -1.0 * apply_adjoint(spec, _multiplier(spec, X, y, lam))


def _prox_step(
    spec: ProblemSpec,
    Y: PairedVariable,
    gradient: PairedVariable,
    t: float,
    rank_hint: Optional[int] = None,
) -> tuple[PairedVariable, float]:
    G = Y - (1.0 / t) * gradient
    S1, sigma = singular_value_shrink(G.X1, 1.0 / t, rank_hint)
    S2 = prox_l1(G.X2, spec.theta / t)
    return PairedVariable(S1, S2), float(sigma.sum()) + spec.theta * float(np.abs(S2).sum())


def apg_prox_step(
    spec: ProblemSpec, Y: PairedVariable, t: float, lam: float, y: DualPoint
) -> PairedVariable:
    """
    Return S_t(Y), the minimizer of the quadratic model Q_t(.; Y).

    S_t^1(Y) = p1_{1/t}(G_t^1(Y)) and S_t^2(Y) = p2_{theta/t}(G_t^2(Y)), with
    G_t(Y) = Y - grad Psi(Y) / t.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    return _prox_step(spec, Y, psi_gradient(spec, Y, y, lam), t)[0]


def composite_value(spec: ProblemSpec, X: PairedVariable, y: DualPoint, lam: float) -> float:
    """Return ||X1||_* + theta ||X2||_1 + Psi_lam(X; y)."""
    return objective(spec, X) + psi_value(spec, X, y, lam)


def apg_solve(
    spec: ProblemSpec,
    y: DualPoint,
    lam: float,
    cfg: DualConfig,
    X0: Optional[PairedVariable] = None,
    tol: Optional[float] = None,
    callback: Optional[Callable[[ApgState], None]] = None,
) -> tuple[PairedVariable, int]:
    """
    Approximately minimize ||X1||_* + theta ||X2||_1 + Psi_lam(X; y).

    Given-When-Then:
    - Given a multiplier y, a proximal parameter lam and a warm start X0
    - When accelerated proximal gradient steps are taken from t = L, shrinking t
      while the quadratic model still majorizes the objective
    - Then the iterate whose gradient mapping t ||Y - S_t(Y)|| drops below tol is
      returned, or the last accepted one after cfg.max_inner iterations

    Args:
        spec: Problem instance
        y: Current multiplier
        lam: Proximal parameter
        cfg: Solver settings
        X0: Warm start; zero when omitted
        tol: Gradient-mapping tolerance; defaults to cfg.inner_scale
        callback: Called with the state after every accepted step

    Returns:
        Tuple of (X, iterations)
    """
    X, iterations, _ = _minimize(spec, y, lam, cfg, X0, tol, callback)
    return X, iterations


def _minimize(
    spec: ProblemSpec,
    y: DualPoint,
    lam: float,
    cfg: DualConfig,
    X0: Optional[PairedVariable],
    tol: Optional[float],
    callback: Optional[Callable[[ApgState], None]] = None,
) -> tuple[PairedVariable, int, bool]:
    tol = cfg.inner_scale if tol is None else tol
    L = lipschitz_modulus(spec, lam)
    X = X0.copy() if X0 is not None else PairedVariable.zeros(spec.shape)
    state = ApgState(
        X_cur=X,
        X_prev=X,
        tau_cur=1.0,
        tau_prev=1.0,
        t=L,
        L=L,
        value=composite_value(spec, X, y, lam),
    )
    t_frozen = False

    for iteration in range(1, cfg.max_inner + 1):
        momentum = (state.tau_prev - 1.0) / state.tau_cur
        Y = state.X_cur + momentum * (state.X_cur - state.X_prev)
        f_Y = psi_value(spec, Y, y, lam)
        grad_Y = psi_gradient(spec, Y, y, lam)

        def majorized(S: PairedVariable, t: float) -> bool:
            D = S - Y
            model = f_Y + grad_Y.inner(D) + 0.5 * t * D.norm() ** 2
            return psi_value(spec, S, y, lam) <= model + MAJORIZATION_SLACK * max(1.0, abs(model))

        t = state.t if t_frozen else LINE_SEARCH_SHRINK * state.t
        S, P_S = _prox_step(spec, Y, grad_Y, t, cfg.rank_hint)
        if not majorized(S, t):
            if t < state.t:
                t_frozen = True
                t = state.t
                S, P_S = _prox_step(spec, Y, grad_Y, t, cfg.rank_hint)
            if not majorized(S, t):
                t = L
                t_frozen = True
                S, P_S = _prox_step(spec, Y, grad_Y, t, cfg.rank_hint)

        value = P_S + psi_value(spec, S, y, lam)
        mapping_norm = t * (Y - S).norm()

        if value > state.value + MAJORIZATION_SLACK * max(1.0, abs(state.value)):
            # restart: drop momentum and retry from the last accepted point
            state = replace(state, X_prev=state.X_cur, tau_cur=1.0, tau_prev=1.0, t=t)
            if mapping_norm <= tol:
                return state.X_cur, iteration, True
            continue

        state = ApgState(
            X_cur=S,
            X_prev=state.X_cur,
            tau_cur=next_tau(state.tau_cur),
            tau_prev=state.tau_cur,
            t=t,
            L=L,
            Y=Y,
            value=value,
        )
        if callback is not None:
            callback(state)
        if mapping_norm <= tol:
            return state.X_cur, iteration, True

    return state.X_cur, cfg.max_inner, False


def dual_step(
    spec: ProblemSpec, state: DualState, cfg: DualConfig, grow: bool = True
) -> DualState:
    """
    Update the multiplier from the inner minimizer held in `state.X`.

    y^{k+1} = Pi_{Q*}(y^k + lam_k (b - A(X^k))); the residual is
    ||y^k - y^{k+1}|| / lam_k. Lambda is held when `grow` is false.
    """
    y_next = _multiplier(spec, state.X, state.y, state.lam)
    return DualState(
        y=y_next,
        X=state.X,
        lam=cfg.next_lambda(state.lam, spec.theta) if grow else state.lam,
        outer_iter=state.outer_iter + 1,
        inner_iter_total=state.inner_iter_total,
        residual=(state.y - y_next).norm() / state.lam,
        feasibility=feasibility_residual(spec, state.X),
        gap=relative_gap(spec, state.X, y_next),
    )


def _merit(state: DualState) -> float:
    return merit(state.residual, state.feasibility, state.gap)


def dual_solve(
    spec: ProblemSpec,
    cfg: Optional[DualConfig] = None,
    certifier: Optional[CertifierCallback] = None,
    y0: Optional[DualPoint] = None,
    X0: Optional[PairedVariable] = None,
) -> tuple[PairedVariable, DualState, SolveReport]:
    """
    Solve the program with the dual proximal point algorithm.

    The loop stops on its residual only once SolverConfig.accepts also sees a
    feasible iterate and a small duality gap.

    Args:
        spec: Problem instance
        cfg: Solver settings
        certifier: Optional callback run every cfg.cert_cadence outer iterations;
            a certified result stops the loop
        y0: Starting multiplier; zero when omitted
        X0: Warm start of the first inner solve; zero when omitted

    Returns:
        Tuple of (X, final state, report)

    Raises:
        NotConvergedError: Only with cfg.strict, when the iteration cap is hit
    """
    cfg = cfg or DualConfig()
    started = time.perf_counter()
    state = DualState(
        y=y0.copy() if y0 is not None else DualPoint.zeros(spec.shape),
        X=X0.copy() if X0 is not None else PairedVariable.zeros(spec.shape),
        lam=cfg.initial_lambda(spec.theta),
    )
    best = state
    stop_reason = StopReason.ITERATION_CAP
    certify_seconds = 0.0
    certificate = None

    while state.outer_iter < cfg.max_outer:
        k = state.outer_iter + 1
        tol = inner_tolerance(cfg.inner_scale, k, INNER_TOL_POWER)
        X, iterations, converged = _minimize(spec, state.y, state.lam, cfg, state.X, tol)
        state = replace(state, X=X, inner_iter_total=state.inner_iter_total + iterations)
        # lambda stays put after an inner solve that stopped at max_inner
        state = dual_step(spec, state, cfg, grow=converged)
        if _merit(state) <= _merit(best):
            best = state
        logger.debug(
            f"dual k={state.outer_iter} lam={state.lam:.3e} "
            f"residual={state.residual:.3e} gap={state.gap:.3e} inner={state.inner_iter_total}"
        )
        if cfg.accepts(spec, state.residual, state.feasibility, state.gap):
            stop_reason = StopReason.RESIDUAL
            break
        if certifier is not None and state.outer_iter % cfg.cert_cadence == 0:
            certify_started = time.perf_counter()
            certificate = certifier(spec, state.X, state.y.z1)
            certify_seconds += time.perf_counter() - certify_started
            if certificate.certified:
                stop_reason = StopReason.CERTIFIED
                break

    final = state if stop_reason is not StopReason.ITERATION_CAP else best
    report = SolveReport(
        algorithm="dual",
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
    logger.info(f"Dual solve stopped by {stop_reason.value} {report}")
    if stop_reason is StopReason.ITERATION_CAP and cfg.strict:
        raise NotConvergedError(final.X, final, report)
    return final.X, final, report

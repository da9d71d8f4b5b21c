"""
Certification of rank-one optimal supports.

An approximate solution X is turned into a support pattern (M, N), the
nonlinear system P(lam, u1, v1) = 0 on the (1,1) block is solved by Newton's
method after a Kantorovich test, and a dual certificate W is searched for by
projected subgradient descent on ||W||_2 over the feasible set

    W11 = (lam A11 - theta E) - u1 v1^T
    W12^T u1 = 0,  ||W12 - lam A12||_inf <= theta - (||A12||_inf + 5) eps
    W21 v1 = 0,    ||W21 - lam A21||_inf <= theta - (||A21||_inf + 5) eps
    ||W22 - lam A22||_inf <= theta

The support is certified when ||W||_2 <= 1 - (||A||_2 + 7.5) eps.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import numpy.typing as npt
import scipy.linalg
from pydantic import BaseModel, Field

from laros import SUPPORT_THRESHOLD, LarosError
from laros.problem import (
    Matrix,
    PairedVariable,
    ProblemSpec,
    Vector,
    ZeroMatrixError,
    rank_one_approx,
    spectral_norm,
    svd,
    theta_norm,
)

logger = logging.getLogger(__name__)

# equality constraints of the certificate are accepted up to this absolute error
EQUALITY_TOL = 1e-9
# floating point slack on the box constraints enforced exactly by the projection
MARGIN_ROUNDOFF = 1e-12
CONDITIONS = ("i", "ii", "iii", "iv", "v")


class EmptySupportError(LarosError, ValueError):
    """Raised when no entry of X2 exceeds the support threshold."""


class SingularJacobianError(LarosError, ArithmeticError):
    """Raised when the Newton system's Jacobian cannot be inverted."""


class DegenerateSupportError(LarosError, ValueError):
    """Raised when the data matrix is orthogonal to X2 on the support."""


class NoConvergenceError(LarosError, ArithmeticError):
    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Newton's method stopped after {iterations} iterations at residual {residual:.3e}"
        )


class InfeasibleBoxError(LarosError, ValueError):
    """Raised when no point of the box satisfies the knapsack equality."""


class InfeasibleMarginsError(LarosError, ValueError):
    def __init__(self, slack: float):
        self.slack = slack
        super().__init__(f"Entrywise certificate bound is negative ({slack:.3e}); eps too large")


class CertifyConfig(BaseModel):
    """
    Settings of the certification test.

    Attributes:
        eps_s:
            Residual tolerance of Newton's method.

        newton_max_iter:
            Newton iteration cap.

        subgrad_max_iter:
            Projected subgradient iteration cap.

        step0:
            Step size scale; iteration k uses step0 / sqrt(k).

        stagnation_window, stagnation_tol:
            Stop when the best spectral norm improved by less than stagnation_tol
            over the last stagnation_window iterations.

        support_threshold:
            Entries of X2 above this fraction of ||X2||_inf belong to the support.
    """

    eps_s: float = Field(default=1e-10, gt=0)
    newton_max_iter: int = Field(default=50, ge=1)
    subgrad_max_iter: int = Field(default=500, ge=0)
    step0: float = Field(default=0.1, gt=0)
    stagnation_window: int = Field(default=50, ge=1)
    stagnation_tol: float = Field(default=1e-9, ge=0)
    support_threshold: float = Field(default=SUPPORT_THRESHOLD, gt=0)


@dataclass
class SupportPattern:
    """
    Rows M and columns N of a rank-one block, with the permutations moving
    M x N to the upper-left corner.
    """

    rows: npt.NDArray[np.int64]
    cols: npt.NDArray[np.int64]
    shape: tuple[int, int]

    def __post_init__(self):
        self.rows = np.unique(np.asarray(self.rows, dtype=np.int64))
        self.cols = np.unique(np.asarray(self.cols, dtype=np.int64))
        if self.rows.size == 0 or self.cols.size == 0:
            raise EmptySupportError("A support pattern needs at least one row and column")
        m, n = self.shape
        if self.rows[-1] >= m or self.cols[-1] >= n or self.rows[0] < 0 or self.cols[0] < 0:
            raise IndexError(f"Support exceeds matrix shape {self.shape}")

    @property
    def row_perm(self) -> npt.NDArray[np.int64]:
        return np.concatenate([self.rows, np.setdiff1d(np.arange(self.shape[0]), self.rows)])

    @property
    def col_perm(self) -> npt.NDArray[np.int64]:
        return np.concatenate([self.cols, np.setdiff1d(np.arange(self.shape[1]), self.cols)])

    @property
    def size(self) -> tuple[int, int]:
        return self.rows.size, self.cols.size

    def permute(self, M: Matrix) -> Matrix:
        return np.asarray(M)[np.ix_(self.row_perm, self.col_perm)]

    def unpermute(self, M: Matrix) -> Matrix:
        out = np.empty_like(M)
        out[np.ix_(self.row_perm, self.col_perm)] = M
        return out

    def block(self, M: Matrix) -> Matrix:
        """Return M(rows, cols)."""
        return np.asarray(M)[np.ix_(self.rows, self.cols)]

    def mask(self) -> npt.NDArray[np.bool_]:
        mask = np.zeros(self.shape, dtype=bool)
        mask[np.ix_(self.rows, self.cols)] = True
        return mask

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SupportPattern):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
        )


@dataclass
class CandidateTriple:
    """Approximate solution (lam, u1, v1) of the Newton system, with its error radius."""

    lam: float
    u1: Vector
    v1: Vector
    eps: float = math.inf
    iterations: int = 0

    @property
    def vector(self) -> Vector:
        return np.concatenate([[self.lam], self.u1, self.v1])

    @classmethod
    def from_vector(cls, x: Vector, rows: int, **kwargs) -> CandidateTriple:
        x = np.asarray(x, dtype=np.float64)
        return cls(lam=float(x[0]), u1=x[1 : 1 + rows].copy(), v1=x[1 + rows :].copy(), **kwargs)

    def admissible(self) -> bool:
        """Unit norms and near-nonnegativity within eps."""
        return (
            self.lam > 0
            and abs(np.linalg.norm(self.u1) - 1.0) <= self.eps
            and abs(np.linalg.norm(self.v1) - 1.0) <= self.eps
            and bool(np.all(self.u1 >= -self.eps))
            and bool(np.all(self.v1 >= -self.eps))
        )


@dataclass
class KantorovichReport:
    B: float
    eta: float
    K: float
    h: float
    t_star: Optional[float]
    passed: bool


@dataclass
class CertificateResult:
    """
    Outcome of a certification attempt.

    Attributes:
        W:
            Best certificate found, in the permuted frame (support block upper-left).

        spectral:
            ||W||_2.

        margins:
            Slack of conditions (i)-(v); negative means violated.

        certified:
            True exactly when every margin is nonnegative and equality_residual is
            within EQUALITY_TOL.

        equality_residual:
            Largest violation of the equality constraints of the certificate.

        subgradient_iters:
            Projected subgradient iterations performed.

        support, triple, kantorovich:
            Intermediate results, when the pipeline got that far.

        reason:
            Short description of why certification failed, empty on success.

        V:
            (lam A - W) / theta off the (1,1) block and ones on it.
    """

    W: Optional[Matrix]
    spectral: float
    margins: dict[str, float]
    certified: bool
    equality_residual: float = math.inf
    subgradient_iters: int = 0
    support: Optional[SupportPattern] = None
    triple: Optional[CandidateTriple] = None
    kantorovich: Optional[KantorovichReport] = None
    reason: str = ""
    seconds: float = 0.0
    V: Optional[Matrix] = field(default=None, repr=False)

    def rank_one_solution(self, spec: ProblemSpec) -> PairedVariable:
        """Build the exact rank-one solution sigma u v^T supported on the certified block."""
        if self.support is None or self.triple is None:
            raise ValueError("No candidate triple available")
        A11 = self.support.block(spec.A)
        u1, v1 = self.triple.u1, self.triple.v1
        sigma = 1.0 / float(u1 @ A11 @ v1)
        X = np.zeros(spec.shape)
        X[np.ix_(self.support.rows, self.support.cols)] = sigma * np.outer(u1, v1)
        return PairedVariable(X, X.copy())


def _failed(reason: str, **kwargs) -> CertificateResult:
    logger.debug(f"Certification failed: {reason}")
    return CertificateResult(
        W=None,
        spectral=math.inf,
        margins={name: -math.inf for name in CONDITIONS},
        certified=False,
        reason=reason,
        **kwargs,
    )


def extract_support(X2: Matrix, threshold: float) -> SupportPattern:
    """
    Return the rows and columns of X2 holding an entry above threshold * ||X2||_inf.

    Raises:
        EmptySupportError: If X2 is zero
    """
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    X2 = np.asarray(X2, dtype=np.float64)
    peak = float(np.abs(X2).max()) if X2.size else 0.0
    if peak == 0.0:
        raise EmptySupportError("X2 is identically zero")
    above = np.abs(X2) > threshold * peak
    return SupportPattern(
        rows=np.flatnonzero(above.any(axis=1)),
        cols=np.flatnonzero(above.any(axis=0)),
        shape=X2.shape,
    )


def _split(A11: Matrix, x: Vector) -> tuple[float, Vector, Vector]:
    A11 = np.atleast_2d(A11)
    M, N = A11.shape
    x = np.asarray(x, dtype=np.float64)
    if x.size != 1 + M + N:
        raise ValueError(f"Expected a vector of length {1 + M + N}, got {x.size}")
    return float(x[0]), x[1 : 1 + M], x[1 + M :]


def newton_residual(A11: Matrix, theta: float, x: Vector) -> Vector:
    """Return P(x) = (C v1 - u1; C^T u1 - v1; u1^T u1 - 1) with C = lam A11 - theta E."""
    A11 = np.atleast_2d(np.asarray(A11, dtype=np.float64))
    lam, u1, v1 = _split(A11, x)
    C = lam * A11 - theta
    return np.concatenate([C @ v1 - u1, C.T @ u1 - v1, [u1 @ u1 - 1.0]])


def newton_jacobian(A11: Matrix, theta: float, x: Vector) -> Matrix:
    """Return the Jacobian of P, with columns ordered (lam, u1, v1)."""
    A11 = np.atleast_2d(np.asarray(A11, dtype=np.float64))
    lam, u1, v1 = _split(A11, x)
    M, N = A11.shape
    C = lam * A11 - theta
    J = np.zeros((M + N + 1, M + N + 1))
    J[:M, 0] = A11 @ v1
    J[M : M + N, 0] = A11.T @ u1
    J[:M, 1 : 1 + M] = -np.eye(M)
    J[M : M + N, 1 : 1 + M] = C.T
    J[M + N, 1 : 1 + M] = 2.0 * u1
    J[:M, 1 + M :] = C
    J[M : M + N, 1 + M :] = -np.eye(N)
    return J


def jacobian_lipschitz(A11: Matrix) -> float:
    """Global Lipschitz constant 2 sqrt(||A11||_2^2 + 1) of the affine Jacobian."""
    return 2.0 * math.sqrt(spectral_norm(A11) ** 2 + 1.0)


def kantorovich_check(A11: Matrix, theta: float, x0: Vector) -> KantorovichReport:
    """
    Evaluate the Kantorovich condition h = B K eta <= 1/2 at x0.

    Raises:
        SingularJacobianError: If P'(x0) is singular
    """
    J = newton_jacobian(A11, theta, x0)
    singular_values = scipy.linalg.svdvals(J)
    if singular_values[-1] <= np.finfo(float).eps * singular_values[0]:
        raise SingularJacobianError("Jacobian is singular at the starting point")
    B = 1.0 / float(singular_values[-1])
    eta = float(np.linalg.norm(np.linalg.solve(J, newton_residual(A11, theta, x0))))
    K = jacobian_lipschitz(A11)
    h = B * K * eta
    passed = h <= 0.5
    if not passed:
        t_star = None
    elif h == 0.0:
        t_star = eta
    else:
        t_star = (1.0 - math.sqrt(1.0 - 2.0 * h)) / h * eta
    return KantorovichReport(B=B, eta=eta, K=K, h=h, t_star=t_star, passed=passed)


def newton_solve(
    A11: Matrix,
    theta: float,
    x0: CandidateTriple,
    tol: float = 1e-10,
    max_iter: int = 50,
    callback: Optional[Callable[[Vector], None]] = None,
) -> CandidateTriple:
    """
    Refine (lam, u1, v1) by Newton's method until ||P(x)|| <= tol.

    The returned triple's eps is the Kantorovich error radius at the final iterate
    when the test passes there, otherwise the norm of the last Newton step.

    Raises:
        SingularJacobianError: If a Newton system is singular
        NoConvergenceError: If the tolerance is not met within max_iter iterations
    """
    A11 = np.atleast_2d(np.asarray(A11, dtype=np.float64))
    x = x0.vector
    last_step = 0.0
    iterations = 0
    while True:
        residual = newton_residual(A11, theta, x)
        if np.linalg.norm(residual) <= tol:
            break
        if iterations >= max_iter:
            raise NoConvergenceError(iterations, float(np.linalg.norm(residual)))
        try:
            step = np.linalg.solve(newton_jacobian(A11, theta, x), residual)
        except np.linalg.LinAlgError as e:
            raise SingularJacobianError(f"Singular Jacobian at iteration {iterations}") from e
        x = x - step
        last_step = float(np.linalg.norm(step))
        iterations += 1
        if callback is not None:
            callback(x.copy())

    try:
        report = kantorovich_check(A11, theta, x)
        eps = report.t_star if report.passed else last_step
    except SingularJacobianError:
        eps = last_step
    return CandidateTriple.from_vector(x, A11.shape[0], eps=eps, iterations=iterations)


def knapsack_project_rows(W_bar: Matrix, u: Vector, lo: Matrix, hi: Matrix) -> Matrix:
    """
    Project every row of W_bar onto {w : u^T w = 0, lo <= w <= hi}.

    Each row is clip(w_bar - mu u, lo, hi) for the multiplier mu at which
    g(mu) = u^T clip(w_bar - mu u, lo, hi) vanishes. g is nonincreasing and
    piecewise linear; its breakpoints are sorted, the sign change is bracketed and
    mu is solved for exactly on the bracketing piece.

    Raises:
        InfeasibleBoxError: If a box is empty or cannot reach u^T w = 0
    """
    W_bar = np.atleast_2d(np.asarray(W_bar, dtype=np.float64))
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), W_bar.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), W_bar.shape)
    u = np.asarray(u, dtype=np.float64)
    if W_bar.shape[1] != u.size:
        raise ValueError(f"Rows have length {W_bar.shape[1]}, u has length {u.size}")
    if np.any(lo > hi):
        raise InfeasibleBoxError("Lower bound exceeds upper bound")
    if W_bar.size == 0:
        return W_bar.copy()

    active = u != 0
    if not np.any(active):
        return np.clip(W_bar, lo, hi)

    positive = u > 0
    g_low = np.where(positive, lo, hi) @ u  # g(+inf)
    g_high = np.where(positive, hi, lo) @ u  # g(-inf)
    scale = np.maximum(np.abs(lo), np.abs(hi)) @ np.abs(u)
    slack = 1e-12 * np.maximum(scale, 1.0)
    if np.any(g_low > slack) or np.any(g_high < -slack):
        raise InfeasibleBoxError("Box does not contain a point with u^T w = 0")

    with np.errstate(divide="ignore", invalid="ignore"):
        to_hi = np.where(active, (W_bar - hi) / u, 0.0)
        to_lo = np.where(active, (W_bar - lo) / u, 0.0)
    enter = np.minimum(to_hi, to_lo)
    leave = np.maximum(to_hi, to_lo)
    u_sq = np.where(active, u * u, 0.0)

    events = np.concatenate([enter, leave], axis=1)
    slope_change = np.broadcast_to(np.concatenate([-u_sq, u_sq]), events.shape)
    order = np.argsort(events, axis=1, kind="stable")
    events = np.take_along_axis(events, order, axis=1)
    slopes = np.cumsum(np.take_along_axis(slope_change, order, axis=1), axis=1)
    increments = slopes[:, :-1] * np.diff(events, axis=1)
    g = g_high[:, None] + np.concatenate(
        [np.zeros((events.shape[0], 1)), np.cumsum(increments, axis=1)], axis=1
    )

    count = (g > 0).sum(axis=1)
    left = np.clip(count - 1, 0, events.shape[1] - 1)
    right = np.clip(count, 0, events.shape[1] - 1)
    rows = np.arange(events.shape[0])
    mid = 0.5 * (events[rows, left] + events[rows, right])

    w_mid = W_bar - mid[:, None] * u
    free = active & (w_mid > lo) & (w_mid < hi)
    numerator = (u * np.where(free, W_bar, np.clip(w_mid, lo, hi))).sum(axis=1)
    denominator = np.where(free, u_sq, 0.0).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(denominator > 0, numerator / denominator, mid)
    return np.clip(W_bar - mu[:, None] * u, lo, hi)


def knapsack_project(w_bar: Vector, u: Vector, lo: Vector, hi: Vector) -> Vector:
    """Return argmin ||w - w_bar||^2 subject to u^T w = 0 and lo <= w <= hi."""
    w_bar = np.asarray(w_bar, dtype=np.float64)
    return knapsack_project_rows(w_bar[None, :], u, np.asarray(lo)[None, :], np.asarray(hi)[None, :])[0]


@dataclass
class CertificateData:
    """
    Fixed data of the certificate search, in the permuted frame.

    Attributes:
        A:
            Permuted data matrix; the support occupies the upper-left M x N block.
    """

    lam: float
    u1: Vector
    v1: Vector
    A: Matrix
    theta: float
    eps: float
    spectral_norm_A: float

    def __post_init__(self):
        self.M, self.N = self.u1.size, self.v1.size
        M, N = self.M, self.N
        self.A11, self.A12 = self.A[:M, :N], self.A[:M, N:]
        self.A21, self.A22 = self.A[M:, :N], self.A[M:, N:]
        self.W11 = (self.lam * self.A11 - self.theta) - np.outer(self.u1, self.v1)
        self.delta12 = self.theta - (_inf_norm(self.A12) + 5.0) * self.eps
        self.delta21 = self.theta - (_inf_norm(self.A21) + 5.0) * self.eps

    @property
    def target(self) -> float:
        return 1.0 - (self.spectral_norm_A + 7.5) * self.eps


def _inf_norm(M: Matrix) -> float:
    return float(np.abs(M).max()) if M.size else 0.0


def project_certificate(W_bar: Matrix, data: CertificateData) -> Matrix:
    """
    Project W_bar onto the feasible set of the certificate search, blockwise.

    Raises:
        InfeasibleMarginsError: If an entrywise bound theta - (||A_ij||_inf + 5) eps
            is negative
        InfeasibleBoxError: If a column or row knapsack has no solution
    """
    if data.delta12 < 0:
        raise InfeasibleMarginsError(data.delta12)
    if data.delta21 < 0:
        raise InfeasibleMarginsError(data.delta21)
    M, N, lam = data.M, data.N, data.lam
    W = np.empty_like(W_bar, dtype=np.float64)
    W[:M, :N] = data.W11

    center22 = lam * data.A22
    W[M:, N:] = np.maximum(np.minimum(W_bar[M:, N:], center22 + data.theta), center22 - data.theta)

    center12 = lam * data.A12
    W[:M, N:] = knapsack_project_rows(
        W_bar[:M, N:].T, data.u1, (center12 - data.delta12).T, (center12 + data.delta12).T
    ).T

    center21 = lam * data.A21
    W[M:, :N] = knapsack_project_rows(
        W_bar[M:, :N], data.v1, center21 - data.delta21, center21 + data.delta21
    )
    return W


def spectral_subgradient(W: Matrix) -> Matrix:
    """
    Return u v^T for the top singular pair of W, a subgradient of ||.||_2 at W.

    Raises:
        ZeroMatrixError: If W is zero
    """
    W = np.asarray(W, dtype=np.float64)
    if not np.any(W):
        raise ZeroMatrixError("Spectral subgradient of a zero matrix")
    result = svd(W, 1)
    return np.outer(result.U[:, 0], result.V[:, 0])


def certificate_margins(W: Matrix, data: CertificateData) -> dict[str, float]:
    """
    Return the slack of conditions (i)-(v) for W, with V = (lam A - W) / theta.

    Condition (i) contributes EQUALITY_TOL minus its residual. Conditions (ii) and
    (iii) report the slack of their box constraint only; their orthogonality
    constraints are measured by equality_residual.
    """
    M, N, lam, theta = data.M, data.N, data.lam, data.theta

    def worst(residual: Matrix) -> float:
        return _inf_norm(residual)

    margin_i = EQUALITY_TOL - worst(W[:M, :N] - data.W11)

    V12 = (lam * data.A12 - W[:M, N:]) / theta
    margin_ii = 1.0 - (_inf_norm(data.A12) + 5.0) * data.eps / theta - worst(V12) + MARGIN_ROUNDOFF

    V21 = (lam * data.A21 - W[M:, :N]) / theta
    margin_iii = 1.0 - (_inf_norm(data.A21) + 5.0) * data.eps / theta - worst(V21) + MARGIN_ROUNDOFF

    V22 = (lam * data.A22 - W[M:, N:]) / theta
    margin_iv = 1.0 - worst(V22) + MARGIN_ROUNDOFF

    margin_v = data.target - spectral_norm(W)
    return dict(zip(CONDITIONS, (margin_i, margin_ii, margin_iii, margin_iv, margin_v)))


def equality_residual(W: Matrix, data: CertificateData) -> float:
    """Return the largest violation of W11 = C - u1 v1^T, W12^T u1 = 0 and W21 v1 = 0."""
    M, N = data.M, data.N
    return max(
        _inf_norm(W[:M, :N] - data.W11),
        _inf_norm(W[:M, N:].T @ data.u1),
        _inf_norm(W[M:, :N] @ data.v1),
    )


def _initial_triple(
    spec: ProblemSpec, X2: Matrix, support: SupportPattern, dual_estimate: Optional[float]
) -> CandidateTriple:
    block = support.block(X2)
    _, u1, v1 = rank_one_approx(block)
    if dual_estimate is not None and dual_estimate > 0:
        lam = dual_estimate
    else:
        # ||X||_theta of X scaled onto <A, X> = 1
        alignment = abs(float(np.vdot(support.block(spec.A), block)))
        if not alignment > 0:
            raise DegenerateSupportError("<A, X2> vanishes on the support")
        lam = theta_norm(spec, block) / alignment
    return CandidateTriple(lam=lam, u1=u1, v1=v1)


def certify(
    spec: ProblemSpec,
    X: PairedVariable,
    cfg: Optional[CertifyConfig] = None,
    dual_estimate: Optional[float] = None,
) -> CertificateResult:
    """
    Try to certify that the support of X2 is the support of a rank-one optimum.

    Given-When-Then:
    - Given an approximate solution X and optionally the solver's multiplier z1
    - When the support is extracted, the Newton system is solved after a passing
      Kantorovich test, and a certificate W is searched from W0 = Pi(0)
    - Then a CertificateResult is returned; certified is True exactly when all
      five margins are nonnegative and the equality constraints hold

    Failure to certify is a normal result, never an exception.
    """
    cfg = cfg or CertifyConfig()
    started = time.perf_counter()

    try:
        support = extract_support(X.X2, cfg.support_threshold)
    except EmptySupportError as e:
        return _failed(str(e))

    A_perm = support.permute(spec.A)
    A11 = A_perm[: support.size[0], : support.size[1]]
    try:
        x0 = _initial_triple(spec, X.X2, support, dual_estimate)
    except DegenerateSupportError as e:
        return _failed(str(e), support=support)

    try:
        kantorovich = kantorovich_check(A11, spec.theta, x0.vector)
    except SingularJacobianError as e:
        return _failed(str(e), support=support, triple=x0)
    if not kantorovich.passed:
        return _failed(
            f"Kantorovich test failed (h={kantorovich.h:.3e})",
            support=support,
            triple=x0,
            kantorovich=kantorovich,
        )

    try:
        triple = newton_solve(A11, spec.theta, x0, cfg.eps_s, cfg.newton_max_iter)
    except (SingularJacobianError, NoConvergenceError) as e:
        return _failed(str(e), support=support, triple=x0, kantorovich=kantorovich)
    triple.eps = max(triple.eps, cfg.eps_s)
    if not triple.eps < 0.5 or not triple.admissible():
        return _failed(
            "Newton solution is not a nonnegative unit triple",
            support=support,
            triple=triple,
            kantorovich=kantorovich,
        )

    data = CertificateData(
        lam=triple.lam,
        u1=triple.u1,
        v1=triple.v1,
        A=A_perm,
        theta=spec.theta,
        eps=triple.eps,
        spectral_norm_A=spec.spectral_norm_A,
    )
    if data.target < 0:
        return _failed(
            "Spectral target 1 - (||A||_2 + 7.5) eps is negative",
            support=support,
            triple=triple,
            kantorovich=kantorovich,
        )

    try:
        W = project_certificate(np.zeros(spec.shape), data)
        best, best_norm = W, spectral_norm(W)
        history = [best_norm]
        iterations = 0
        while best_norm > data.target and iterations < cfg.subgrad_max_iter:
            iterations += 1
            step = cfg.step0 / math.sqrt(iterations)
            W = project_certificate(W - step * spectral_subgradient(W), data)
            norm = spectral_norm(W)
            if norm < best_norm:
                best, best_norm = W, norm
            history.append(best_norm)
            window = cfg.stagnation_window
            if len(history) > window and history[-window - 1] - best_norm < cfg.stagnation_tol:
                break
    except (InfeasibleMarginsError, InfeasibleBoxError) as e:
        return _failed(str(e), support=support, triple=triple, kantorovich=kantorovich)

    margins = certificate_margins(best, data)
    residual = equality_residual(best, data)
    certified = all(value >= 0 for value in margins.values()) and residual <= EQUALITY_TOL
    V = (triple.lam * A_perm - best) / spec.theta
    V[: data.M, : data.N] = 1.0
    result = CertificateResult(
        W=best,
        spectral=best_norm,
        margins=margins,
        certified=certified,
        equality_residual=residual,
        subgradient_iters=iterations,
        support=support,
        triple=triple,
        kantorovich=kantorovich,
        reason="" if certified else "Spectral bound not reached",
        seconds=time.perf_counter() - started,
        V=V,
    )
    logger.debug(
        f"Certification {'passed' if certified else 'failed'}: support "
        f"{support.size[0]}x{support.size[1]}, ||W||_2={best_norm:.6f}, "
        f"target={data.target:.6f}, {iterations} subgradient iterations"
    )
    return result


class Certifier:
    """
    Certification callback for the solvers, bound to one CertifyConfig.

    Attributes:
        calls:
            Number of certification attempts.

        seconds:
            Total wall time spent certifying.

        last:
            Result of the most recent attempt.
    """

    def __init__(self, cfg: Optional[CertifyConfig] = None):
        self.cfg = cfg or CertifyConfig()
        self.calls = 0
        self.seconds = 0.0
        self.last: Optional[CertificateResult] = None

    def __call__(
        self, spec: ProblemSpec, X: PairedVariable, dual_estimate: float
    ) -> CertificateResult:
        started = time.perf_counter()
        self.last = certify(spec, X, self.cfg, dual_estimate)
        self.calls += 1
        self.seconds += time.perf_counter() - started
        return self.last

"""
Problem definition, the constraint map and its adjoint, norms, SVD and the two
proximal mappings.

The convex program is

    min ||X1||_* + theta ||X2||_1   s.t.  A(X) - b in Q,

with A(X) = (<A, X1>, X1 - X2), b = (1, 0) and Q = {0} x {0}.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import numpy.typing as npt
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, svds

from laros import LarosError

logger = logging.getLogger(__name__)

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]

# first rank cap tried by the truncated singular value thresholding path
INITIAL_RANK = 5


class InvalidProblemError(LarosError, ValueError):
    """Raised when a problem instance violates theta > 0 or A != 0."""


class DimensionMismatchError(LarosError, ValueError):
    def __init__(self, expected: tuple[int, ...], found: tuple[int, ...]):
        self.expected = expected
        self.found = found
        super().__init__(f"Expected shape {expected}, got {found}")


class ConvergenceFailureError(LarosError, ArithmeticError):
    """Raised when the singular value decomposition does not converge."""


class ZeroMatrixError(LarosError, ValueError):
    """Raised when an operation needs a nonzero matrix."""


class Cone(str, Enum):
    ZERO = "zero"
    NONNEGATIVE = "nonnegative"


@dataclass
class PairedVariable:
    """Primal pair X = (X1, X2) of equally shaped matrices."""

    X1: Matrix
    X2: Matrix

    def __post_init__(self):
        self.X1 = np.asarray(self.X1, dtype=np.float64)
        self.X2 = np.asarray(self.X2, dtype=np.float64)
        if self.X1.shape != self.X2.shape:
            raise DimensionMismatchError(self.X1.shape, self.X2.shape)

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> PairedVariable:
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def shape(self) -> tuple[int, int]:
        return self.X1.shape

    def __add__(self, other: PairedVariable) -> PairedVariable:
        return PairedVariable(self.X1 + other.X1, self.X2 + other.X2)

    def __sub__(self, other: PairedVariable) -> PairedVariable:
        return PairedVariable(self.X1 - other.X1, self.X2 - other.X2)

    def __mul__(self, scalar: float) -> PairedVariable:
        return PairedVariable(scalar * self.X1, scalar * self.X2)

    __rmul__ = __mul__

    def inner(self, other: PairedVariable) -> float:
        return float(np.vdot(self.X1, other.X1) + np.vdot(self.X2, other.X2))

    def norm(self) -> float:
        return math.sqrt(self.inner(self))

    def copy(self) -> PairedVariable:
        return PairedVariable(self.X1.copy(), self.X2.copy())


@dataclass
class DualPoint:
    """Multiplier z = (z1, Z2) in R x R^{m x n}."""

    z1: float
    Z2: Matrix

    def __post_init__(self):
        self.z1 = float(self.z1)
        self.Z2 = np.asarray(self.Z2, dtype=np.float64)

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> DualPoint:
        return cls(0.0, np.zeros(shape))

    def __add__(self, other: DualPoint) -> DualPoint:
        return DualPoint(self.z1 + other.z1, self.Z2 + other.Z2)

    def __sub__(self, other: DualPoint) -> DualPoint:
        return DualPoint(self.z1 - other.z1, self.Z2 - other.Z2)

    def __mul__(self, scalar: float) -> DualPoint:
        return DualPoint(scalar * self.z1, scalar * self.Z2)

    __rmul__ = __mul__

    def inner(self, other: DualPoint) -> float:
        return float(self.z1 * other.z1 + np.vdot(self.Z2, other.Z2))

    def norm(self) -> float:
        return math.sqrt(self.inner(self))

    def copy(self) -> DualPoint:
        return DualPoint(self.z1, self.Z2.copy())


@dataclass
class ProblemSpec:
    """
    One instance of the program.

    Attributes:
        A:
            Nonzero data matrix of shape (m, n).

        theta:
            Positive weight of the entrywise l1 norm.

        cone:
            Cone Q of the constraint A(X) - b in Q; its dual cone is projected onto
            by the dual algorithm.
    """

    A: Matrix
    theta: float
    cone: Cone = field(default=Cone.ZERO)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.theta = float(self.theta)
        if self.A.ndim != 2:
            raise InvalidProblemError("A must be a matrix")
        if not np.all(np.isfinite(self.A)):
            raise InvalidProblemError("A must have finite entries")
        if not self.theta > 0:
            raise InvalidProblemError(f"theta must be positive, got {self.theta}")
        if not np.any(self.A):
            raise InvalidProblemError("A must not be identically zero")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    @cached_property
    def spectral_norm_A(self) -> float:
        return spectral_norm(self.A)

    @cached_property
    def fro_norm_A(self) -> float:
        return float(np.linalg.norm(self.A))

    @property
    def b(self) -> DualPoint:
        return DualPoint(1.0, np.zeros(self.shape))


def _check_shape(spec: ProblemSpec, *arrays: Matrix) -> None:
    for array in arrays:
        if array.shape != spec.shape:
            raise DimensionMismatchError(spec.shape, array.shape)


def apply_map(spec: ProblemSpec, X: PairedVariable) -> DualPoint:
    """Return A(X) = (<A, X1>, X1 - X2)."""
    _check_shape(spec, X.X1, X.X2)
    return DualPoint(float(np.vdot(spec.A, X.X1)), X.X1 - X.X2)


def apply_adjoint(spec: ProblemSpec, z: DualPoint) -> PairedVariable:
    """Return A*z = (z1 A + Z2, -Z2)."""
    _check_shape(spec, z.Z2)
    return PairedVariable(z.z1 * spec.A + z.Z2, -z.Z2)


def project_dual_cone(z: DualPoint, cone: Cone) -> DualPoint:
    """Project onto Q*: the whole space for Q = {0}, the nonnegative orthant otherwise."""
    if cone is Cone.ZERO:
        return z
    return DualPoint(max(z.z1, 0.0), np.maximum(z.Z2, 0.0))


def objective(spec: ProblemSpec, X: PairedVariable) -> float:
    """Return ||X1||_* + theta ||X2||_1."""
    return nuclear_norm(X.X1) + spec.theta * float(np.abs(X.X2).sum())


def feasibility_residual(spec: ProblemSpec, X: PairedVariable) -> float:
    """Return ||A(X) - b||."""
    return (apply_map(spec, X) - spec.b).norm()


def dual_lower_bound(spec: ProblemSpec, z: DualPoint) -> float:
    """
    Return the dual objective at z scaled into the dual feasible set.

    The dual function equals <b, z> when A*z lies in the unit ball of the dual
    norm, i.e. ||z1 A + Z2||_2 <= 1 and max |Z2| <= theta, and -inf otherwise.
    Dividing z by the largest of 1 and those two ratios gives a feasible point,
    so the returned value never exceeds the optimal objective.
    """
    W = apply_adjoint(spec, z)
    excess = max(1.0, spectral_norm(W.X1), float(np.abs(W.X2).max(initial=0.0)) / spec.theta)
    return spec.b.inner(z) / excess


def duality_gap(spec: ProblemSpec, X: PairedVariable, z: DualPoint) -> float:
    """Return ||X1||_* + theta ||X2||_1 minus dual_lower_bound(spec, z)."""
    return objective(spec, X) - dual_lower_bound(spec, z)


def constraint_norm_sq(spec: ProblemSpec) -> float:
    """
    Return the squared operator norm of the constraint map.

    A*A acts as the identity-like block [[1, -1], [-1, 1]] on pairs orthogonal to A
    and as [[||A||_F^2 + 1, -1], [-1, 1]] on span{(A, 0), (0, A)}.
    """
    fro_sq = spec.fro_norm_A**2
    trace = fro_sq + 2.0
    top = 0.5 * (trace + math.sqrt(max(trace * trace - 4.0 * fro_sq, 0.0)))
    return max(2.0, top)


def lipschitz_modulus(spec: ProblemSpec, lam: float) -> float:
    """
    Return a Lipschitz constant of grad_z Theta_lam and grad_X Psi_lam.

    This is lam * (||A||_2^2 + 2) unless the exact constraint norm exceeds it,
    which happens when ||A||_F is much larger than ||A||_2.
    """
    return lam * max(spec.spectral_norm_A**2 + 2.0, constraint_norm_sq(spec))


@dataclass
class SvdResult:
    U: Matrix
    sigma: Vector
    V: Matrix

    @property
    def rank(self) -> int:
        return self.sigma.size

    def reconstruct(self) -> Matrix:
        return (self.U * self.sigma) @ self.V.T


def _fix_signs(U: Matrix, V: Matrix) -> None:
    """Flip singular pairs in place so the largest-magnitude entry of each u is positive."""
    if U.size == 0:
        return
    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U *= signs
    V *= signs


def svd(M: Matrix, k: int | None = None) -> SvdResult:
    """
    Compute the thin SVD of M, or its top-k singular triples.

    The dense LAPACK path is used unless k is well below min(m, n), in which case
    ARPACK computes only the leading triples.

    Args:
        M: Matrix with finite entries
        k: Optional rank cap

    Returns:
        SvdResult with descending singular values and sign-normalized vectors

    Raises:
        ConvergenceFailureError: If the decomposition does not converge
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise DimensionMismatchError((0, 0), M.shape)
    smallest = min(M.shape)

    if k is not None and 0 < k < smallest - 1:
        try:
            U, s, Vt = svds(M, k=k)
        except ArpackNoConvergence as e:
            raise ConvergenceFailureError(f"Truncated SVD did not converge: {e}") from e
        order = np.argsort(s)[::-1]
        U, s, V = U[:, order], s[order], Vt[order].T
    else:
        try:
            U, s, Vt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesdd")
        except np.linalg.LinAlgError:
            logger.debug("gesdd failed, retrying SVD with gesvd")
            try:
                U, s, Vt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")
            except np.linalg.LinAlgError as e:
                raise ConvergenceFailureError(f"SVD did not converge: {e}") from e
        V = Vt.T
        if k is not None:
            U, s, V = U[:, :k], s[:k], V[:, :k]

    U, V = np.array(U), np.array(V)
    _fix_signs(U, V)
    return SvdResult(U=U, sigma=np.maximum(s, 0.0), V=V)


def spectral_norm(M: Matrix) -> float:
    """Return the largest singular value of M."""
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0 or not np.any(M):
        return 0.0
    return float(scipy.linalg.svdvals(M)[0])


def nuclear_norm(M: Matrix) -> float:
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0 or not np.any(M):
        return 0.0
    return float(scipy.linalg.svdvals(M).sum())


def theta_norm(spec: ProblemSpec, X: Matrix) -> float:
    """Return ||X||_theta = ||X||_* + theta ||X||_1."""
    return nuclear_norm(X) + spec.theta * float(np.abs(X).sum())


def singular_value_shrink(
    M: Matrix, tau: float, rank_hint: int | None = None
) -> tuple[Matrix, Vector]:
    """
    Soft-threshold the singular values of M by tau.

    With `rank_hint`, only the leading triples are computed; the count starts at
    `rank_hint` and doubles while the smallest computed singular value still
    exceeds tau.

    Returns:
        Tuple of (thresholded matrix, its nonzero singular values)
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    M = np.asarray(M, dtype=np.float64)
    if not np.any(M):
        return np.zeros_like(M), np.zeros(0)

    if rank_hint is None:
        result = svd(M)
    else:
        k = max(1, rank_hint)
        while True:
            result = svd(M, k)
            if result.rank >= min(M.shape) or result.sigma[-1] <= tau:
                break
            k *= 2

    shrunk = result.sigma - tau
    keep = shrunk > 0
    if not np.any(keep):
        return np.zeros_like(M), np.zeros(0)
    sigma = shrunk[keep]
    return (result.U[:, keep] * sigma) @ result.V[:, keep].T, sigma


def prox_nuclear(M: Matrix, tau: float, rank_hint: int | None = None) -> Matrix:
    """Return argmin_V ||V||_* + ||V - M||_F^2 / (2 tau)."""
    return singular_value_shrink(M, tau, rank_hint)[0]


def prox_l1(M: Matrix, tau: float) -> Matrix:
    """Return sgn(M) * max(|M| - tau, 0), entrywise."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    M = np.asarray(M, dtype=np.float64)
    return np.sign(M) * np.maximum(np.abs(M) - tau, 0.0)


def rank_one_approx(M: Matrix) -> tuple[float, Vector, Vector]:
    """
    Return the top singular triple (sigma, u, v) of M.

    The sign is fixed so that the largest-magnitude entry of u is positive.

    Raises:
        ZeroMatrixError: If M is identically zero
    """
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0 or not np.any(M):
        raise ZeroMatrixError("Rank-one approximation of a zero matrix")
    result = svd(M)
    return float(result.sigma[0]), result.U[:, 0].copy(), result.V[:, 0].copy()

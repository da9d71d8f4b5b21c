"""
Sequential feature extraction.

For every theta of a grid the dual algorithm is run on the data matrix; the
support of X2 and the rank-one approximation of A restricted to it give one
point of the (largeness, averaging) curve. The selected theta yields a feature,
its block of A is zeroed, and the procedure repeats on what is left.
"""

from __future__ import annotations

import asyncio
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from laros import JOBS, SUPPORT_THRESHOLD, LarosError
from laros.certificate import (
    CertifyConfig,
    Certifier,
    EmptySupportError,
    SupportPattern,
    extract_support,
)
from laros.grids import default_grid
from laros.problem import (
    DimensionMismatchError,
    Matrix,
    ProblemSpec,
    Vector,
    ZeroMatrixError,
    rank_one_approx,
    spectral_norm,
)
from laros.solvers import DualConfig, SolveReport, StopReason, dual_solve

logger = logging.getLogger(__name__)

# averaging below this fraction of largeness counts as an exact rank-one block
ZERO_AVERAGING_TOL = 1e-8
CURVATURE_TIE_TOL = 1e-12


class AllSolvesFailedError(LarosError, RuntimeError):
    """Raised when the solve fails at every theta of the sweep."""


class NoValidPointsError(LarosError, ValueError):
    """Raised when theta selection gets no usable curve point."""


class NoFeatureFoundError(LarosError, ValueError):
    """Raised when every theta of the sweep yields an empty support."""


class ValueAboveScaleError(LarosError, ValueError):
    def __init__(self, peak: float, scale: float):
        self.peak = peak
        self.scale = scale
        super().__init__(f"Entry {peak} exceeds the negative transform scale {scale}")


class ExtractionConfig(BaseModel):
    """
    Settings of the extraction pipeline.

    Attributes:
        theta_grid:
            Ascending theta values swept for every feature.

        max_features:
            Number of features after which extraction stops.

        eps, max_outer, max_inner, cert_cadence:
            Dual solver settings used at every theta.

        eps_s:
            Newton tolerance of the certification test.

        certify:
            Run the certification test every cert_cadence outer iterations.

        negative:
            Extract from scale - A and map the features back.

        negative_scale:
            Scale of the negative transform.

        jobs:
            Number of theta solves run concurrently.

        support_threshold:
            Relative threshold used to read supports off X2.
    """

    theta_grid: list[float] = Field(default_factory=default_grid)
    max_features: int = Field(default=10, ge=1)
    eps: float = Field(default=1e-6, gt=0)
    max_outer: int = Field(default=1000, ge=1)
    max_inner: int = Field(default=30, ge=1)
    eps_s: float = Field(default=1e-10, gt=0)
    cert_cadence: int = Field(default=10, ge=1)
    certify: bool = True
    negative: bool = False
    negative_scale: float = Field(default=255.0, gt=0)
    jobs: int = Field(default=JOBS, ge=1)
    support_threshold: float = Field(default=SUPPORT_THRESHOLD, gt=0)

    @field_validator("theta_grid")
    @classmethod
    def _ascending(cls, grid: list[float]) -> list[float]:
        if not grid:
            raise ValueError("theta_grid must not be empty")
        if any(theta <= 0 for theta in grid):
            raise ValueError("theta values must be positive")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("theta_grid must be strictly ascending")
        return grid

    def solver_config(self) -> DualConfig:
        return DualConfig(
            eps=self.eps,
            max_outer=self.max_outer,
            max_inner=self.max_inner,
            cert_cadence=self.cert_cadence,
        )

    def certify_config(self) -> Optional[CertifyConfig]:
        if not self.certify:
            return None
        return CertifyConfig(eps_s=self.eps_s, support_threshold=self.support_threshold)


@dataclass
class LCurvePoint:
    """
    One theta of the sweep.

    Attributes:
        largeness:
            ||X(M, N)||_F, where X(M, N) is the rank-one approximation of A(M, N).

        averaging:
            ||A(M, N) - X(M, N)||_F; exactly 0.0 for a rank-one block.

        converged:
            False when the solve raised or stopped at the iteration cap.
    """

    theta: float
    largeness: float
    averaging: float
    support: Optional[SupportPattern]
    converged: bool
    report: Optional[SolveReport] = field(default=None, repr=False)
    error: Optional[str] = None

    @property
    def valid(self) -> bool:
        return self.converged and self.support is not None


@dataclass
class Feature:
    """
    An extracted rank-one block.

    Attributes:
        support:
            Pixels M and images N of the block.

        u:
            Intensity of the feature on M, scaled so that u v^T approximates A(M, N).

        v:
            Significance factors of the images in N; max(v) = 1.

        sigma:
            Leading singular value of A(M, N).

        size:
            Number of pixels |M|.

        n_images:
            Number of images |N| showing the feature.

        f_min:
            Smallest significance factor.

        curve:
            The sweep this feature was selected from.
    """

    support: SupportPattern
    u: Vector
    v: Vector
    sigma: float
    theta: float
    size: int
    n_images: int
    f_min: float
    certified: bool = False
    stop_reason: Optional[StopReason] = None
    curve: list[LCurvePoint] = field(default_factory=list, repr=False)

    def significance(self) -> dict[int, float]:
        """Map each image index in N to its significance factor."""
        return {int(j): float(f) for j, f in zip(self.support.cols, self.v)}

    def rescaled(self, factor: float) -> Feature:
        """Return the feature of factor * A, given this feature of A."""
        curve = [
            replace(p, largeness=p.largeness * factor, averaging=p.averaging * factor)
            for p in self.curve
        ]
        return replace(self, u=self.u * factor, sigma=self.sigma * factor, curve=curve)


def _curve_measures(A: Matrix, support: SupportPattern) -> tuple[float, float]:
    block = support.block(A)
    sigma, u, v = rank_one_approx(block)
    averaging = float(np.linalg.norm(block - sigma * np.outer(u, v)))
    if averaging <= ZERO_AVERAGING_TOL * sigma:
        averaging = 0.0
    return sigma, averaging


def _solve_point(
    A: Matrix,
    theta: float,
    solver_cfg: DualConfig,
    certify_cfg: Optional[CertifyConfig],
    support_threshold: float,
) -> LCurvePoint:
    certifier = Certifier(certify_cfg) if certify_cfg is not None else None
    try:
        X, _, report = dual_solve(ProblemSpec(A, theta), solver_cfg, certifier)
    except LarosError as e:
        logger.warning(f"Solve at theta={theta:g} failed: {e}")
        return LCurvePoint(theta, math.nan, math.nan, None, converged=False, error=str(e))

    converged = report.stop_reason is not StopReason.ITERATION_CAP
    try:
        if report.certified and report.certificate.support is not None:
            support = report.certificate.support
        else:
            support = extract_support(X.X2, support_threshold)
        largeness, averaging = _curve_measures(A, support)
    except (EmptySupportError, ZeroMatrixError):
        support, largeness, averaging = None, 0.0, 0.0

    point = LCurvePoint(theta, largeness, averaging, support, converged, report)
    size = "empty" if support is None else f"{support.size[0]}x{support.size[1]}"
    logger.info(
        f"theta={theta:g}: support {size}, largeness={largeness:.6g}, "
        f"averaging={averaging:.6g}, stopped by {report.stop_reason.value} {report}"
    )
    return point


async def _sweep_async(
    A: Matrix,
    grid: list[float],
    solver_cfg: DualConfig,
    certify_cfg: Optional[CertifyConfig],
    support_threshold: float,
    jobs: int,
) -> list[LCurvePoint]:
    loop = asyncio.get_event_loop()
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [
            loop.run_in_executor(
                pool, _solve_point, A, theta, solver_cfg, certify_cfg, support_threshold
            )
            for theta in grid
        ]
        return list(await asyncio.gather(*futures))


def sweep_theta(
    A: Matrix,
    grid: list[float],
    solver_cfg: Optional[DualConfig] = None,
    certify_cfg: Optional[CertifyConfig] = None,
    jobs: int = 1,
    support_threshold: float = SUPPORT_THRESHOLD,
) -> list[LCurvePoint]:
    """
    Solve at every theta of the grid and record the curve measures.

    Given-When-Then:
    - Given a nonzero matrix and a theta grid
    - When the dual algorithm runs at each theta, up to `jobs` at a time
    - Then one LCurvePoint per theta is returned in grid order; failed solves are
      flagged with converged=False

    Raises:
        AllSolvesFailedError: If no solve converges
    """
    A = np.asarray(A, dtype=np.float64)
    if not np.any(A):
        raise ZeroMatrixError("Cannot sweep a zero matrix")
    solver_cfg = solver_cfg or DualConfig()

    if jobs > 1 and len(grid) > 1:
        points = asyncio.run(
            _sweep_async(A, grid, solver_cfg, certify_cfg, support_threshold, jobs)
        )
    else:
        points = [
            _solve_point(A, theta, solver_cfg, certify_cfg, support_threshold) for theta in grid
        ]

    if not any(p.converged for p in points):
        raise AllSolvesFailedError(f"No solve converged on a grid of {len(grid)} values")
    return points


def _turning_angles(points: list[LCurvePoint]) -> list[float]:
    xy = np.array([[p.largeness, p.averaging] for p in points])
    angles = [0.0] * len(points)
    for i in range(1, len(points) - 1):
        before, after = xy[i] - xy[i - 1], xy[i + 1] - xy[i]
        if not np.any(before) or not np.any(after):
            continue
        cross = before[0] * after[1] - before[1] * after[0]
        angles[i] = abs(math.atan2(cross, float(before @ after)))
    return angles


def select_theta(points: list[LCurvePoint]) -> float:
    """
    Pick theta from the sweep.

    If some valid point has zero averaging, the smallest theta among those of
    maximal largeness is returned. Otherwise the theta at the sharpest turn of the
    (largeness, averaging) polyline, ordered by theta, is returned; ties go to the
    smallest theta.

    Raises:
        NoValidPointsError: If no point is valid
    """
    valid = sorted((p for p in points if p.valid), key=lambda p: p.theta)
    if not valid:
        raise NoValidPointsError("No valid point to select theta from")

    exact = [p for p in valid if p.averaging == 0.0]
    if exact:
        largest = max(p.largeness for p in exact)
        return min(
            p.theta for p in exact if p.largeness >= largest * (1.0 - ZERO_AVERAGING_TOL)
        )

    angles = _turning_angles(valid)
    sharpest = max(angles)
    return min(p.theta for p, a in zip(valid, angles) if a >= sharpest - CURVATURE_TIE_TOL)


def build_feature(
    A: Matrix, point: LCurvePoint, curve: Optional[list[LCurvePoint]] = None
) -> Feature:
    """Build the feature of the block A(M, N) read off a valid curve point."""
    if point.support is None:
        raise NoValidPointsError(f"Point at theta={point.theta:g} has no support")
    support = point.support
    sigma, u, v = rank_one_approx(support.block(A))
    if np.sum(v) < 0:
        u, v = -u, -v
    peak = float(np.abs(v).max())
    significance = v / peak
    report = point.report
    return Feature(
        support=support,
        u=sigma * peak * u,
        v=significance,
        sigma=sigma,
        theta=point.theta,
        size=int(support.rows.size),
        n_images=int(support.cols.size),
        f_min=float(significance.min()),
        certified=bool(report.certified) if report is not None else False,
        stop_reason=report.stop_reason if report is not None else None,
        curve=list(curve) if curve is not None else [point],
    )


def extract_next_feature(
    A: Matrix, cfg: Optional[ExtractionConfig] = None
) -> tuple[Feature, SolveReport]:
    """
    Sweep theta, select it, and build the feature at the selected theta.

    The solve of the sweep at the selected theta is reused.

    Raises:
        AllSolvesFailedError: If no solve converges
        NoFeatureFoundError: If the support is empty at every converged theta
    """
    cfg = cfg or ExtractionConfig()
    points = sweep_theta(
        A,
        cfg.theta_grid,
        cfg.solver_config(),
        cfg.certify_config(),
        cfg.jobs,
        cfg.support_threshold,
    )
    try:
        theta = select_theta(points)
    except NoValidPointsError:
        raise NoFeatureFoundError("Every converged solve produced an empty support") from None

    point = next(p for p in points if p.theta == theta and p.valid)
    feature = build_feature(A, point, points)
    logger.info(
        f"Feature at theta={theta:g}: {feature.size} pixels in {feature.n_images} images, "
        f"f_min={feature.f_min:.3f}"
    )
    return feature, point.report


def deflate(A: Matrix, feature: Feature) -> Matrix:
    """Return a copy of A with A(M, N) set to zero."""
    A = np.array(A, dtype=np.float64)
    if feature.support.shape != A.shape:
        raise DimensionMismatchError(A.shape, feature.support.shape)
    A[np.ix_(feature.support.rows, feature.support.cols)] = 0.0
    return A


def negative_transform(A: Matrix, scale: float = 255.0) -> Matrix:
    """
    Return scale * E - A.

    Raises:
        ValueAboveScaleError: If an entry of A exceeds scale
    """
    A = np.asarray(A, dtype=np.float64)
    peak = float(A.max()) if A.size else 0.0
    if peak > scale:
        raise ValueAboveScaleError(peak, scale)
    return scale - A


def negative_feature(feature: Feature, scale: float = 255.0) -> Feature:
    """Map a feature extracted from scale * E - A back to intensities of A."""
    return replace(feature, u=scale - feature.u)


def run_extraction(
    A: Matrix, cfg: Optional[ExtractionConfig] = None
) -> list[tuple[Feature, SolveReport]]:
    """
    Extract features one by one, deflating after each.

    Given-When-Then:
    - Given a data matrix, rescaled to ||A||_2 = 1 before every feature
    - When features are extracted and their blocks zeroed in turn
    - Then features in the original scale are returned, stopping at
      cfg.max_features, at a zero matrix, or when no feature is found

    Returns:
        List of (feature, report of the solve that produced it)
    """
    cfg = cfg or ExtractionConfig()
    work = np.asarray(A, dtype=np.float64)
    if cfg.negative:
        work = negative_transform(work, cfg.negative_scale)
    if not np.any(work):
        logger.info("Input matrix is zero, nothing to extract")
        return []

    results: list[tuple[Feature, SolveReport]] = []
    while len(results) < cfg.max_features and np.any(work):
        # theta grids refer to ||A||_2 = 1, including after deflation
        factor = spectral_norm(work)
        try:
            feature, report = extract_next_feature(work / factor, cfg)
        except NoFeatureFoundError:
            logger.info("No further feature found")
            break
        except AllSolvesFailedError as e:
            logger.warning(f"Stopping extraction: {e}")
            break
        work = deflate(work, feature)
        feature = feature.rescaled(factor)
        if cfg.negative:
            feature = negative_feature(feature, cfg.negative_scale)
        results.append((feature, report))

    logger.info(f"Extracted {len(results)} features")
    return results

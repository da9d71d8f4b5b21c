from __future__ import annotations

import math
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from laros.certificate import CertificateResult
from laros.matio import Rectangle
from laros.pipeline import Feature, LCurvePoint
from laros.problem import PairedVariable
from laros.solvers import SolveReport, StopReason

SCHEMA_VERSION = 1


def _finite(value: float) -> Optional[float]:
    return None if value is None or not math.isfinite(value) else float(value)


class SolverStats(BaseModel):
    """
    Counters and timings of one solve.

    Attributes:
        algorithm:
            "primal" or "dual".

        outer_iters:
            Outer iterations performed.

        inner_iters_total:
            Inner iterations summed over all outer iterations.

        wall_seconds:
            Total wall time of the solve.

        certify_seconds:
            Time spent certifying; 0.0 when certification was off.

        certified:
            Whether the solve stopped on a certificate.

        stop_reason:
            Why the outer loop ended.

        objective:
            ||X1||_* + theta ||X2||_1 at the returned iterate.

        residual:
            Final outer residual.

        feasibility:
            ||A(X) - b|| at the returned iterate.

        gap:
            Relative duality gap at the returned iterate.
    """

    algorithm: str
    outer_iters: int
    inner_iters_total: int
    wall_seconds: float
    certify_seconds: float
    certified: bool
    stop_reason: StopReason
    objective: float
    residual: Optional[float]
    feasibility: Optional[float] = None
    gap: Optional[float] = None

    @classmethod
    def from_report(cls, report: SolveReport) -> SolverStats:
        return cls(
            algorithm=report.algorithm,
            outer_iters=report.outer_iters,
            inner_iters_total=report.inner_iters_total,
            wall_seconds=report.wall_seconds,
            certify_seconds=report.certify_seconds,
            certified=report.certified,
            stop_reason=report.stop_reason,
            objective=report.objective,
            residual=_finite(report.residual),
            feasibility=_finite(report.feasibility),
            gap=_finite(report.gap),
        )


class CertificateRecord(BaseModel):
    """
    Outcome of a certification attempt.

    Attributes:
        margins:
            Slack of conditions "i" to "v"; null where the attempt stopped early.

        equality_residual:
            Largest violation of the certificate's equality constraints.
    """

    certified: bool
    spectral: Optional[float]
    margins: dict[str, Optional[float]]
    equality_residual: Optional[float] = None
    support_rows: Optional[list[int]] = None
    support_cols: Optional[list[int]] = None
    lam: Optional[float] = None
    eps: Optional[float] = None
    subgradient_iters: int = 0
    reason: str = ""

    @classmethod
    def from_result(cls, result: CertificateResult) -> CertificateRecord:
        support, triple = result.support, result.triple
        return cls(
            certified=result.certified,
            spectral=_finite(result.spectral),
            margins={name: _finite(value) for name, value in result.margins.items()},
            equality_residual=_finite(result.equality_residual),
            support_rows=support.rows.tolist() if support is not None else None,
            support_cols=support.cols.tolist() if support is not None else None,
            lam=triple.lam if triple is not None else None,
            eps=_finite(triple.eps) if triple is not None else None,
            subgradient_iters=result.subgradient_iters,
            reason=result.reason,
        )


class CurvePointRecord(BaseModel):
    theta: float
    largeness: Optional[float]
    averaging: Optional[float]
    support_rows: int
    support_cols: int
    converged: bool

    @classmethod
    def from_point(cls, point: LCurvePoint) -> CurvePointRecord:
        rows, cols = point.support.size if point.support is not None else (0, 0)
        return cls(
            theta=point.theta,
            largeness=_finite(point.largeness),
            averaging=_finite(point.averaging),
            support_rows=rows,
            support_cols=cols,
            converged=point.converged,
        )


class FeatureRecord(BaseModel):
    """
    One extracted feature.

    Attributes:
        s_i:
            Number of pixels in the support.

        n_i:
            Number of images in the support.

        f_min:
            Smallest significance factor.

        rows, cols:
            Support indices into the data matrix.

        u, v:
            Intensity and significance vectors on rows and cols.

        curve:
            Every point of the theta sweep the feature was selected from.
    """

    index: int
    theta: float
    s_i: int
    n_i: int
    f_min: float
    rows: list[int]
    cols: list[int]
    sigma: float
    u: list[float]
    v: list[float]
    certified: bool
    stop_reason: Optional[StopReason]
    solver: Optional[SolverStats]
    curve: list[CurvePointRecord]

    @classmethod
    def from_feature(
        cls, index: int, feature: Feature, report: Optional[SolveReport]
    ) -> FeatureRecord:
        return cls(
            index=index,
            theta=feature.theta,
            s_i=feature.size,
            n_i=feature.n_images,
            f_min=feature.f_min,
            rows=feature.support.rows.tolist(),
            cols=feature.support.cols.tolist(),
            sigma=feature.sigma,
            u=feature.u.tolist(),
            v=feature.v.tolist(),
            certified=feature.certified,
            stop_reason=feature.stop_reason,
            solver=SolverStats.from_report(report) if report is not None else None,
            curve=[CurvePointRecord.from_point(p) for p in feature.curve],
        )


class SolutionRecord(BaseModel):
    theta: float
    objective: float
    X1: list[list[float]]
    X2: list[list[float]]
    solver: SolverStats

    @classmethod
    def from_solve(cls, theta: float, X: PairedVariable, report: SolveReport) -> SolutionRecord:
        return cls(
            theta=theta,
            objective=report.objective,
            X1=np.asarray(X.X1).tolist(),
            X2=np.asarray(X.X2).tolist(),
            solver=SolverStats.from_report(report),
        )


class JsonDocument(BaseModel):
    def write(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(by_alias=True, indent=2) + "\n")
        return path


class RunReport(JsonDocument):
    """
    JSON report written by every command.

    Attributes:
        schema_version:
            Serialized as "schema"; bumped on incompatible changes.

        command:
            Command that produced the report.

        input:
            Path of the data the command read.

        solution:
            Result of `solve`; null for other commands.

        certificate:
            Last certification attempt of `solve`, or the result of `certify`.

        features:
            Extracted features; empty for commands other than `extract`.
    """

    model_config = ConfigDict(populate_by_name=True)

    schema_version: Literal[1] = Field(default=SCHEMA_VERSION, alias="schema")
    command: Literal["solve", "extract", "certify"]
    input: str
    solution: Optional[SolutionRecord] = None
    certificate: Optional[CertificateRecord] = None
    features: list[FeatureRecord] = Field(default_factory=list)


class SailboatTruth(JsonDocument):
    """
    Ground truth of a generated sailboat stack.

    Attributes:
        features:
            Rectangles of the primitive features, in index order.

        subsets:
            Feature indices drawn in each image, one list per matrix column.
    """

    height: int
    width: int
    seed: int
    features: list[Rectangle]
    subsets: list[list[int]]

import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Optional

import click
import numpy as np
from pydantic import BaseModel, ValidationError

from laros import JOBS, LOG_LEVEL, LarosError
from laros.certificate import Certifier, CertifyConfig, certify
from laros.grids import get_grid
from laros.matio import (
    SailboatSpec,
    default_sailboat_features,
    gen_sailboat,
    load_image_stack,
    read_matrix_csv,
    write_image_stack,
    write_matrix_csv,
    write_pgm,
)
from laros.models import (
    CertificateRecord,
    FeatureRecord,
    RunReport,
    SailboatTruth,
    SolutionRecord,
)
from laros.pipeline import ExtractionConfig, run_extraction
from laros.problem import DimensionMismatchError, PairedVariable, ProblemSpec
from laros.solvers import DualConfig, PrimalConfig, StopReason, dual_solve, primal_solve

logger = logging.getLogger(__name__)

EXIT_ERROR = 1
EXIT_ITERATION_CAP = 2
EXIT_NO_FEATURES = 3
EXIT_NOT_CERTIFIED = 4


def debug(ctx, param, value):
    """
    Enable debugging with debugpy.

    Args:
        ctx (click.Context): Click context.
        param (click.Parameter): Click parameter.
        value (int): Port the debugger listens on.
    """
    if not value or ctx.resilient_parsing:
        return

    import debugpy

    debugpy.listen(value)
    logging.debug(f"Waiting for debugger to attach on port {value}...")
    debugpy.wait_for_client()
    logging.debug("Debugger attached")


debug_option = click.option(
    "--debug",
    "-d",
    callback=debug,
    expose_value=False,
    help="Run with debugger listening on the specified port.",
    is_eager=True,
    type=int,
)

config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="JSON file of settings; command-line flags take precedence.",
)


class LarosGroup(click.Group):
    """Command group whose usage errors exit with status 1."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = EXIT_ERROR
            raise


@contextmanager
def exit_on_error():
    """Report library, I/O and validation errors on stderr and exit with status 1."""
    try:
        yield
    except (LarosError, OSError, ValidationError, ValueError) as e:
        click.echo(f"Error: {e}", err=True)
        raise SystemExit(EXIT_ERROR)


def load_settings(config_path: Optional[Path], **flags: Any) -> dict[str, Any]:
    """Merge a JSON settings file with the flags given on the command line."""
    settings: dict[str, Any] = {}
    if config_path is not None:
        try:
            settings = json.loads(config_path.read_text())
        except json.JSONDecodeError as e:
            raise LarosError(f"{config_path} is not valid JSON: {e}") from e
        if not isinstance(settings, dict):
            raise LarosError(f"{config_path} must hold a JSON object")
    settings.update({key: value for key, value in flags.items() if value is not None})
    return settings


def build_config(model: type[BaseModel], settings: dict[str, Any]) -> BaseModel:
    return model.model_validate({k: v for k, v in settings.items() if k in model.model_fields})


def parse_lambda0(value: Optional[str]) -> Optional[float]:
    if value is None or value.strip().lower() == "auto":
        return None
    try:
        return float(value)
    except ValueError:
        raise click.BadParameter(f"expected 'auto' or a number, got '{value}'") from None


def parse_image_shape(value: Optional[str]) -> Optional[tuple[int, int]]:
    if value is None:
        return None
    try:
        rows, cols = (int(part) for part in value.lower().split("x"))
    except ValueError:
        raise click.BadParameter(f"expected ROWSxCOLS, got '{value}'") from None
    return rows, cols


def emit(report: RunReport, out: Optional[Path]) -> None:
    if out is None:
        click.echo(report.model_dump_json(by_alias=True, indent=2))
    else:
        report.write(out)
        logger.info(f"Wrote report to {out}")


@click.group(cls=LarosGroup)
@click.option(
    "--log-level",
    default=LOG_LEVEL,
    envvar="LAROS_LOG_LEVEL",
    show_default=True,
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    help="Logging level",
)
def cli(log_level: str):
    logging.basicConfig(level=log_level.upper())


@cli.command("solve")
@click.option(
    "--input",
    "input_path",
    required=True,
    type=click.Path(path_type=Path),
    help="Data matrix as headerless CSV",
)
@click.option("--theta", type=float, required=True, help="Weight of the l1 term")
@click.option(
    "--algo",
    type=click.Choice(["primal", "dual"]),
    default="dual",
    show_default=True,
    help="Proximal point algorithm",
)
@click.option("--eps", type=float, help="Outer tolerance [default: 1e-6]")
@click.option("--max-outer", type=int, help="Outer iteration cap [default: 1000]")
@click.option("--max-inner", type=int, help="Inner iteration cap [default: 30]")
@click.option("--lambda0", default=None, help="Initial proximal parameter, or 'auto' for 1/theta")
@click.option(
    "--certify",
    "certify_mode",
    type=click.Choice(["on", "off"]),
    default="on",
    show_default=True,
    help="Run the certification test during the solve",
)
@click.option("--certify-every", type=int, help="Outer iterations between certifications")
@click.option("--eps-s", type=float, help="Newton tolerance of the certification test")
@click.option("--out", type=click.Path(path_type=Path), help="Report path; stdout if omitted")
@config_option
@debug_option
def solve(
    input_path: Path,
    theta: float,
    algo: str,
    eps: Optional[float],
    max_outer: Optional[int],
    max_inner: Optional[int],
    lambda0: Optional[str],
    certify_mode: str,
    certify_every: Optional[int],
    eps_s: Optional[float],
    out: Optional[Path],
    config_path: Optional[Path],
):
    """
    Solve the program for one data matrix and one theta.

    Exits with 2 when the iteration cap is reached without convergence.

    Examples:

        laros solve --input A.csv --theta 0.5

        laros solve --input A.csv --theta 0.2 --algo primal --out report.json
    """
    with exit_on_error():
        settings = load_settings(
            config_path,
            eps=eps,
            max_outer=max_outer,
            max_inner=max_inner,
            lambda0=parse_lambda0(lambda0),
            cert_cadence=certify_every,
            eps_s=eps_s,
        )
        spec = ProblemSpec(read_matrix_csv(input_path), theta)
        certifier = (
            Certifier(build_config(CertifyConfig, settings)) if certify_mode == "on" else None
        )
        if algo == "primal":
            X, _, solve_report = primal_solve(
                spec, build_config(PrimalConfig, settings), certifier
            )
        else:
            X, _, solve_report = dual_solve(spec, build_config(DualConfig, settings), certifier)

        certificate = solve_report.certificate
        report = RunReport(
            command="solve",
            input=str(input_path),
            solution=SolutionRecord.from_solve(theta, X, solve_report),
            certificate=CertificateRecord.from_result(certificate) if certificate else None,
        )
        emit(report, out)

    click.echo(
        f"{algo} solve stopped by {solve_report.stop_reason.value}: "
        f"objective={solve_report.objective:.10g} {solve_report}",
        err=True,
    )
    if solve_report.stop_reason is StopReason.ITERATION_CAP:
        raise SystemExit(EXIT_ITERATION_CAP)


@cli.command("extract")
@click.option(
    "--input", "input_path", type=click.Path(path_type=Path), help="Data matrix as headerless CSV"
)
@click.option(
    "--images",
    "images_dir",
    type=click.Path(path_type=Path, file_okay=False),
    help="Directory of PGM images, one matrix column each",
)
@click.option(
    "--image-shape",
    help="ROWSxCOLS of the images stored in a CSV input; enables mask output",
)
@click.option(
    "--theta-grid",
    default=None,
    help="Grid preset name or 'a:b:n[,c:d:m...]' [default: default]",
)
@click.option("--max-features", type=int, help="Stop after this many features [default: 10]")
@click.option("--negative", is_flag=True, default=None, help="Extract dark features")
@click.option("--negative-scale", type=float, help="Scale of the negative transform [default: 255]")
@click.option("--eps", type=float, help="Outer tolerance [default: 1e-6]")
@click.option("--max-outer", type=int, help="Outer iteration cap [default: 1000]")
@click.option("--max-inner", type=int, help="Inner iteration cap [default: 30]")
@click.option("--eps-s", type=float, help="Newton tolerance of the certification test")
@click.option(
    "--certify",
    "certify_mode",
    type=click.Choice(["on", "off"]),
    default=None,
    help="Run the certification test during each solve [default: on]",
)
@click.option("--certify-every", type=int, help="Outer iterations between certifications")
@click.option(
    "--jobs",
    type=int,
    help=f"Number of theta values solved concurrently [default: {JOBS}, from LAROS_JOBS]",
)
@click.option(
    "--out", required=True, type=click.Path(path_type=Path, file_okay=False), help="Output directory"
)
@config_option
@debug_option
def extract(
    input_path: Optional[Path],
    images_dir: Optional[Path],
    image_shape: Optional[str],
    theta_grid: Optional[str],
    max_features: Optional[int],
    negative: Optional[bool],
    negative_scale: Optional[float],
    eps: Optional[float],
    max_outer: Optional[int],
    max_inner: Optional[int],
    eps_s: Optional[float],
    certify_mode: Optional[str],
    certify_every: Optional[int],
    jobs: Optional[int],
    out: Path,
    config_path: Optional[Path],
):
    """
    Extract features one by one from a matrix or an image directory.

    Writes report.json and, when the image shape is known, one 255/0 support mask
    per feature. Exits with 3 when no feature is found.

    Examples:

        laros extract --images frames/ --out features/

        laros extract --input A.csv --image-shape 80x50 --theta-grid 0.1:1:10 --out features/
    """
    if (input_path is None) == (images_dir is None):
        click.echo("Error: exactly one of --input and --images is required", err=True)
        raise SystemExit(EXIT_ERROR)

    with exit_on_error():
        shape = parse_image_shape(image_shape)
        if images_dir is not None:
            stack = load_image_stack(images_dir)
            A, shape = stack.matrix, (stack.pixel_rows, stack.pixel_cols)
        else:
            A = read_matrix_csv(input_path)
        if shape is not None and shape[0] * shape[1] != A.shape[0]:
            raise DimensionMismatchError((shape[0] * shape[1], A.shape[1]), A.shape)

        settings = load_settings(
            config_path,
            theta_grid=get_grid(theta_grid) if theta_grid is not None else None,
            max_features=max_features,
            negative=negative,
            negative_scale=negative_scale,
            eps=eps,
            max_outer=max_outer,
            max_inner=max_inner,
            eps_s=eps_s,
            certify=None if certify_mode is None else certify_mode == "on",
            cert_cadence=certify_every,
            jobs=jobs,
        )
        if isinstance(settings.get("theta_grid"), str):
            settings["theta_grid"] = get_grid(settings["theta_grid"])
        cfg = build_config(ExtractionConfig, settings)

        results = run_extraction(A, cfg)
        report = RunReport(
            command="extract",
            input=str(input_path if input_path is not None else images_dir),
            features=[
                FeatureRecord.from_feature(i, feature, solve_report)
                for i, (feature, solve_report) in enumerate(results)
            ],
        )
        out.mkdir(parents=True, exist_ok=True)
        report.write(out / "report.json")
        if shape is not None:
            for i, (feature, _) in enumerate(results):
                mask = np.zeros(A.shape[0])
                mask[feature.support.rows] = 255.0
                write_pgm(mask, shape[0], shape[1], out / f"feature_{i:03d}.pgm")

    for i, (feature, _) in enumerate(results):
        click.echo(
            f"feature {i}: theta={feature.theta:g} s_i={feature.size} "
            f"n_i={feature.n_images} f_min={feature.f_min:.3f}"
        )
    if not results:
        click.echo("No features found", err=True)
        raise SystemExit(EXIT_NO_FEATURES)


@cli.command("certify")
@click.option(
    "--input",
    "input_path",
    required=True,
    type=click.Path(path_type=Path),
    help="Data matrix as headerless CSV",
)
@click.option(
    "--x2",
    "x2_path",
    required=True,
    type=click.Path(path_type=Path),
    help="Approximate solution X2 as headerless CSV",
)
@click.option("--theta", type=float, required=True, help="Weight of the l1 term")
@click.option("--eps-s", type=float, help="Newton tolerance [default: 1e-10]")
@click.option(
    "--lambda",
    "dual_estimate",
    type=float,
    help="Estimate of the optimal value; derived from X2 if omitted",
)
@click.option("--out", type=click.Path(path_type=Path), help="Optional report path")
@config_option
@debug_option
def certify_command(
    input_path: Path,
    x2_path: Path,
    theta: float,
    eps_s: Optional[float],
    dual_estimate: Optional[float],
    out: Optional[Path],
    config_path: Optional[Path],
):
    """
    Test whether the support of X2 is the support of a rank-one optimum.

    Prints the margin of each condition and exits with 4 when not certified.

    Examples:

        laros certify --input A.csv --x2 X2.csv --theta 0.3
    """
    with exit_on_error():
        spec = ProblemSpec(read_matrix_csv(input_path), theta)
        X2 = read_matrix_csv(x2_path)
        if X2.shape != spec.shape:
            raise DimensionMismatchError(spec.shape, X2.shape)
        cfg = build_config(CertifyConfig, load_settings(config_path, eps_s=eps_s))
        result = certify(spec, PairedVariable(X2, X2.copy()), cfg, dual_estimate)
        if out is not None:
            RunReport(
                command="certify",
                input=str(input_path),
                certificate=CertificateRecord.from_result(result),
            ).write(out)

    for name, margin in result.margins.items():
        click.echo(f"condition {name}: margin {margin:.6e}")
    click.echo(f"equality residual: {result.equality_residual:.6e}")
    click.echo(f"spectral norm: {result.spectral:.10g}")
    click.echo(f"certified: {'yes' if result.certified else 'no'}")
    if not result.certified:
        if result.reason:
            click.echo(f"reason: {result.reason}", err=True)
        raise SystemExit(EXIT_NOT_CERTIFIED)


@cli.command("gen-sailboat")
@click.option("--height", type=int, default=80, show_default=True, help="Canvas height")
@click.option("--width", type=int, default=50, show_default=True, help="Canvas width")
@click.option("--images", type=int, default=30, show_default=True, help="Number of images")
@click.option(
    "--features", type=int, default=5, show_default=True, help="Number of sailboat parts used"
)
@click.option("--per-image", type=int, default=3, show_default=True, help="Parts per image")
@click.option("--seed", type=int, default=0, show_default=True, help="Random seed")
@click.option(
    "--out", required=True, type=click.Path(path_type=Path, file_okay=False), help="Output directory"
)
@debug_option
def gen_sailboat_command(
    height: int, width: int, images: int, features: int, per_image: int, seed: int, out: Path
):
    """
    Generate a synthetic stack of partial sailboat images.

    Writes matrix.csv, images/img_NNNN.pgm and truth.json to the output directory.

    Examples:

        laros gen-sailboat --out sailboat/

        laros gen-sailboat --images 60 --seed 7 --out sailboat/
    """
    with exit_on_error():
        defaults = default_sailboat_features()
        if not 1 <= features <= len(defaults):
            raise LarosError(f"--features must lie in [1, {len(defaults)}], got {features}")
        spec = SailboatSpec(
            height=height,
            width=width,
            features=defaults[:features],
            images=images,
            features_per_image=per_image,
            seed=seed,
        )
        stack, assignment = gen_sailboat(spec)
        out.mkdir(parents=True, exist_ok=True)
        write_matrix_csv(stack.matrix, out / "matrix.csv")
        write_image_stack(stack, out / "images", scale=255.0)
        truth = SailboatTruth(
            height=height,
            width=width,
            seed=seed,
            features=spec.features,
            subsets=[list(subset) for subset in assignment],
        )
        truth.write(out / "truth.json")

    click.echo(f"Wrote {stack.matrix.shape[0]}x{stack.matrix.shape[1]} sailboat matrix to {out}")


if __name__ == "__main__":
    cli()

"""Matrix and image ingestion, serialization and synthetic planted instances."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, model_validator

from laros import LarosError

logger = logging.getLogger(__name__)

Matrix = npt.NDArray[np.float64]

PGM_MAXVAL = 255


class MatioError(LarosError):
    """Raised when a matrix or image file cannot be read or written."""


class MissingFileError(MatioError, FileNotFoundError):
    def __init__(self, path: Path):
        self.path = path
        super().__init__(f"No such file: {path}")


class RaggedRowsError(MatioError, ValueError):
    def __init__(self, line: int, expected: int, found: int):
        self.line = line
        super().__init__(f"Line {line} has {found} fields, expected {expected}")


class NonNumericFieldError(MatioError, ValueError):
    def __init__(self, line: int, col: int, value: str):
        self.line = line
        self.col = col
        super().__init__(f"Non-numeric field {value!r} at line {line}, column {col}")


class BadMagicError(MatioError, ValueError):
    """Raised when a file does not start with P2 or P5."""


class BadHeaderError(MatioError, ValueError):
    """Raised when a PGM header is malformed or has maxval above 255."""


class TruncatedPayloadError(MatioError, ValueError):
    """Raised when a PGM payload holds fewer pixels than the header declares."""


class ValueOutOfRangeError(MatioError, ValueError):
    """Raised when pixel values fall outside [0, 255] after rounding."""


class MixedDimensionsError(MatioError, ValueError):
    """Raised when the images of a stack do not share one size."""


class EmptyDirectoryError(MatioError, ValueError):
    """Raised when an image directory holds no PGM files."""


class OverlappingFeaturesError(MatioError, ValueError):
    def __init__(self, first: int, second: int):
        self.first = first
        self.second = second
        super().__init__(f"Features {first} and {second} overlap")


@dataclass
class ImageStack:
    """
    A set of equally sized grayscale images, one image per matrix column.

    Attributes:
        pixel_rows:
            Image height in pixels.

        pixel_cols:
            Image width in pixels.

        matrix:
            Array of shape (pixel_rows * pixel_cols, number of images); each column is
            an image flattened in row-major order.
    """

    pixel_rows: int
    pixel_cols: int
    matrix: Matrix

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("Image stack matrix must be two-dimensional")
        if self.matrix.shape[0] != self.pixel_rows * self.pixel_cols:
            raise ValueError(
                f"Matrix has {self.matrix.shape[0]} rows, expected "
                f"{self.pixel_rows} x {self.pixel_cols}"
            )

    @property
    def images(self) -> int:
        return self.matrix.shape[1]

    def image(self, j: int) -> Matrix:
        """Return column `j` reshaped to (pixel_rows, pixel_cols)."""
        return self.matrix[:, j].reshape(self.pixel_rows, self.pixel_cols)


class Rectangle(BaseModel):
    """Axis-aligned block of pixels; row and column ranges are half-open."""

    row_start: int = Field(ge=0)
    row_stop: int = Field(gt=0)
    col_start: int = Field(ge=0)
    col_stop: int = Field(gt=0)

    @model_validator(mode="after")
    def _nonempty(self):
        if self.row_stop <= self.row_start or self.col_stop <= self.col_start:
            raise ValueError("Rectangle must be non-empty")
        return self

    @property
    def area(self) -> int:
        return (self.row_stop - self.row_start) * (self.col_stop - self.col_start)

    def overlaps(self, other: Rectangle) -> bool:
        return (
            self.row_start < other.row_stop
            and other.row_start < self.row_stop
            and self.col_start < other.col_stop
            and other.col_start < self.col_stop
        )

    def pixels(self, width: int) -> npt.NDArray[np.int64]:
        """Row-major flat indices of the rectangle's pixels in a canvas of `width`."""
        rows = np.arange(self.row_start, self.row_stop)
        cols = np.arange(self.col_start, self.col_stop)
        return (rows[:, None] * width + cols[None, :]).ravel()


def default_sailboat_features() -> list[Rectangle]:
    # left sail, sail mast, right sail, hull, rudder
    return [
        Rectangle(row_start=5, row_stop=45, col_start=5, col_stop=22),
        Rectangle(row_start=2, row_stop=55, col_start=23, col_stop=26),
        Rectangle(row_start=10, row_stop=45, col_start=27, col_stop=40),
        Rectangle(row_start=56, row_stop=68, col_start=5, col_stop=45),
        Rectangle(row_start=69, row_stop=76, col_start=22, col_stop=27),
    ]


class SailboatSpec(BaseModel):
    """
    Recipe for a synthetic stack of partial sailboat bitmaps.

    Attributes:
        height:
            Canvas height in pixels.

        width:
            Canvas width in pixels.

        features:
            Disjoint rectangles, each one primitive feature of the sailboat.

        images:
            Number of images (matrix columns) to generate.

        features_per_image:
            Number of features drawn in every image.

        seed:
            Seed for the random fill after the cyclic subset enumeration.
    """

    height: int = Field(default=80, gt=0)
    width: int = Field(default=50, gt=0)
    features: list[Rectangle] = Field(default_factory=default_sailboat_features)
    images: int = Field(default=30, gt=0)
    features_per_image: int = Field(default=3, gt=0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _consistent(self):
        if not self.features:
            raise ValueError("At least one feature is required")
        if self.features_per_image > len(self.features):
            raise ValueError("features_per_image exceeds the number of features")
        for rect in self.features:
            if rect.row_stop > self.height or rect.col_stop > self.width:
                raise ValueError(f"Feature {rect} lies outside the canvas")
        return self


def read_matrix_csv(path: Path | str) -> Matrix:
    """
    Read a dense matrix from a headerless comma-separated file.

    Given-When-Then:
    - Given a file whose lines hold equally many numeric fields
    - When the file is parsed
    - Then a float64 array with one row per line is returned

    Args:
        path: CSV file path

    Returns:
        Array of shape (lines, fields)

    Raises:
        MissingFileError: If the file does not exist
        RaggedRowsError: If a line has a different field count than the first
        NonNumericFieldError: If a field is not a finite number
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)

    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as file:
        for lineno, fields in enumerate(csv.reader(file), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if rows and len(fields) != len(rows[0]):
                raise RaggedRowsError(lineno, len(rows[0]), len(fields))
            row = []
            for col, field in enumerate(fields, start=1):
                try:
                    value = float(field)
                except ValueError:
                    raise NonNumericFieldError(lineno, col, field) from None
                if not math.isfinite(value):
                    raise NonNumericFieldError(lineno, col, field)
                row.append(value)
            rows.append(row)

    if not rows:
        raise MatioError(f"{path} holds no rows")
    logger.debug(f"Read {len(rows)}x{len(rows[0])} matrix from {path}")
    return np.array(rows, dtype=np.float64)


def write_matrix_csv(m: Matrix, path: Path | str) -> None:
    """
    Write a matrix as headerless CSV with 17 significant digits per entry.

    Args:
        m: Two-dimensional array
        path: Destination file path

    Raises:
        OSError: If the file cannot be written
    """
    path = Path(path)
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        for row in m:
            writer.writerow(f"{value:.17g}" for value in row)
    logger.debug(f"Wrote {m.shape[0]}x{m.shape[1]} matrix to {path}")


def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Split the first `count` whitespace-separated header tokens, skipping comments."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise BadHeaderError("PGM header ended early")
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path: Path | str) -> ImageStack:
    """
    Read a P5 (binary) or P2 (ASCII) grayscale image as a one-column stack.

    Args:
        path: PGM file path

    Returns:
        ImageStack with a single column holding the row-major pixel values

    Raises:
        MissingFileError: If the file does not exist
        BadMagicError: If the file is not P2 or P5
        BadHeaderError: If the header is malformed or maxval exceeds 255
        TruncatedPayloadError: If fewer pixels are present than declared
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)
    data = path.read_bytes()

    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise BadMagicError(f"{path} is not a PGM file (magic {magic!r})")

    tokens, pos = _pgm_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise BadHeaderError(f"Malformed PGM header in {path}") from None
    if width <= 0 or height <= 0 or not 0 < maxval <= PGM_MAXVAL:
        raise BadHeaderError(f"Unsupported PGM header {width}x{height}/{maxval}")

    size = width * height
    body = data[2 + pos :]
    if magic == b"P5":
        # exactly one whitespace byte separates header and raster
        raster = body[1 : 1 + size]
        if len(raster) < size:
            raise TruncatedPayloadError(f"{path}: expected {size} bytes, got {len(raster)}")
        pixels = np.frombuffer(raster, dtype=np.uint8).astype(np.float64)
    else:
        values = body.split()
        if len(values) < size:
            raise TruncatedPayloadError(
                f"{path}: expected {size} values, got {len(values)}"
            )
        try:
            pixels = np.array([int(v) for v in values[:size]], dtype=np.float64)
        except ValueError:
            raise BadHeaderError(f"Non-integer pixel in {path}") from None

    if maxval != PGM_MAXVAL:
        pixels = np.round(pixels * PGM_MAXVAL / maxval)
    return ImageStack(pixel_rows=height, pixel_cols=width, matrix=pixels[:, None])


def write_pgm(img: npt.ArrayLike, height: int, width: int, path: Path | str) -> None:
    """
    Write a row-major pixel vector as a binary P5 image with maxval 255.

    Raises:
        ValueError: If height x width does not match the vector length
        ValueOutOfRangeError: If a rounded value lies outside [0, 255]
    """
    pixels = np.rint(np.asarray(img, dtype=np.float64).ravel())
    if pixels.size != height * width:
        raise ValueError(f"{pixels.size} pixels cannot fill a {height}x{width} image")
    if pixels.size and (pixels.min() < 0 or pixels.max() > PGM_MAXVAL):
        raise ValueOutOfRangeError(
            f"Pixel values must lie in [0, {PGM_MAXVAL}], got "
            f"[{pixels.min()}, {pixels.max()}]"
        )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii")
    path.write_bytes(header + pixels.astype(np.uint8).tobytes())


def load_image_stack(directory: Path | str) -> ImageStack:
    """
    Load every PGM file of a directory, ordered by filename, as matrix columns.

    Raises:
        EmptyDirectoryError: If the directory holds no PGM files
        MixedDimensionsError: If the images differ in size
    """
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".pgm")
    if not files:
        raise EmptyDirectoryError(f"No PGM files in {directory}")

    first = read_pgm(files[0])
    columns = [first.matrix[:, 0]]
    for path in files[1:]:
        image = read_pgm(path)
        if (image.pixel_rows, image.pixel_cols) != (first.pixel_rows, first.pixel_cols):
            raise MixedDimensionsError(
                f"{path.name} is {image.pixel_rows}x{image.pixel_cols}, expected "
                f"{first.pixel_rows}x{first.pixel_cols}"
            )
        columns.append(image.matrix[:, 0])

    logger.info(f"Loaded {len(files)} images from {directory}")
    return ImageStack(
        pixel_rows=first.pixel_rows,
        pixel_cols=first.pixel_cols,
        matrix=np.column_stack(columns),
    )


def write_image_stack(stack: ImageStack, directory: Path | str, scale: float = 1.0) -> list[Path]:
    """Write each column of `stack`, multiplied by `scale`, as `img_NNNN.pgm`."""
    directory = Path(directory)
    paths = []
    for j in range(stack.images):
        path = directory / f"img_{j:04d}.pgm"
        write_pgm(stack.matrix[:, j] * scale, stack.pixel_rows, stack.pixel_cols, path)
        paths.append(path)
    logger.debug(f"Wrote {len(paths)} images to {directory}")
    return paths


def sailboat_subsets(spec: SailboatSpec) -> list[tuple[int, ...]]:
    """
    Assign a feature subset to every image.

    All size-k subsets are enumerated cyclically in lexicographic order; the columns
    left after the last complete cycle are filled by seeded uniform choice. With
    fewer images than subsets, the images take the leading subsets.
    """
    subsets = list(itertools.combinations(range(len(spec.features)), spec.features_per_image))
    cycles, remainder = divmod(spec.images, len(subsets))
    if cycles == 0:
        return subsets[:remainder]
    assignment = subsets * cycles
    if remainder:
        rng = np.random.default_rng(spec.seed)
        picks = rng.choice(len(subsets), size=remainder, replace=True)
        assignment.extend(subsets[int(i)] for i in picks)
    return assignment


def gen_sailboat(spec: SailboatSpec) -> tuple[ImageStack, list[tuple[int, ...]]]:
    """
    Generate a 0/1 image stack where every image shows a subset of disjoint features.

    Given-When-Then:
    - Given disjoint rectangles on a canvas and a subset size k
    - When each column is drawn as the union of its assigned rectangles
    - Then the stack and the per-image feature subsets are returned

    Returns:
        Tuple of (stack, ground truth subsets, one tuple of feature indices per image)

    Raises:
        OverlappingFeaturesError: If two rectangles share a pixel
    """
    for (i, a), (j, b) in itertools.combinations(enumerate(spec.features), 2):
        if a.overlaps(b):
            raise OverlappingFeaturesError(i, j)

    assignment = sailboat_subsets(spec)
    matrix = np.zeros((spec.height * spec.width, spec.images), dtype=np.float64)
    pixels = [rect.pixels(spec.width) for rect in spec.features]
    for j, subset in enumerate(assignment):
        for f in subset:
            matrix[pixels[f], j] = 1.0

    logger.debug(
        f"Generated {spec.images} sailboat images of {spec.height}x{spec.width} "
        f"with {spec.features_per_image}/{len(spec.features)} features each"
    )
    stack = ImageStack(pixel_rows=spec.height, pixel_cols=spec.width, matrix=matrix)
    return stack, assignment

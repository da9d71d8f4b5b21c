import numpy as np
import pytest

from laros.matio import (
    BadHeaderError,
    BadMagicError,
    EmptyDirectoryError,
    ImageStack,
    MatioError,
    MissingFileError,
    MixedDimensionsError,
    NonNumericFieldError,
    OverlappingFeaturesError,
    RaggedRowsError,
    Rectangle,
    SailboatSpec,
    TruncatedPayloadError,
    ValueOutOfRangeError,
    gen_sailboat,
    load_image_stack,
    read_matrix_csv,
    read_pgm,
    sailboat_subsets,
    write_image_stack,
    write_matrix_csv,
    write_pgm,
)


def test_read_matrix_csv_parses_rows(tmp_path):
    """
    Given-When-Then:
    - Given a file "1,2\\n3,4"
    - When it is read
    - Then the 2x2 matrix [[1,2],[3,4]] is returned
    """
    path = tmp_path / "a.csv"
    path.write_text("1,2\n3,4\n")
    np.testing.assert_array_equal(read_matrix_csv(path), [[1.0, 2.0], [3.0, 4.0]])


def test_read_matrix_csv_single_zero(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("0")
    A = read_matrix_csv(path)
    assert A.shape == (1, 1)
    assert A[0, 0] == 0.0


def test_read_matrix_csv_ragged_rows(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("1,2\n3\n")
    with pytest.raises(RaggedRowsError) as info:
        read_matrix_csv(path)
    assert info.value.line == 2


@pytest.mark.parametrize("field", ["abc", "nan", "inf"])
def test_read_matrix_csv_rejects_non_numeric(tmp_path, field):
    path = tmp_path / "a.csv"
    path.write_text(f"1,2\n3,{field}\n")
    with pytest.raises(NonNumericFieldError) as info:
        read_matrix_csv(path)
    assert (info.value.line, info.value.col) == (2, 2)


def test_read_matrix_csv_missing_and_empty(tmp_path):
    with pytest.raises(MissingFileError):
        read_matrix_csv(tmp_path / "missing.csv")
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(MatioError):
        read_matrix_csv(empty)


def test_write_matrix_csv_layout(tmp_path):
    path = tmp_path / "eye.csv"
    write_matrix_csv(np.eye(2), path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert [float(x) for x in lines[0].split(",")] == [1.0, 0.0]
    assert [float(x) for x in lines[1].split(",")] == [0.0, 1.0]

    zero = tmp_path / "zero.csv"
    write_matrix_csv(np.zeros((1, 1)), zero)
    assert float(zero.read_text()) == 0.0


def test_matrix_csv_round_trip_full_precision(tmp_path, rng):
    """
    Given-When-Then:
    - Given random matrices of assorted shapes and magnitudes
    - When each is written and read back
    - Then every entry is bit-identical
    """
    path = tmp_path / "m.csv"
    for _ in range(100):
        shape = tuple(rng.integers(1, 8, size=2))
        m = rng.standard_normal(shape) * 10.0 ** rng.integers(-8, 8)
        write_matrix_csv(m, path)
        np.testing.assert_array_equal(read_matrix_csv(path), m)


def test_read_pgm_binary_and_ascii(tmp_path):
    """
    Given-When-Then:
    - Given a 2x2 P5 image with bytes (0, 255, 128, 64) and its P2 equivalent
    - When both are read
    - Then both decode to the pixel vector [0, 255, 128, 64]
    """
    p5 = tmp_path / "a.pgm"
    p5.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    p2 = tmp_path / "b.pgm"
    p2.write_text("P2\n# comment line\n2 2\n255\n0 255\n128 64\n")

    for path in (p5, p2):
        stack = read_pgm(path)
        assert (stack.pixel_rows, stack.pixel_cols, stack.images) == (2, 2, 1)
        np.testing.assert_array_equal(stack.matrix[:, 0], [0, 255, 128, 64])


def test_read_pgm_errors(tmp_path):
    bad_magic = tmp_path / "bad.pgm"
    bad_magic.write_bytes(b"P6\n1 1\n255\n\x00")
    with pytest.raises(BadMagicError):
        read_pgm(bad_magic)

    bad_header = tmp_path / "header.pgm"
    bad_header.write_bytes(b"P5\n2 x\n255\n\x00\x00")
    with pytest.raises(BadHeaderError):
        read_pgm(bad_header)

    truncated = tmp_path / "short.pgm"
    truncated.write_bytes(b"P5\n2 2\n255\n\x00\x01")
    with pytest.raises(TruncatedPayloadError):
        read_pgm(truncated)


def test_write_pgm_zero_constant_and_round_trip(tmp_path, rng):
    for pixels in (np.zeros(12), np.full(12, 255.0), rng.integers(0, 256, size=12)):
        path = tmp_path / "img.pgm"
        write_pgm(pixels, 3, 4, path)
        stack = read_pgm(path)
        assert (stack.pixel_rows, stack.pixel_cols) == (3, 4)
        np.testing.assert_array_equal(stack.matrix[:, 0], pixels)


def test_write_pgm_rejects_out_of_range(tmp_path):
    with pytest.raises(ValueOutOfRangeError):
        write_pgm([0, 256, 0, 0], 2, 2, tmp_path / "x.pgm")
    with pytest.raises(ValueError):
        write_pgm([0, 1, 2], 2, 2, tmp_path / "x.pgm")


def test_load_image_stack(tmp_path):
    write_pgm([1, 2, 3, 4], 2, 2, tmp_path / "a.pgm")
    stack = load_image_stack(tmp_path)
    assert stack.matrix.shape == (4, 1)

    write_pgm([1, 2, 3, 4], 2, 2, tmp_path / "b.pgm")
    stack = load_image_stack(tmp_path)
    np.testing.assert_array_equal(stack.matrix[:, 0], stack.matrix[:, 1])

    write_pgm([1, 2, 3, 4, 5, 6], 2, 3, tmp_path / "c.pgm")
    with pytest.raises(MixedDimensionsError):
        load_image_stack(tmp_path)


def test_load_image_stack_empty_directory(tmp_path):
    with pytest.raises(EmptyDirectoryError):
        load_image_stack(tmp_path)


def test_gen_sailboat_defaults():
    """
    Given-When-Then:
    - Given the default 80x50 canvas, 5 features, 30 images and 3 features per image
    - When the stack is generated
    - Then the matrix is 4000x30, every column sums to the area of its 3 features,
      and every one of the 10 subsets appears exactly 3 times
    """
    spec = SailboatSpec()
    stack, assignment = gen_sailboat(spec)
    assert stack.matrix.shape == (4000, 30)
    assert set(np.unique(stack.matrix)) == {0.0, 1.0}

    areas = [rect.area for rect in spec.features]
    for j, subset in enumerate(assignment):
        assert len(subset) == 3
        assert stack.matrix[:, j].sum() == sum(areas[f] for f in subset)

    counts = {subset: assignment.count(subset) for subset in set(assignment)}
    assert len(counts) == 10
    assert set(counts.values()) == {3}


def test_gen_sailboat_deterministic_with_random_fill():
    spec = SailboatSpec(images=33, seed=5)
    first, assignment = gen_sailboat(spec)
    second, again = gen_sailboat(spec)
    assert assignment == again
    assert first.matrix.tobytes() == second.matrix.tobytes()
    assert sailboat_subsets(spec)[:10] == sailboat_subsets(spec)[10:20]


def test_sailboat_subsets_fewer_images_than_subsets():
    assert sailboat_subsets(SailboatSpec(images=4)) == [(0, 1, 2), (0, 1, 3), (0, 1, 4), (0, 2, 3)]
    assert sailboat_subsets(SailboatSpec(images=10, seed=1)) == sailboat_subsets(
        SailboatSpec(images=10, seed=2)
    )


def test_gen_sailboat_rejects_overlap():
    spec = SailboatSpec(
        height=10,
        width=10,
        features=[
            Rectangle(row_start=0, row_stop=5, col_start=0, col_stop=5),
            Rectangle(row_start=4, row_stop=8, col_start=4, col_stop=8),
        ],
        images=2,
        features_per_image=1,
    )
    with pytest.raises(OverlappingFeaturesError):
        gen_sailboat(spec)


def test_sailboat_write_reload(tmp_path):
    """
    Given-When-Then:
    - Given a generated sailboat stack
    - When it is written as PGMs scaled to 255 and reloaded
    - Then the reloaded matrix equals 255 times the generated one
    """
    stack, _ = gen_sailboat(SailboatSpec())
    paths = write_image_stack(stack, tmp_path, scale=255.0)
    assert [p.name for p in paths[:2]] == ["img_0000.pgm", "img_0001.pgm"]

    reloaded = load_image_stack(tmp_path)
    assert isinstance(reloaded, ImageStack)
    assert (reloaded.pixel_rows, reloaded.pixel_cols) == (80, 50)
    np.testing.assert_array_equal(reloaded.matrix, 255.0 * stack.matrix)

import numpy as np
import pytest
from pydantic import ValidationError

from laros.certificate import SupportPattern
from laros.grids import get_grid
from laros.matio import SailboatSpec, gen_sailboat
from laros.problem import DimensionMismatchError, ZeroMatrixError
from laros.solvers import DualConfig
from laros.pipeline import (
    AllSolvesFailedError,
    ExtractionConfig,
    Feature,
    LCurvePoint,
    NoValidPointsError,
    ValueAboveScaleError,
    build_feature,
    deflate,
    extract_next_feature,
    negative_feature,
    negative_transform,
    run_extraction,
    select_theta,
    sweep_theta,
)

SUPPORT = SupportPattern(rows=[0], cols=[0], shape=(1, 1))


def _point(theta, largeness, averaging, converged=True):
    return LCurvePoint(theta, largeness, averaging, SUPPORT, converged)


@pytest.fixture
def two_blocks(planted):
    """A 30-entry and a 12-entry ones block on a zero 20x12 background."""
    return planted(
        (20, 12),
        [(range(0, 6), range(0, 5), 1.0), (range(8, 12), range(6, 9), 1.0)],
    )


def test_extraction_config_validates_grid():
    assert ExtractionConfig().theta_grid == get_grid("default")
    for grid in ([], [0.5, 0.1], [0.0, 1.0], [0.5, 0.5]):
        with pytest.raises(ValidationError):
            ExtractionConfig(theta_grid=grid)
    cfg = ExtractionConfig(certify=False, eps=1e-4, max_outer=7)
    assert cfg.certify_config() is None
    assert cfg.solver_config() == DualConfig(eps=1e-4, max_outer=7)


def test_select_theta_collinear_points_pick_smallest():
    points = [_point(0.3, 3.0, 3.0), _point(0.1, 1.0, 1.0), _point(0.2, 2.0, 2.0)]
    assert select_theta(points) == 0.1


def test_select_theta_right_angle():
    points = [_point(0.1, 1.0, 2.0), _point(0.2, 1.0, 1.0), _point(0.3, 2.0, 1.0)]
    assert select_theta(points) == 0.2


def test_select_theta_prefers_exact_rank_one():
    """
    Given-When-Then:
    - Given points with zero averaging at largeness 5, 5 and 3 and one with nonzero averaging
    - When theta is selected
    - Then the smallest theta among the largest exact points is returned
    """
    points = [
        _point(0.05, 9.0, 1.0),
        _point(0.1, 3.0, 0.0),
        _point(0.2, 5.0, 0.0),
        _point(0.3, 5.0, 0.0),
    ]
    assert select_theta(points) == 0.2


def test_select_theta_ignores_invalid_points():
    points = [_point(0.1, 10.0, 0.0, converged=False), _point(0.2, 1.0, 0.0)]
    assert select_theta(points) == 0.2
    with pytest.raises(NoValidPointsError):
        select_theta([_point(0.1, 1.0, 0.0, converged=False)])
    with pytest.raises(NoValidPointsError):
        select_theta([])


def test_sweep_theta_recovers_planted_block(planted):
    """
    Given-When-Then:
    - Given a 5x4 ones block in a zero 12x10 matrix
    - When theta is swept over [0.1, 0.5, 1.0]
    - Then every point converges to the planted support with zero averaging
    """
    rows, cols = list(range(5)), list(range(4))
    A = planted((12, 10), [(rows, cols, 1.0)])
    points = sweep_theta(A, [0.1, 0.5, 1.0], DualConfig(max_inner=100))
    assert [p.theta for p in points] == [0.1, 0.5, 1.0]
    for point in points:
        assert point.converged
        np.testing.assert_array_equal(point.support.rows, rows)
        np.testing.assert_array_equal(point.support.cols, cols)
        assert point.averaging == 0.0
        assert point.largeness == pytest.approx(np.sqrt(20.0))


def test_sweep_theta_single_value_and_parallel(rng, planted):
    A = planted((10, 8), [(range(3), range(3), 1.0)]) + 0.02 * rng.random((10, 8))
    single = sweep_theta(A, [0.5])
    assert len(single) == 1

    grid = [0.2, 0.5, 1.0, 2.0]
    serial = sweep_theta(A, grid, jobs=1)
    parallel = sweep_theta(A, grid, jobs=2)
    for a, b in zip(serial, parallel):
        assert a.theta == b.theta
        assert a.support == b.support
        assert a.largeness == pytest.approx(b.largeness, rel=1e-12)
        assert a.averaging == pytest.approx(b.averaging, rel=1e-12, abs=1e-12)


def test_sweep_theta_largeness_shrinks_with_theta(rng, planted):
    A = planted((12, 10), [(range(4), range(3), 1.0)]) + 0.1 * rng.random((12, 10))
    points = sweep_theta(A, [0.01, 5.0], DualConfig(max_inner=100))
    assert points[0].largeness >= points[1].largeness


def test_sweep_theta_failures(rng):
    with pytest.raises(ZeroMatrixError):
        sweep_theta(np.zeros((3, 3)), [0.5])
    with pytest.raises(AllSolvesFailedError):
        sweep_theta(rng.random((4, 4)), [0.3, 0.6], DualConfig(max_outer=1, eps=1e-12))


def test_build_feature_scales_to_block():
    A = np.zeros((3, 3))
    A[np.ix_([0, 2], [1, 2])] = [[2.0, 1.0], [4.0, 2.0]]
    support = SupportPattern(rows=[0, 2], cols=[1, 2], shape=A.shape)
    feature = build_feature(A, LCurvePoint(0.5, 0.0, 0.0, support, True))
    np.testing.assert_allclose(feature.v, [1.0, 0.5])
    np.testing.assert_allclose(feature.u, [2.0, 4.0])
    np.testing.assert_allclose(np.outer(feature.u, feature.v), A[np.ix_([0, 2], [1, 2])])
    assert feature.f_min == pytest.approx(0.5)
    assert feature.significance() == {1: 1.0, 2: 0.5}
    assert (feature.size, feature.n_images) == (2, 2)


def test_extract_next_feature_prefers_larger_block(two_blocks):
    cfg = ExtractionConfig(theta_grid=[0.2, 1.0])
    feature, report = extract_next_feature(two_blocks, cfg)
    np.testing.assert_array_equal(feature.support.rows, range(6))
    np.testing.assert_array_equal(feature.support.cols, range(5))
    np.testing.assert_allclose(feature.v, 1.0, atol=1e-12)
    np.testing.assert_allclose(feature.u, 1.0, atol=1e-12)
    assert feature.theta == 0.2
    assert len(feature.curve) == 2
    assert report is not None


def test_deflate(rng, two_blocks):
    cfg = ExtractionConfig(theta_grid=[0.5])
    feature, _ = extract_next_feature(two_blocks, cfg)
    deflated = deflate(two_blocks, feature)
    assert not np.any(deflated[:6, :5])
    np.testing.assert_array_equal(deflated[8:12, 6:9], 1.0)
    removed = np.linalg.norm(two_blocks[:6, :5])
    assert np.linalg.norm(deflated) ** 2 + removed**2 == pytest.approx(np.linalg.norm(two_blocks) ** 2)
    with pytest.raises(DimensionMismatchError):
        deflate(np.ones((3, 3)), feature)


def test_negative_transform(rng):
    np.testing.assert_array_equal(negative_transform(np.zeros((2, 2))), np.full((2, 2), 255.0))
    A = rng.uniform(0, 255, size=(4, 3))
    np.testing.assert_allclose(negative_transform(negative_transform(A)), A)
    with pytest.raises(ValueAboveScaleError) as info:
        negative_transform(np.array([[300.0]]))
    assert info.value.peak == 300.0


def test_negative_feature():
    feature = Feature(
        support=SUPPORT,
        u=np.array([245.0]),
        v=np.array([1.0]),
        sigma=245.0,
        theta=0.5,
        size=1,
        n_images=1,
        f_min=1.0,
    )
    assert negative_feature(feature).u[0] == 10.0
    assert negative_feature(feature, scale=1.0).u[0] == -244.0


def test_run_extraction_zero_matrix():
    assert run_extraction(np.zeros((4, 4))) == []


def test_run_extraction_two_blocks(two_blocks):
    """
    Given-When-Then:
    - Given two disjoint ones blocks
    - When features are extracted until the matrix is exhausted
    - Then exactly the two blocks come out, larger first, with disjoint supports
    """
    results = run_extraction(two_blocks, ExtractionConfig(theta_grid=[0.2, 1.0]))
    assert len(results) == 2
    first, second = (feature for feature, _ in results)
    assert first.support == SupportPattern(rows=range(6), cols=range(5), shape=(20, 12))
    assert second.support == SupportPattern(rows=range(8, 12), cols=range(6, 9), shape=(20, 12))
    assert not np.any(first.support.mask() & second.support.mask())
    np.testing.assert_allclose(first.u, 1.0, atol=1e-10)
    assert first.sigma == pytest.approx(np.sqrt(30.0))

    limited = run_extraction(two_blocks, ExtractionConfig(theta_grid=[0.2, 1.0], max_features=1))
    assert len(limited) == 1


def test_run_extraction_is_scale_invariant(two_blocks):
    cfg = ExtractionConfig(theta_grid=[0.2, 1.0], max_features=1)
    (base, _), = run_extraction(two_blocks, cfg)
    (scaled, _), = run_extraction(3.0 * two_blocks, cfg)
    assert base.support == scaled.support
    np.testing.assert_allclose(scaled.v, base.v, atol=1e-8)
    np.testing.assert_allclose(scaled.u, 3.0 * base.u, rtol=1e-8)


def test_run_extraction_rescales_before_each_feature(two_blocks):
    """
    Given-When-Then:
    - Given two ones blocks, 6x5 and 4x3, on a zero background
    - When both are extracted without certification
    - Then each solve saw its matrix at unit spectral norm: the optimum for a lone
      m x n ones block scaled that way is 1 + theta sqrt(m n)
    """
    cfg = ExtractionConfig(theta_grid=[0.2, 1.0], certify=False)
    results = run_extraction(two_blocks, cfg)
    assert len(results) == 2
    for feature, report in results:
        expected = 1.0 + feature.theta * np.sqrt(feature.size * feature.n_images)
        assert report.objective == pytest.approx(expected, rel=1e-4)


def test_run_extraction_negative_finds_dark_block(rng):
    """
    Given-When-Then:
    - Given a bright 12x10 field with values in [180, 220] and a 4x3 block of value 10
    - When features are extracted in negative mode with scale 255
    - Then the first feature is the dark block with intensity 10
    """
    A = rng.uniform(180, 220, size=(12, 10))
    A[2:6, 3:6] = 10.0
    cfg = ExtractionConfig(theta_grid=[0.5, 1.0, 2.0], negative=True, max_features=1)
    (feature, _), = run_extraction(A, cfg)
    assert feature.support == SupportPattern(rows=range(2, 6), cols=range(3, 6), shape=A.shape)
    np.testing.assert_allclose(feature.u, 10.0, atol=1e-6)
    np.testing.assert_allclose(feature.v, 1.0, atol=1e-12)


@pytest.mark.slow
def test_run_extraction_sailboat():
    """
    Given-When-Then:
    - Given the default sailboat stack: 5 rectangles, 3 in each of 30 images
    - When features are extracted on the coarse grid
    - Then every support is a union of whole rectangles times images that contain
      all of them, with 0/1 significance and pairwise disjoint supports
    """
    spec = SailboatSpec()
    stack, assignment = gen_sailboat(spec)
    results = run_extraction(stack.matrix, ExtractionConfig(theta_grid=get_grid("coarse")))
    assert results

    pixel_sets = [set(np.asarray(rect.pixels(spec.width)).tolist()) for rect in spec.features]
    covered = np.zeros(stack.matrix.shape, dtype=bool)
    for feature, _ in results:
        rows = set(feature.support.rows.tolist())
        parts = [k for k, pixels in enumerate(pixel_sets) if pixels & rows]
        assert rows == set().union(*(pixel_sets[k] for k in parts))
        for j in feature.support.cols:
            assert set(parts) <= set(assignment[j])
        np.testing.assert_allclose(feature.v, 1.0, atol=1e-8)

        mask = feature.support.mask()
        assert not np.any(covered & mask)
        covered |= mask

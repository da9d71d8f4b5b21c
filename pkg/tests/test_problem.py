import math

import numpy as np
import pytest

from laros.problem import (
    Cone,
    DimensionMismatchError,
    DualPoint,
    InvalidProblemError,
    PairedVariable,
    ProblemSpec,
    ZeroMatrixError,
    apply_adjoint,
    apply_map,
    constraint_norm_sq,
    dual_lower_bound,
    duality_gap,
    feasibility_residual,
    lipschitz_modulus,
    nuclear_norm,
    objective,
    project_dual_cone,
    prox_l1,
    prox_nuclear,
    rank_one_approx,
    singular_value_shrink,
    spectral_norm,
    svd,
    theta_norm,
)


def test_problem_spec_validation():
    with pytest.raises(InvalidProblemError):
        ProblemSpec(np.ones((2, 2)), 0.0)
    with pytest.raises(InvalidProblemError):
        ProblemSpec(np.zeros((2, 3)), 0.5)
    with pytest.raises(InvalidProblemError):
        ProblemSpec(np.array([[1.0, np.nan]]), 0.5)

    spec = ProblemSpec([[2.0]], 0.5)
    assert spec.shape == (1, 1)
    assert spec.cone is Cone.ZERO
    assert spec.b.z1 == 1.0 and not np.any(spec.b.Z2)


def test_apply_map_examples(rng):
    A = rng.random((3, 4))
    spec = ProblemSpec(A, 0.3)

    zero = apply_map(spec, PairedVariable.zeros(A.shape))
    assert zero.z1 == 0.0 and not np.any(zero.Z2)

    X = A / np.linalg.norm(A) ** 2
    image = apply_map(spec, PairedVariable(X, X))
    assert image.z1 == pytest.approx(1.0, abs=1e-14)
    assert not np.any(image.Z2)
    assert feasibility_residual(spec, PairedVariable(X, X)) < 1e-14


def test_apply_map_matches_entrywise_sums(rng):
    A = rng.standard_normal((4, 5))
    spec = ProblemSpec(A, 1.0)
    X = PairedVariable(rng.standard_normal(A.shape), rng.standard_normal(A.shape))
    image = apply_map(spec, X)

    inner = sum(A[i, j] * X.X1[i, j] for i in range(4) for j in range(5))
    assert image.z1 == pytest.approx(inner, abs=1e-12)
    for i in range(4):
        for j in range(5):
            assert image.Z2[i, j] == X.X1[i, j] - X.X2[i, j]


def test_apply_adjoint_examples(rng):
    A = rng.random((2, 3))
    spec = ProblemSpec(A, 0.3)

    first = apply_adjoint(spec, DualPoint(1.0, np.zeros(A.shape)))
    np.testing.assert_array_equal(first.X1, A)
    assert not np.any(first.X2)

    Z2 = rng.standard_normal(A.shape)
    second = apply_adjoint(spec, DualPoint(0.0, Z2))
    np.testing.assert_array_equal(second.X1, Z2)
    np.testing.assert_array_equal(second.X2, -Z2)


def test_adjoint_identity(rng):
    """
    Given-When-Then:
    - Given random pairs X and multipliers z
    - When <A(X), z> and <X, A*z> are evaluated
    - Then they agree to 1e-10 relative
    """
    for _ in range(100):
        shape = tuple(rng.integers(1, 6, size=2))
        spec = ProblemSpec(rng.standard_normal(shape), 0.5)
        X = PairedVariable(rng.standard_normal(shape), rng.standard_normal(shape))
        z = DualPoint(rng.standard_normal(), rng.standard_normal(shape))
        left = apply_map(spec, X).inner(z)
        right = X.inner(apply_adjoint(spec, z))
        assert left == pytest.approx(right, rel=1e-10, abs=1e-12)


def test_shape_mismatch_is_rejected():
    spec = ProblemSpec(np.ones((2, 2)), 0.5)
    with pytest.raises(DimensionMismatchError):
        apply_map(spec, PairedVariable.zeros((2, 3)))
    with pytest.raises(DimensionMismatchError):
        PairedVariable(np.zeros((2, 2)), np.zeros((3, 2)))


def test_project_dual_cone():
    z = DualPoint(-1.0, np.array([[1.0, -2.0]]))
    assert project_dual_cone(z, Cone.ZERO) is z
    projected = project_dual_cone(z, Cone.NONNEGATIVE)
    assert projected.z1 == 0.0
    np.testing.assert_array_equal(projected.Z2, [[1.0, 0.0]])


def test_svd_examples(rng):
    result = svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(result.sigma, [3.0, 1.0])

    ones = svd(np.ones((2, 2)))
    np.testing.assert_allclose(ones.sigma, [2.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(ones.U[:, 0], [1 / math.sqrt(2)] * 2)
    np.testing.assert_allclose(ones.V[:, 0], [1 / math.sqrt(2)] * 2)

    M = rng.standard_normal((6, 4))
    residual = np.linalg.norm(svd(M).reconstruct() - M)
    assert residual <= 1e-8 * np.linalg.norm(M)


def test_truncated_svd_matches_dense(rng):
    M = rng.standard_normal((30, 20))
    dense = svd(M)
    truncated = svd(M, 3)
    assert truncated.rank == 3
    np.testing.assert_allclose(truncated.sigma, dense.sigma[:3], rtol=1e-10)
    np.testing.assert_allclose(np.abs(truncated.U.T @ dense.U[:, :3]), np.eye(3), atol=1e-8)
    assert np.all(np.abs(truncated.U).max(axis=0) == truncated.U.max(axis=0))


def test_spectral_norm(rng):
    assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0)
    assert spectral_norm(np.zeros((3, 2))) == 0.0

    M = rng.standard_normal((7, 5))
    x = np.ones(5)
    for _ in range(2000):
        x = M.T @ (M @ x)
        x /= np.linalg.norm(x)
    assert spectral_norm(M) == pytest.approx(np.linalg.norm(M @ x), rel=1e-8)


def test_theta_norm(rng):
    e11 = np.zeros((3, 3))
    e11[0, 0] = 1.0
    assert theta_norm(ProblemSpec(np.ones((3, 3)), 0.5), e11) == pytest.approx(1.5)
    half = 0.5 * np.ones((2, 2))
    assert theta_norm(ProblemSpec(np.ones((2, 2)), 0.25), half) == pytest.approx(1.5)

    spec = ProblemSpec(np.ones((4, 3)), 0.7)
    X = rng.standard_normal((4, 3))
    expected = np.linalg.svd(X, compute_uv=False).sum() + 0.7 * np.abs(X).sum()
    assert theta_norm(spec, X) == pytest.approx(expected, abs=1e-10)


def test_objective():
    spec = ProblemSpec([[2.0]], 0.5)
    X = PairedVariable([[0.5]], [[0.5]])
    assert objective(spec, X) == pytest.approx(0.75)
    assert feasibility_residual(spec, X) == pytest.approx(0.0)


def test_dual_lower_bound_examples():
    spec = ProblemSpec([[2.0]], 0.5)
    optimum = PairedVariable([[0.5]], [[0.5]])
    assert dual_lower_bound(spec, DualPoint(0.75, [[-0.5]])) == pytest.approx(0.75)
    # twice the optimal multiplier is scaled back into the dual feasible set
    assert dual_lower_bound(spec, DualPoint(1.5, [[-1.0]])) == pytest.approx(0.75)
    assert duality_gap(spec, optimum, DualPoint(0.75, [[-0.5]])) == pytest.approx(0.0, abs=1e-15)


def test_dual_lower_bound_is_weak_duality(rng):
    """
    Given-When-Then:
    - Given random 5x4 instances, random multipliers and the feasible point
      X1 = X2 = A / ||A||_F^2
    - When the dual lower bound is evaluated
    - Then it never exceeds the objective at X
    """
    for _ in range(50):
        A = rng.random((5, 4))
        spec = ProblemSpec(A, rng.uniform(0.1, 2.0))
        X = PairedVariable(A / np.sum(A * A), A / np.sum(A * A))
        z = DualPoint(rng.standard_normal() * 3.0, rng.standard_normal(A.shape))
        assert feasibility_residual(spec, X) == pytest.approx(0.0, abs=1e-12)
        assert dual_lower_bound(spec, z) <= objective(spec, X) + 1e-12
        assert duality_gap(spec, X, z) >= -1e-12


def test_prox_nuclear_examples(rng):
    np.testing.assert_allclose(prox_nuclear(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]))
    M = rng.standard_normal((5, 4))
    assert not np.any(prox_nuclear(M, spectral_norm(M) + 1e-12))


def test_prox_nuclear_optimality(rng):
    """
    Given-When-Then:
    - Given 50 random matrices up to 8x6 and thresholds
    - When prox_nuclear is applied
    - Then M - P is tau times a subgradient of the nuclear norm at P
    """
    for _ in range(50):
        m, n = rng.integers(1, 9), rng.integers(1, 7)
        M = rng.standard_normal((m, n))
        tau = rng.uniform(0.05, 1.5)
        P = prox_nuclear(M, tau)

        G = (M - P) / tau
        assert spectral_norm(G) <= 1.0 + 1e-8
        assert np.vdot(G, P) == pytest.approx(nuclear_norm(P), abs=1e-8)


def test_prox_nuclear_matches_subgradient_descent(rng):
    """
    Given-When-Then:
    - Given 5 random 3x2 matrices and thresholds
    - When ||V||_* + ||V - M||^2 / 2 tau is minimized by subgradient descent with
      steps tau / k
    - Then no iterate beats prox_nuclear and the best one is within 2e-3 of it
    """

    def value(V, M, tau):
        return nuclear_norm(V) + np.linalg.norm(V - M) ** 2 / (2.0 * tau)

    for _ in range(5):
        M = rng.standard_normal((3, 2))
        tau = rng.uniform(0.2, 1.0)
        P = prox_nuclear(M, tau)

        V = np.zeros_like(M)
        best = value(V, M, tau)
        best_V = V
        for k in range(1, 10001):
            U, s, Vt = np.linalg.svd(V, full_matrices=False)
            keep = s > 1e-12
            subgradient = U[:, keep] @ Vt[keep] + (V - M) / tau
            V = V - (tau / k) * subgradient
            current = value(V, M, tau)
            if current < best:
                best, best_V = current, V

        assert value(P, M, tau) <= best + 1e-12
        gap = best - value(P, M, tau)
        assert gap <= 2e-3
        assert np.linalg.norm(best_V - P) <= math.sqrt(2.0 * tau * max(gap, 0.0)) + 1e-9


def test_singular_value_shrink_rank_hint_matches_dense(rng):
    M = rng.standard_normal((40, 30))
    tau = 0.5 * spectral_norm(M)
    dense, dense_sigma = singular_value_shrink(M, tau)
    hinted, hinted_sigma = singular_value_shrink(M, tau, rank_hint=1)
    np.testing.assert_allclose(hinted, dense, atol=1e-8)
    np.testing.assert_allclose(hinted_sigma, dense_sigma, rtol=1e-8)

    zero, sigma = singular_value_shrink(np.zeros((3, 3)), 1.0)
    assert not np.any(zero) and sigma.size == 0
    with pytest.raises(ValueError):
        singular_value_shrink(M, 0.0)


def test_prox_l1_examples():
    np.testing.assert_array_equal(prox_l1(np.array([[2.0, -0.5]]), 1.0), [[1.0, 0.0]])
    M = np.array([[1.0, -3.0], [0.25, 0.0]])
    assert np.all(np.abs(prox_l1(M, 1e-300) - M) <= 1e-300)


def test_prox_l1_subgradient_condition(rng):
    """
    Given-When-Then:
    - Given random entries m and a threshold tau
    - When prox_l1 is applied
    - Then every entry satisfies the optimality condition of tau |x| + (x - m)^2 / 2:
      m - x = tau sign(x) where x != 0, and |m| <= tau where x = 0
    """
    M = rng.standard_normal((6, 5)) * 2.0
    M[0, 0] = 0.7
    tau = 0.7
    P = prox_l1(M, tau)

    nonzero = P != 0
    np.testing.assert_allclose(M[nonzero] - P[nonzero], tau * np.sign(P[nonzero]), atol=1e-12)
    assert np.all(np.abs(M[~nonzero]) <= tau)
    assert np.any(nonzero) and np.any(~nonzero)


def test_prox_nonexpansive(rng):
    """
    Given-When-Then:
    - Given 100 random pairs of 5x4 matrices
    - When either prox is applied to both
    - Then the outputs are no farther apart than the inputs
    """
    for _ in range(100):
        M, N = rng.standard_normal((2, 5, 4))
        tau = rng.uniform(0.1, 2.0)
        distance = np.linalg.norm(M - N)
        assert np.linalg.norm(prox_nuclear(M, tau) - prox_nuclear(N, tau)) <= distance + 1e-10
        assert np.linalg.norm(prox_l1(M, tau) - prox_l1(N, tau)) <= distance + 1e-12


def test_prox_l1_composes(rng):
    M = rng.standard_normal((4, 6)) * 3.0
    for a, b in [(0.2, 0.5), (1.0, 0.3), (0.05, 2.5)]:
        np.testing.assert_allclose(prox_l1(prox_l1(M, a), b), prox_l1(M, a + b), atol=1e-12)


def test_rank_one_approx(rng):
    sigma, u, v = rank_one_approx(np.ones((2, 2)))
    assert sigma == pytest.approx(2.0)
    np.testing.assert_allclose(u, [1 / math.sqrt(2)] * 2)
    np.testing.assert_allclose(v, [1 / math.sqrt(2)] * 2)

    E = np.zeros((3, 3))
    E[0, 1] = 1.0
    sigma, u, v = rank_one_approx(E)
    assert sigma == pytest.approx(1.0)
    np.testing.assert_allclose(u, [1, 0, 0], atol=1e-14)
    np.testing.assert_allclose(v, [0, 1, 0], atol=1e-14)

    M = rng.standard_normal((6, 5))
    sigma, u, v = rank_one_approx(M)
    second = np.linalg.svd(M, compute_uv=False)[1]
    assert spectral_norm(M - sigma * np.outer(u, v)) == pytest.approx(second, abs=1e-8)

    with pytest.raises(ZeroMatrixError):
        rank_one_approx(np.zeros((2, 2)))


def test_lipschitz_modulus_covers_constraint_norm(rng):
    """
    Given-When-Then:
    - Given a square matrix and a tall matrix with ||A||_F much larger than ||A||_2
    - When the Lipschitz modulus is computed
    - Then it is at least lam (||A||_2^2 + 2) and at least lam ||A*A||_2
    """
    for A in (rng.random((3, 3)), np.eye(20)):
        spec = ProblemSpec(A, 0.5)
        L = lipschitz_modulus(spec, 2.0)
        assert L >= 2.0 * (spec.spectral_norm_A**2 + 2.0) - 1e-12

        m, n = A.shape
        operator = np.block(
            [
                [np.outer(A.ravel(), A.ravel()) + np.eye(m * n), -np.eye(m * n)],
                [-np.eye(m * n), np.eye(m * n)],
            ]
        )
        exact = np.linalg.eigvalsh(operator).max()
        assert constraint_norm_sq(spec) == pytest.approx(exact, rel=1e-10)
        assert L >= 2.0 * exact - 1e-9

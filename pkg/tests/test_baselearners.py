"""Base-learner units: linear least squares, grouped factor updates, and
P-spline construction, calibration, and fitting."""

import numpy as np
import pytest

from deboost import (
    BaseLearnerSet,
    DataError,
    Dataset,
    GroupedLinearLearner,
    LearnerSpec,
    LinearLearner,
    PSplineLearner,
    build_learner_set,
    build_pspline,
    calibrate_lambda,
    fit_linear,
    fit_pspline,
    pspline_learner,
    rss,
)


class TestFitLinear:
    def test_exact_interpolation(self):
        np.testing.assert_allclose(fit_linear([0.0, 1.0], [0.0, 1.0]), (0.0, 1.0))

    def test_constant_target(self):
        np.testing.assert_allclose(
            fit_linear([-1.0, 0.0, 1.0], [2.0, 2.0, 2.0]), (2.0, 0.0), atol=1e-14
        )

    def test_three_point_normal_equations(self):
        intercept, slope = fit_linear([0.0, 1.0, 2.0], [1.0, 3.0, 4.0])
        np.testing.assert_allclose((intercept, slope), (7.0 / 6.0, 1.5), rtol=1e-12)

    def test_constant_x_degenerate(self):
        intercept, slope = fit_linear([3.0, 3.0, 3.0], [1.0, 2.0, 3.0])
        assert (intercept, slope) == (2.0, 0.0)
        learner = LinearLearner("x", 0, np.full(3, 3.0))
        assert learner.degenerate

    def test_minimality_under_perturbation(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            x = rng.normal(size=20)
            u = rng.normal(size=20)
            a, b = fit_linear(x, u)
            base = rss(a + b * x, u)
            for da, db in ((1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)):
                assert rss((a + da) + (b + db) * x, u) >= base


class TestRss:
    def test_perfect(self):
        assert rss(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0

    def test_zero_prediction(self):
        assert rss(np.zeros(2), np.ones(2)) == 2.0

    def test_three_point_fit_residual(self):
        x = np.array([0.0, 1.0, 2.0])
        u = np.array([1.0, 3.0, 4.0])
        a, b = fit_linear(x, u)
        np.testing.assert_allclose(rss(a + b * x, u), 1.0 / 6.0, rtol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rss(np.zeros(2), np.zeros(3))


class TestPSplineConstruction:
    def test_partition_of_unity(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-3.0, 5.0, 200)
        learner = build_pspline(x, n_knots=12, degree=3, diff_order=2)
        np.testing.assert_allclose(learner._B.sum(axis=1), 1.0, atol=1e-12)

    def test_basis_dimension(self):
        x = np.linspace(0.0, 1.0, 50)
        learner = build_pspline(x, n_knots=20, degree=3, diff_order=2)
        assert learner.n_coef == 20 + 3 + 1

    def test_degree_one_hat_peaks_at_knot(self):
        # linear B-splines are hat functions: exactly one basis element is 1
        # at an interior knot, all others vanish
        x = np.linspace(0.0, 1.0, 11)
        learner = PSplineLearner("x", 0, x, n_knots=4, degree=1, diff_order=1)
        knot = learner.knots[learner.degree + 2]  # an interior knot
        row = learner.basis(np.array([knot]))[0]
        assert np.isclose(row.max(), 1.0)
        np.testing.assert_allclose(np.sort(row)[:-1], 0.0, atol=1e-12)

    def test_second_difference_matrix(self):
        x = np.linspace(0.0, 1.0, 30)
        learner = PSplineLearner("x", 0, x, n_knots=4, degree=1, diff_order=2)
        # q = 6 here; check the leading rows of D via the penalty D'D against
        # the explicit 2nd-difference matrix
        d = np.diff(np.eye(4), n=2, axis=0)
        np.testing.assert_array_equal(d, [[1.0, -2.0, 1.0, 0.0], [0.0, 1.0, -2.0, 1.0]])
        np.testing.assert_allclose(learner.penalty, np.diff(np.eye(6), n=2, axis=0).T @ np.diff(np.eye(6), n=2, axis=0))

    def test_constant_covariate_rejected(self):
        with pytest.raises(DataError):
            build_pspline(np.full(20, 1.5))


class TestLambdaCalibration:
    @pytest.fixture
    def learner(self):
        rng = np.random.default_rng(42)
        return build_pspline(rng.uniform(0.0, 1.0, 500), n_knots=20, degree=3, diff_order=2)

    def test_unpenalized_df_is_rank(self, learner):
        rank = np.linalg.matrix_rank(learner._B)
        np.testing.assert_allclose(learner.effective_df(0.0), rank, atol=1e-6)

    def test_infinite_penalty_df_is_nullspace_dim(self, learner):
        # the 2nd-order difference penalty leaves linear functions unpenalized
        assert abs(learner.effective_df(1e12) - 2.0) < 1e-3

    def test_df_monotone_in_lambda(self, learner):
        lams = np.logspace(-6, 6, 25)
        dfs = [learner.effective_df(lam) for lam in lams]
        assert np.all(np.diff(dfs) < 0.0)

    def test_calibrated_df_matches_dense_hat_trace(self, learner):
        lam = calibrate_lambda(learner, 4.0)
        B = learner._B
        hat = B @ np.linalg.solve(B.T @ B + lam * learner.penalty, B.T)
        assert abs(np.trace(hat) - 4.0) <= 0.01

    def test_unreachable_target_reports_range(self, learner):
        with pytest.raises(ValueError):
            calibrate_lambda(learner, 0.5)
        with pytest.raises(DataError, match="achievable range"):
            # below the d = 2 penalty null-space dimension, no lambda reaches it
            calibrate_lambda(learner, 1.5)


class TestFitPSpline:
    @pytest.fixture
    def learner(self):
        rng = np.random.default_rng(3)
        lrn = build_pspline(rng.uniform(0.0, 2.0, 300), n_knots=15, degree=3, diff_order=2)
        lrn.set_lambda(1.0)
        return lrn

    def test_zero_target(self, learner):
        np.testing.assert_allclose(fit_pspline(learner, np.zeros(300)), 0.0, atol=1e-14)

    def test_normal_equation_residual(self, learner):
        rng = np.random.default_rng(4)
        u = rng.normal(size=300)
        gamma = fit_pspline(learner, u)
        lhs = (learner._B.T @ learner._B + learner.lam * learner.penalty) @ gamma
        rhs = learner._B.T @ u
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)

    def test_interpolation_when_square(self):
        # n = q with lambda = 0: gamma = B^{-1} u
        n_knots, degree = 4, 2
        q = n_knots + degree + 1
        x = np.linspace(0.0, 1.0, q)
        learner = PSplineLearner("x", 0, x, n_knots=n_knots, degree=degree, diff_order=1)
        rng = np.random.default_rng(5)
        u = rng.normal(size=q)
        gamma = fit_pspline(learner, u)
        np.testing.assert_allclose(gamma, np.linalg.solve(learner._B, u), atol=1e-8)

    def test_penalty_null_space_fits_affine_exactly(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-1.0, 3.0, 400)
        u = 0.7 - 2.3 * x
        for lam in (0.0, 1.0, 1e6):
            learner = build_pspline(x, n_knots=10, degree=3, diff_order=2)
            learner.set_lambda(lam)
            gamma = learner.fit(u)
            assert rss(learner.fitted(gamma), u) <= 1e-8 * float(u @ u)

    def test_gradient_length_mismatch(self, learner):
        with pytest.raises(ValueError):
            fit_pspline(learner, np.zeros(5))


class TestGroupedLearner:
    def test_matches_lstsq(self):
        rng = np.random.default_rng(9)
        X = np.column_stack([rng.integers(0, 2, 60), rng.integers(0, 2, 60)]).astype(float)
        u = rng.normal(size=60)
        learner = GroupedLinearLearner("factor", [0, 1], X)
        coef = learner.fit(u)
        Z = np.column_stack([np.ones(60), X])
        expected, *_ = np.linalg.lstsq(Z, u, rcond=None)
        np.testing.assert_allclose(learner.fitted(coef), Z @ expected, atol=1e-10)

    def test_summary_excludes_intercept(self):
        learner = GroupedLinearLearner("factor", [0, 1])
        assert learner.summary(np.array([5.0, 3.0, 4.0])) == 5.0


class TestBaseLearnerSet:
    def test_fast_path_agrees_with_individual_fits(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(80, 6))
        data = Dataset(X, rng.normal(size=80), [f"x{i}" for i in range(6)])
        lset = build_learner_set(data, LearnerSpec())
        assert lset._fast
        for _ in range(20):
            u = rng.normal(size=80)
            pos, coef = lset.fit_best(u)
            all_rss = lset.rss_all(u)
            assert all_rss[pos] <= all_rss.min() + 1e-9
            np.testing.assert_allclose(coef, lset.learners[pos].fit(u), rtol=1e-10)

    def test_restrict_preserves_order(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(30, 4))
        data = Dataset(X, rng.normal(size=30), ["a", "b", "c", "d"])
        lset = build_learner_set(data, LearnerSpec())
        sub = lset.restrict(["d", "b"])
        assert sub.names == ["b", "d"]

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            BaseLearnerSet([LinearLearner("x", 0), LinearLearner("x", 1)])

    def test_spline_fallback_for_binary_column(self):
        rng = np.random.default_rng(14)
        X = np.column_stack([rng.normal(size=100), rng.integers(0, 2, 100)]).astype(float)
        data = Dataset(X, rng.normal(size=100), ["cont", "bin"])
        with pytest.warns(RuntimeWarning, match="too few distinct"):
            lset = build_learner_set(data, LearnerSpec(kind="pspline"))
        assert lset.learners[0].kind == "pspline"
        assert lset.learners[1].kind == "linear"

    def test_factor_becomes_grouped(self):
        rng = np.random.default_rng(15)
        X = np.column_stack([rng.normal(size=50), rng.integers(0, 2, 50),
                             rng.integers(0, 2, 50)]).astype(float)
        data = Dataset(X, rng.normal(size=50), ["x", "f=b", "f=c"], groups={"f": [1, 2]})
        lset = build_learner_set(data, LearnerSpec())
        assert [l.kind for l in lset.learners] == ["linear", "grouped"]
        assert lset.names == ["x", "f"]

    def test_calibrated_pspline_learner_df(self):
        rng = np.random.default_rng(16)
        x = rng.normal(size=300)
        learner = pspline_learner("x", 0, x, LearnerSpec(kind="pspline"))
        assert abs(learner.effective_df(learner.lam) - 4.0) <= 0.01

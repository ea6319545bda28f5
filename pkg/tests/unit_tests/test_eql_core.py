import itertools
import unittest

import numpy as np

from abm_eql.eql_core import (
    LearnedModel,
    SolverSpec,
    average_models,
    build_library,
    default_grid,
    differentiate,
    fit_report_rows,
    fit_single,
    greedy_fb,
    lasso_fista,
    lasso_objective,
    least_squares,
    prune_and_vote,
    resolve_terms,
    select_hyperparameter,
    soft_threshold,
    solve,
    split_rng,
    split_rows,
    split_tolerance,
)
from abm_eql.errors import ConfigError, NumericalError
from abm_eql.ode_models import logistic_analytic, logistic_rhs, parse_term


def _logistic_data(n=100):
    times = np.linspace(0.0, 3000.0, n)
    return times, logistic_analytic(0.01, 0.005, 0.05, times)


def _ista(a, b, penalty, iterations=5000):
    step = 1.0 / np.linalg.norm(a, 2) ** 2
    w = np.zeros(a.shape[1])
    for _ in range(iterations):
        w = soft_threshold(w - step * (a.T @ (a @ w - b)), step * np.asarray(penalty))
    return w


class TestDifferentiate(unittest.TestCase):
    def test_linear_is_exact(self):
        times = np.linspace(0.0, 4.5, 10)
        deriv = differentiate(times, 2.0 * times)
        np.testing.assert_allclose(deriv.values, 2.0, rtol=0, atol=1e-12)
        self.assertEqual(deriv.schemes[0], "forward")
        self.assertEqual(deriv.schemes[-1], "backward")
        self.assertEqual(set(deriv.schemes[1:-1]), {"centered"})

    def test_quadratic(self):
        times = np.arange(10) * 0.1
        deriv = differentiate(times, times**2)
        np.testing.assert_allclose(deriv.values[1:-1], 2.0 * times[1:-1], atol=1e-12)
        self.assertAlmostEqual(deriv.values[0], 2.0 * times[0] + 0.1, places=12)

    def test_constant_and_linearity(self):
        times = np.linspace(0.0, 1.0, 7)
        np.testing.assert_array_equal(differentiate(times, np.full(7, 0.4)).values, np.zeros(7))
        x, y = np.sin(times), times**3
        lhs = differentiate(times, 2.0 * x + 3.0 * y).values
        rhs = 2.0 * differentiate(times, x).values + 3.0 * differentiate(times, y).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_rejects_short_or_uneven(self):
        with self.assertRaises(ConfigError):
            differentiate([0.0, 1.0], [0.0, 1.0])
        with self.assertRaises(ConfigError):
            differentiate([0.0, 1.0, 3.0], [0.0, 1.0, 2.0])


class TestLibrary(unittest.TestCase):
    def test_constant_trace(self):
        library = build_library({"C": np.full(5, 0.5)}, ["C", "C^2"])
        np.testing.assert_array_equal(library.theta, [[0.5, 0.25]] * 5)
        self.assertEqual(library.labels, ("C", "C^2"))

    def test_correlation_term(self):
        library = build_library({"C": np.array([0.4]), "F": np.array([1.25])}, "modified_logistic")
        self.assertAlmostEqual(library.theta[0, 0], 0.2)
        self.assertAlmostEqual(library.theta[0, 1], 0.4)

    def test_presets_and_lists(self):
        self.assertEqual([t.label for t in resolve_terms("poly4")], ["C", "C^2", "C^3", "C^4"])
        self.assertEqual([t.label for t in resolve_terms("S, S*I")], ["S", "S*I"])
        with self.assertRaises(ConfigError):
            resolve_terms("C,C")

    def test_rejects_constant_and_missing_signals(self):
        with self.assertRaises(ConfigError):
            build_library({"C": np.ones(3)}, ["1", "C"])
        with self.assertRaises(ConfigError):
            build_library({"C": np.ones(3)}, ["C(1-FC)"])
        with self.assertRaises(ConfigError):
            build_library({"C": np.ones(3), "F": np.array([1.0, np.nan, 1.0])}, ["C(1-FC)"])


class TestLeastSquares(unittest.TestCase):
    def test_single_column(self):
        b = np.linspace(0.1, 1.0, 6)
        np.testing.assert_allclose(least_squares(b[:, None], b), [1.0])

    def test_recovers_coefficients(self):
        theta = np.random.default_rng(0).normal(size=(30, 2))
        np.testing.assert_allclose(least_squares(theta, theta @ [2.0, -3.0]), [2.0, -3.0], atol=1e-10)

    def test_underdetermined(self):
        with self.assertRaises(ConfigError):
            least_squares(np.ones((2, 3)), np.ones(2))


class TestLasso(unittest.TestCase):
    def test_zero_lambda_is_least_squares(self):
        rng = np.random.default_rng(1)
        theta = rng.normal(size=(40, 6))
        b = theta @ rng.normal(size=6) + 0.01 * rng.normal(size=40)
        result = lasso_fista(theta, b, 0.0)
        self.assertTrue(result.converged)
        np.testing.assert_allclose(result.coefficients, least_squares(theta, b), atol=1e-6)

    def test_orthonormal_design_soft_thresholds(self):
        rng = np.random.default_rng(2)
        q, _ = np.linalg.qr(rng.normal(size=(20, 4)))
        b = rng.normal(size=20)
        lam = 0.3
        result = lasso_fista(q, b, lam)
        threshold = lam * np.linalg.norm(b)
        np.testing.assert_allclose(result.coefficients, soft_threshold(q.T @ b, threshold), atol=1e-8)
        self.assertAlmostEqual(result.target_norm, np.linalg.norm(b))

    def test_unit_target_threshold_is_lambda(self):
        rng = np.random.default_rng(12)
        q, _ = np.linalg.qr(rng.normal(size=(20, 4)))
        b = q @ [0.8, -0.5, 0.2, 0.05]
        b /= np.linalg.norm(b)
        result = lasso_fista(q, b, 0.1)
        np.testing.assert_allclose(result.coefficients, soft_threshold(q.T @ b, 0.1), atol=1e-8)

    def test_lambda_path_supports_are_nested(self):
        rng = np.random.default_rng(13)
        q, _ = np.linalg.qr(rng.normal(size=(30, 6)))
        b = q @ [2.0, -1.5, 1.0, -0.5, 0.25, 0.1] + 0.01 * rng.normal(size=30)
        previous = None
        for lam in (0.0, 0.02, 0.05, 0.1, 0.2, 0.4, 0.8):
            support = set(np.flatnonzero(lasso_fista(q, b, lam).coefficients).tolist())
            if previous is not None:
                self.assertLessEqual(support, previous)
            previous = support
        self.assertEqual(previous, set())

    def test_objective_and_optimality(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            theta = rng.normal(size=(40, 6)) * rng.uniform(0.1, 10.0, size=6)
            b = rng.normal(size=40)
            lam = rng.uniform(0.01, 0.3)
            result = lasso_fista(theta, b, lam)
            norms = result.column_norms
            target = b / result.target_norm
            reference = _ista(theta / norms, target, lam / norms) / norms
            self.assertLess(abs(result.objective - lasso_objective(theta, target, reference, lam)), 1e-6)
            xi = result.coefficients
            threshold = lam * result.target_norm
            grad = theta.T @ (b - theta @ xi)
            active = xi != 0
            np.testing.assert_allclose(grad[active], threshold * np.sign(xi[active]), atol=1e-4 * threshold)
            self.assertTrue(np.all(np.abs(grad[~active]) <= threshold * (1 + 1e-4)))

    def test_objective_never_increases(self):
        rng = np.random.default_rng(14)
        base = rng.normal(size=(40, 1))
        theta = np.hstack([base + 0.01 * rng.normal(size=(40, 1)) for _ in range(5)])
        b = theta @ [1.0, -1.0, 0.5, 0.0, 0.0] + 0.01 * rng.normal(size=40)
        result = lasso_fista(theta, b, 1e-3)
        trace = np.array(result.objective_trace)
        self.assertEqual(len(trace), result.iterations + 1)
        self.assertTrue(np.all(np.diff(trace) <= 1e-13))
        self.assertAlmostEqual(trace[-1], result.objective, places=10)

    def test_default_coefficients_shrink_least_squares(self):
        rng = np.random.default_rng(15)
        q, _ = np.linalg.qr(rng.normal(size=(25, 4)))
        b = q @ [1.0, -0.6, 0.3, 0.1] + 0.01 * rng.normal(size=25)
        spec = SolverSpec(kind="lasso", lam=0.1)
        self.assertFalse(spec.debias)
        lasso = solve(q, b, spec)
        ls = least_squares(q, b)
        active = lasso != 0
        self.assertTrue(np.all(np.abs(lasso) <= np.abs(ls) + 1e-12))
        self.assertTrue(np.all(np.sign(lasso[active]) == np.sign(ls[active])))
        self.assertTrue(np.all(np.abs(lasso[active]) < np.abs(ls[active])))
        refit = solve(q, b, SolverSpec(kind="lasso", lam=0.1, debias=True))
        np.testing.assert_allclose(refit[active], ls[active], atol=1e-10)

    def test_l1_norm_below_least_squares(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            theta = rng.normal(size=(30, 4)) * rng.uniform(0.5, 2.0, size=4)
            b = rng.normal(size=30)
            xi = lasso_fista(theta, b, rng.uniform(0.01, 0.2)).coefficients
            self.assertLessEqual(np.abs(xi).sum(), np.abs(least_squares(theta, b)).sum() + 1e-8)

    def test_logistic_sparsity_pattern(self):
        times, c = _logistic_data()
        library = build_library({"C": c}, "poly4")
        xi = lasso_fista(library.theta, differentiate(times, c).values, 4e-4).coefficients
        self.assertEqual((xi != 0).tolist(), [True, True, False, False])
        np.testing.assert_allclose(xi[:2], [0.005, -0.01], rtol=0.01)

    def test_large_lambda_gives_zero(self):
        rng = np.random.default_rng(4)
        theta = rng.normal(size=(10, 3))
        b = rng.normal(size=10)
        lam = 2.0 * np.max(np.abs(theta.T @ b)) / np.linalg.norm(b)
        np.testing.assert_array_equal(lasso_fista(theta, b, lam).coefficients, np.zeros(3))

    def test_debias_refits_support(self):
        rng = np.random.default_rng(5)
        theta = rng.normal(size=(30, 3))
        b = theta @ [1.5, 0.0, 0.0] + 0.01 * rng.normal(size=30)
        result = lasso_fista(theta, b, 0.5, debias=True)
        self.assertEqual(np.flatnonzero(result.coefficients).tolist(), [0])
        self.assertAlmostEqual(result.coefficients[0], least_squares(theta[:, :1], b)[0], places=10)

    def test_zero_column(self):
        theta = np.column_stack([np.ones(5), np.zeros(5)])
        with self.assertRaises(NumericalError):
            lasso_fista(theta, np.ones(5), 0.1)


class TestGreedy(unittest.TestCase):
    def test_single_exact_column(self):
        theta = np.random.default_rng(6).normal(size=(20, 4))
        xi = greedy_fb(theta, 5.0 * theta[:, 2], tol=1e-6)
        self.assertEqual(np.flatnonzero(xi).tolist(), [2])
        self.assertAlmostEqual(xi[2], 5.0, places=10)

    def test_agrees_with_best_subset(self):
        rng = np.random.default_rng(7)
        tol = 0.5
        agree = 0
        for _ in range(100):
            theta = rng.normal(size=(20, 4))
            truth = np.zeros(4)
            support = rng.choice(4, size=rng.integers(1, 4), replace=False)
            truth[support] = rng.uniform(1.0, 2.0, size=support.size) * rng.choice([-1.0, 1.0], size=support.size)
            b = theta @ truth + 0.05 * rng.normal(size=20)
            best, best_score = (), None
            for k in range(5):
                for subset in itertools.combinations(range(4), k):
                    xi = np.zeros(4)
                    if subset:
                        xi[list(subset)] = np.linalg.lstsq(theta[:, list(subset)], b, rcond=None)[0]
                    score = np.linalg.norm(b - theta @ xi) + tol * k
                    if best_score is None or score < best_score:
                        best, best_score = subset, score
            agree += tuple(np.flatnonzero(greedy_fb(theta, b, tol))) == best
        self.assertGreaterEqual(agree, 90)

    def test_logistic_recovery(self):
        times, c = _logistic_data()
        library = build_library({"C": c}, "poly4")
        xi = greedy_fb(library.theta, differentiate(times, c).values, tol=1e-4)
        self.assertEqual(np.flatnonzero(xi).tolist(), [0, 1])
        np.testing.assert_allclose(xi[:2], [0.005, -0.01], rtol=0.05)

    def test_column_order_invariance(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            theta = rng.normal(size=(25, 5))
            b = theta @ [1.5, 0.0, -2.0, 0.0, 0.7] + 0.05 * rng.normal(size=25)
            xi = greedy_fb(theta, b, tol=0.3)
            perm = rng.permutation(5)
            permuted = greedy_fb(theta[:, perm], b, tol=0.3)
            np.testing.assert_allclose(permuted, xi[perm], atol=1e-10)

    def test_tie_goes_to_lowest_index(self):
        x = np.linspace(0.1, 1.0, 12)
        theta = np.column_stack([x**2, x, x, x**3])
        xi = greedy_fb(theta, 2.0 * x, tol=1e-6)
        self.assertEqual(np.flatnonzero(xi).tolist(), [1])
        self.assertAlmostEqual(xi[1], 2.0, places=10)

    def test_rejects_non_positive_tol(self):
        with self.assertRaises(ConfigError):
            greedy_fb(np.ones((4, 1)), np.ones(4), 0.0)


class TestSolverSpec(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(ConfigError):
            SolverSpec(kind="greedy")
        with self.assertRaises(ConfigError):
            SolverSpec(kind="lasso", tol=1e-4)
        with self.assertRaises(ConfigError):
            SolverSpec(kind="least_squares", lam=0.1)
        with self.assertRaises(ConfigError):
            SolverSpec(kind="ridge")
        with self.assertRaises(ConfigError):
            SolverSpec(kind="greedy", tol=1e-4, n_splits=0)

    def test_describe(self):
        desc = SolverSpec(kind="lasso").describe()
        self.assertEqual(desc["grid_count"], 101)
        self.assertEqual(desc["grid_min"], 0.0)
        self.assertEqual(SolverSpec(kind="greedy", tol=1e-4).describe()["tol"], 1e-4)

    def test_default_grid(self):
        grid = default_grid()
        self.assertEqual(len(grid), 101)
        self.assertEqual(grid[0], 0.0)
        self.assertAlmostEqual(grid[1], 1e-5)
        self.assertAlmostEqual(grid[-1], 1e-3)


class TestSplitsAndSelection(unittest.TestCase):
    def test_split_rows(self):
        train, test = split_rows(7, split_rng(0, 0))
        self.assertEqual((len(train), len(test)), (4, 3))
        self.assertEqual(sorted(np.concatenate([train, test]).tolist()), list(range(7)))
        again, _ = split_rows(7, split_rng(0, 0))
        np.testing.assert_array_equal(train, again)

    def test_noiseless_data_selects_zero(self):
        rng = np.random.default_rng(8)
        theta = rng.normal(size=(40, 3))
        b = theta @ [1.0, -2.0, 0.5]
        self.assertEqual(select_hyperparameter(theta, b, default_grid(), seed=1), 0.0)

    def test_singleton_grid(self):
        rng = np.random.default_rng(9)
        theta = rng.normal(size=(20, 3))
        self.assertEqual(select_hyperparameter(theta, rng.normal(size=20), [0.25], seed=2), 0.25)

    def test_too_few_rows(self):
        with self.assertRaises(ConfigError):
            select_hyperparameter(np.ones((3, 1)), np.ones(3), [0.0], seed=0)


class TestPruneAndVote(unittest.TestCase):
    def setUp(self):
        _, c = _logistic_data()
        self.library = build_library({"C": c}, "poly4")
        self.b = logistic_rhs(c, 0.01, 0.005)

    def test_exact_logistic_wins_every_split(self):
        model = prune_and_vote(self.library, self.b, SolverSpec(kind="greedy", tol=1e-6), seed=3)
        self.assertEqual(model.form, ("C", "C^2"))
        self.assertEqual(model.votes, 10)
        np.testing.assert_allclose(model.coefficients[:2], [0.005, -0.01], rtol=0.01)
        self.assertEqual(len(model.splits), 10)

    def test_greedy_splits_keep_the_full_data_form(self):
        times, c = _logistic_data()
        library = build_library({"C": c}, "poly4")
        b = differentiate(times, c).values
        for seed in range(3):
            model = prune_and_vote(library, b, SolverSpec(kind="greedy", tol=5e-5), seed=seed)
            self.assertEqual(model.votes, 10)
            self.assertEqual(model.form, ("C", "C^2"))

    def test_split_tolerance_follows_training_norm(self):
        times, c = _logistic_data()
        library = build_library({"C": c}, "poly4")
        b = differentiate(times, c).values
        model = prune_and_vote(library, b, SolverSpec(kind="greedy", tol=1e-4, n_splits=4), seed=2)
        for record in model.splits:
            train, _ = split_rows(len(b), split_rng(2, record.split_id))
            expected = 1e-4 * np.linalg.norm(b[train]) / np.linalg.norm(b)
            self.assertAlmostEqual(record.tol, expected, places=15)
            self.assertLess(record.tol, 1e-4)
        self.assertEqual(split_tolerance(1e-4, b, b), 1e-4)
        self.assertEqual(split_tolerance(1e-4, np.zeros(3), np.zeros(5)), 1e-4)

    def test_reproducible(self):
        spec = SolverSpec(kind="greedy", tol=1e-6, n_splits=4)
        a = prune_and_vote(self.library, self.b, spec, seed=5)
        b = prune_and_vote(self.library, self.b, spec, seed=5)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)

    def test_fit_report_rows(self):
        model = prune_and_vote(self.library, self.b, SolverSpec(kind="greedy", tol=1e-6, n_splits=3), seed=0)
        rows = fit_report_rows(model)
        self.assertEqual(len(rows), 3)
        self.assertEqual(list(rows[0]), ["split_id", "lambda", "form", "C", "C^2", "C^3", "C^4", "test_residual"])
        self.assertEqual(rows[0]["form"], "C+C^2")

    def test_fit_single_needs_lambda(self):
        with self.assertRaises(ConfigError):
            fit_single(self.library, self.b, SolverSpec(kind="lasso"))
        model = fit_single(self.library, self.b, SolverSpec(kind="least_squares"))
        np.testing.assert_allclose(model.coefficients, [0.005, -0.01, 0.0, 0.0], atol=1e-9)


class TestAveraging(unittest.TestCase):
    def test_absent_terms_count_as_zero(self):
        terms = tuple(parse_term(label) for label in ("C", "C^2"))
        models = [
            LearnedModel(terms, np.array([1.0, 0.0])),
            LearnedModel(terms, np.array([3.0, -2.0])),
        ]
        averaged, spread = average_models(models)
        np.testing.assert_allclose(averaged.coefficients, [2.0, -1.0])
        self.assertEqual(spread["C"].minimum, 1.0)
        self.assertEqual(spread["C"].maximum, 3.0)
        self.assertAlmostEqual(spread["C^2"].iqr, 1.0)

    def test_rejects_mismatched_libraries(self):
        a = LearnedModel((parse_term("C"),), np.array([1.0]))
        b = LearnedModel((parse_term("C^2"),), np.array([1.0]))
        with self.assertRaises(ConfigError):
            average_models([a, b])
        with self.assertRaises(ConfigError):
            average_models([])


if __name__ == '__main__':
    unittest.main()

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from beamspace.exceptions import (
    DegenerateInputError,
    DegenerateStepError,
    InvalidDimensionError,
    TopKRangeError,
)
from beamspace.sensing import bernoulli_matrix
from beamspace.trr_solvers import (
    TrrProblem,
    bb_step,
    gradient,
    initial_point,
    itrr,
    itrr_bb,
    itrr_nesterov,
    lift,
    lift_matrix,
    lipschitz_constant,
    objective,
    omp,
    pgd_lasso,
    pgd_ridge,
    top_k2_norm,
    trim_top_k,
    unlift,
)


def random_problem(m=6, n=10, rho=1.0, top_k=3, seed=0):
    rng = np.random.default_rng(seed)
    phi = bernoulli_matrix(m, n, rng)
    y = rng.standard_normal(m)
    return phi, y, TrrProblem.from_phi(phi, y, rho=rho, top_k=top_k)


def ridge_oracle(phi, y, lambda2):
    """Closed form of argmin 1/2 ||y - Phi x||^2 + lambda2 ||x||^2."""
    p = phi.entries
    return np.linalg.solve(p.T @ p + 2.0 * lambda2 * np.eye(p.shape[1]), p.T @ y)


class TopKOperatorTests(SimpleTestCase):

    def test_top_k2_norm_example(self):
        self.assertEqual(top_k2_norm(np.array([3.0, -1.0, 2.0]), 2), 13.0)

    def test_top_k2_norm_edges(self):
        x = np.array([0.3, -4.0, 1.5, 2.0])
        self.assertEqual(top_k2_norm(x, 0), 0.0)
        self.assertAlmostEqual(top_k2_norm(x, 4), float(np.dot(x, x)), places=14)

    def test_top_k2_norm_matches_subset_search(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(6)
        for k in range(7):
            best = max(
                (sum(x[i] ** 2 for i in range(6) if mask >> i & 1)
                 for mask in range(64) if bin(mask).count("1") == k),
            )
            self.assertAlmostEqual(top_k2_norm(x, k), best, places=12)

    def test_trim_example(self):
        assert_array_equal(trim_top_k(np.array([0.5, 2.0, 0.0, 1.0]), 2), [0.0, 2.0, 0.0, 1.0])

    def test_trim_edges(self):
        z = np.array([0.5, 2.0, 0.0, 1.0])
        assert_array_equal(trim_top_k(z, 0), np.zeros(4))
        assert_array_equal(trim_top_k(z, 4), z)

    def test_k_out_of_range(self):
        with self.assertRaises(TopKRangeError):
            trim_top_k(np.ones(3), 4)
        with self.assertRaises(TopKRangeError):
            top_k2_norm(np.ones(3), -1)


class LiftTests(SimpleTestCase):

    def test_lift_round_trip(self):
        x = np.array([1.5, -2.0, 0.0, 0.25])
        z = lift(x)
        assert_array_equal(z, [1.5, 0.0, 0.0, 0.25, 0.0, 2.0, 0.0, 0.0])
        assert_array_equal(unlift(z), x)

    def test_lifted_product_matches(self):
        rng = np.random.default_rng(1)
        phi = bernoulli_matrix(5, 7, rng)
        x = rng.standard_normal(7)
        assert_allclose(lift_matrix(phi) @ lift(x), phi.entries @ x, atol=1e-12)

    def test_batch_unlift(self):
        z = np.arange(12, dtype=float).reshape(2, 6)
        assert_array_equal(unlift(z), z[:, :3] - z[:, 3:])

    def test_initial_point(self):
        phi, y, problem = random_problem()
        assert_allclose(initial_point(problem), lift(phi.entries.T @ y))
        assert_array_equal(initial_point(problem, "zero"), np.zeros(20))
        with self.assertRaises(InvalidDimensionError):
            initial_point(problem, "random")

    def test_top_k_bounded_by_lifted_length(self):
        phi = bernoulli_matrix(4, 5, np.random.default_rng(0))
        with self.assertRaises(TopKRangeError):
            TrrProblem.from_phi(phi, np.zeros(4), top_k=11)

    def test_lift_preserves_norm_and_top_k_energy(self):
        rng = np.random.default_rng(21)
        for n in (1, 4, 9):
            x = rng.standard_normal(n)
            z = lift(x)
            self.assertAlmostEqual(np.linalg.norm(z), np.linalg.norm(x), places=12)
            for k in range(n + 1):
                self.assertAlmostEqual(top_k2_norm(z, k), top_k2_norm(x, k), places=12, msg=f"n={n} k={k}")


class ObjectiveGradientTests(SimpleTestCase):

    def test_objective_at_zero(self):
        _, y, problem = random_problem()
        self.assertAlmostEqual(objective(problem, np.zeros(20)), 0.5 * float(np.dot(y, y)), places=12)

    def test_full_k_drops_regularizer(self):
        phi, y, _ = random_problem()
        problem = TrrProblem.from_phi(phi, y, rho=2.0, top_k=20)
        z = np.abs(np.random.default_rng(3).standard_normal(20))
        residual = y - problem.a_matrix @ z
        self.assertAlmostEqual(objective(problem, z), 0.5 * float(np.dot(residual, residual)), places=12)
        assert_allclose(gradient(problem, z), problem.a_matrix.T @ (problem.a_matrix @ z - y), atol=1e-13)

    def test_objective_matches_scalar_loop(self):
        rng = np.random.default_rng(8)
        phi = bernoulli_matrix(2, 3, rng)
        y = rng.standard_normal(2)
        problem = TrrProblem.from_phi(phi, y, rho=1.0, top_k=2)
        z = np.abs(rng.standard_normal(6))

        a = problem.a_matrix
        data_term = 0.0
        for i in range(2):
            r = y[i]
            for j in range(6):
                r -= a[i, j] * z[j]
            data_term += r * r
        total = sum(v * v for v in z)
        top = sorted((v * v for v in z), reverse=True)[:2]
        expected = 0.5 * data_term + 1.0 * (total - sum(top))

        self.assertAlmostEqual(objective(problem, z), expected, delta=1e-12)

    def test_gradient_at_zero_without_trim(self):
        phi, y, _ = random_problem()
        problem = TrrProblem.from_phi(phi, y, rho=1.0, top_k=0)
        assert_allclose(gradient(problem, np.zeros(20)), -problem.a_matrix.T @ y, atol=1e-14)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        for seed in range(100):
            m, n = int(rng.integers(3, 9)), int(rng.integers(4, 13))
            top_k = int(rng.integers(0, 2 * n + 1))
            _, _, problem = random_problem(m=m, n=n, rho=float(rng.uniform(0.05, 2.0)), top_k=top_k, seed=seed)
            # distinct magnitudes keep the top-K set fixed inside the stencil
            z = rng.permutation(np.linspace(0.1, 2.0, 2 * n))
            h = 1e-4
            numeric = np.zeros(2 * n)
            for i in range(2 * n):
                step = np.zeros(2 * n)
                step[i] = h
                numeric[i] = (objective(problem, z + step) - objective(problem, z - step)) / (2 * h)
            assert_allclose(gradient(problem, z), numeric, rtol=1e-6, atol=1e-6, err_msg=f"seed={seed}")


class LipschitzTests(SimpleTestCase):

    def test_identity(self):
        self.assertAlmostEqual(lipschitz_constant(np.eye(5)), 1.001, places=12)

    def test_scaled_identity(self):
        self.assertAlmostEqual(lipschitz_constant(2.0 * np.eye(5)), 4.004, places=12)

    def test_matches_dense_eigensolver(self):
        a = np.random.default_rng(6).standard_normal((8, 12))
        expected = float(np.linalg.eigvalsh(a.T @ a).max()) * 1.001
        self.assertAlmostEqual(lipschitz_constant(a) / expected, 1.0, delta=1e-6)

    def test_lifted_constant_doubles(self):
        phi = bernoulli_matrix(6, 10, np.random.default_rng(2))
        ratio = lipschitz_constant(lift_matrix(phi)) / lipschitz_constant(phi.entries)
        self.assertAlmostEqual(ratio, 2.0, delta=1e-6)

    def test_zero_matrix(self):
        with self.assertRaises(DegenerateInputError):
            lipschitz_constant(np.zeros((3, 4)))


class BbStepTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.z = rng.standard_normal(6)
        self.z_prev = rng.standard_normal(6)
        self.c = rng.standard_normal(6)

    def test_identity_hessian(self):
        step = bb_step(self.z, self.z_prev, self.z - self.c, self.z_prev - self.c, fallback=0.1)
        self.assertAlmostEqual(step, 1.0, places=12)

    def test_hessian_four(self):
        step = bb_step(self.z, self.z_prev, 4 * self.z - self.c, 4 * self.z_prev - self.c, fallback=0.1)
        self.assertAlmostEqual(step, 0.25, places=12)

    def test_negative_curvature_falls_back(self):
        z, z_prev = np.array([1.0, 0.0]), np.array([0.0, 0.0])
        g, g_prev = np.array([-1.0, 0.0]), np.array([0.0, 0.0])
        self.assertEqual(bb_step(z, z_prev, g, g_prev, fallback=0.2), 0.2)

    def test_identical_iterates(self):
        with self.assertRaises(DegenerateStepError):
            bb_step(self.z, self.z.copy(), self.z, self.z_prev, fallback=0.1)


class TrimmedRidgeSolverTests(SimpleTestCase):

    def test_zero_measurement_is_a_fixed_point(self):
        phi = bernoulli_matrix(6, 10, np.random.default_rng(0))
        problem = TrrProblem.from_phi(phi, np.zeros(6), rho=1.0, top_k=3)
        for solver in (itrr, itrr_bb, itrr_nesterov):
            report = solver(problem, z0=np.zeros(20), eps=1e-10, max_iter=50)
            self.assertTrue(report.converged, msg=solver.__name__)
            self.assertEqual(report.iterations_run, 1)
            assert_array_equal(report.solution, np.zeros(10))

    def test_itrr_objective_never_increases(self):
        for seed in range(10):
            _, _, problem = random_problem(m=8, n=16, rho=0.5, top_k=5, seed=seed)
            report = itrr(problem, eps=1e-12, max_iter=300)
            trace = np.array(report.objective_trace)
            self.assertTrue(np.all(np.diff(trace) <= 1e-12), msg=f"seed={seed}")

    def test_sparse_lift_is_a_fixed_point(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            phi = bernoulli_matrix(12, 24, rng)
            x = np.zeros(24)
            x[rng.choice(24, 3, replace=False)] = rng.standard_normal(3)
            y = phi.entries @ x
            for top_k in (3, 5):
                problem = TrrProblem.from_phi(phi, y, rho=1.0, top_k=top_k)
                assert_allclose(gradient(problem, lift(x)), np.zeros(48), atol=1e-12)
                for solver in (itrr, itrr_bb, itrr_nesterov):
                    report = solver(problem, z0=lift(x), eps=1e-12, max_iter=5)
                    msg = f"{solver.__name__} seed={seed} K={top_k}"
                    self.assertTrue(report.converged, msg=msg)
                    self.assertEqual(report.iterations_run, 1, msg=msg)
                    assert_allclose(report.solution, x, atol=1e-13, err_msg=msg)

    def test_itrr_bb_objective_never_increases_on_sparse_instances(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            phi = bernoulli_matrix(16, 32, rng)
            x = np.zeros(32)
            x[rng.choice(32, 4, replace=False)] = rng.standard_normal(4)
            for rho in (1.0, 0.1):
                problem = TrrProblem.from_phi(phi, phi.entries @ x, rho=rho, top_k=4)
                report = itrr_bb(problem, eps=1e-14, max_iter=400, label=x)
                trace = np.array(report.objective_trace)
                self.assertTrue(np.all(np.diff(trace) <= 1e-12), msg=f"seed={seed} rho={rho}")

    def test_trace_lengths(self):
        phi, y, problem = random_problem(seed=3)
        label = np.random.default_rng(3).standard_normal(10)
        report = itrr_bb(problem, eps=1e-9, max_iter=40, label=label)
        self.assertEqual(len(report.objective_trace), report.iterations_run + 1)
        self.assertEqual(len(report.error_trace), report.iterations_run + 1)
        self.assertEqual(len(report.norm_trace), report.iterations_run + 1)
        self.assertAlmostEqual(report.norm_trace[-1], float(np.linalg.norm(report.solution)), places=12)

    def test_no_label_no_error_trace(self):
        _, _, problem = random_problem(seed=4)
        self.assertIsNone(itrr(problem, max_iter=5).error_trace)

    def test_max_iter_cap(self):
        _, _, problem = random_problem(seed=5)
        report = itrr(problem, eps=1e-300, max_iter=7)
        self.assertFalse(report.converged)
        self.assertEqual(report.iterations_run, 7)

    def test_eps_must_be_positive(self):
        _, _, problem = random_problem()
        with self.assertRaises(InvalidDimensionError):
            itrr(problem, eps=0.0)
        with self.assertRaises(InvalidDimensionError):
            itrr_bb(problem, eps=-1.0)

    def test_zero_trim_matches_ridge_closed_form(self):
        phi, y, _ = random_problem(m=6, n=10, seed=9)
        expected = ridge_oracle(phi, y, 0.5)
        problem = TrrProblem.from_phi(phi, y, rho=0.5, top_k=0)
        for solver in (itrr, itrr_bb):
            report = solver(problem, eps=1e-13, max_iter=20_000)
            assert_allclose(report.solution, expected, atol=1e-6, err_msg=solver.__name__)
        # momentum without restart rings around the minimizer for a while
        report = itrr_nesterov(problem, eps=1e-13, max_iter=20_000)
        assert_allclose(report.solution, expected, atol=1e-3)


class BaselineSolverTests(SimpleTestCase):

    def test_ridge_without_penalty_inverts(self):
        rng = np.random.default_rng(2)
        phi = np.eye(4) + 0.2 * rng.standard_normal((4, 4))
        y = rng.standard_normal(4)
        report = pgd_ridge(phi, y, lambda2=0.0, eps=1e-15, max_iter=20_000)
        assert_allclose(report.solution, np.linalg.solve(phi, y), atol=1e-8)

    def test_ridge_matches_closed_form(self):
        phi, y, _ = random_problem(m=6, n=10, seed=11)
        for rule in ("fixed", "bb"):
            report = pgd_ridge(phi, y, lambda2=0.5, step_rule=rule, eps=1e-14, max_iter=20_000)
            assert_allclose(report.solution, ridge_oracle(phi, y, 0.5), atol=1e-8, err_msg=rule)

    def test_heavy_ridge_shrinks(self):
        phi, y, _ = random_problem(seed=6)
        report = pgd_ridge(phi, y, lambda2=1e6, step_rule="fixed", eps=1e-14, max_iter=1000)
        self.assertLess(np.linalg.norm(report.solution), 1e-3 * np.linalg.norm(phi.entries.T @ y))

    def test_ridge_step_list_limits_iterations(self):
        phi, y, _ = random_problem(seed=7)
        report = pgd_ridge(phi, y, lambda2=0.5, step_rule=[0.05] * 4, eps=0.0, mixing=0.5)
        self.assertEqual(report.iterations_run, 4)

    def test_ridge_unknown_rule(self):
        phi, y, _ = random_problem()
        with self.assertRaises(InvalidDimensionError):
            pgd_ridge(phi, y, lambda2=1.0, step_rule="armijo")

    def test_lasso_without_penalty_is_least_squares(self):
        rng = np.random.default_rng(4)
        phi = rng.standard_normal((12, 4)) / np.sqrt(12)
        x = rng.standard_normal(4)
        y = phi @ x
        report = pgd_lasso(phi, y, lambda1=0.0, eps=1e-15, max_iter=20_000)
        assert_allclose(report.solution, np.linalg.lstsq(phi, y, rcond=None)[0], atol=1e-6)

    def test_lasso_zero_threshold(self):
        phi, y, _ = random_problem(seed=8)
        threshold = float(np.max(np.abs(2 * phi.entries.T @ y)))
        report = pgd_lasso(phi, y, lambda1=threshold, z0=np.zeros(20), eps=1e-12, max_iter=100)
        assert_array_equal(report.solution, np.zeros(10))

    def test_lasso_negative_penalty(self):
        phi, y, _ = random_problem()
        with self.assertRaises(InvalidDimensionError):
            pgd_lasso(phi, y, lambda1=-1.0)


class OmpTests(SimpleTestCase):

    def test_single_atom(self):
        phi = bernoulli_matrix(64, 32, np.random.default_rng(1))
        y = 2.0 * phi.entries[:, 3]
        x_hat = omp(phi, y, sparsity=1)
        self.assertEqual(list(np.flatnonzero(x_hat)), [3])
        self.assertAlmostEqual(x_hat[3], 2.0, places=12)

    def test_zero_measurement(self):
        phi = bernoulli_matrix(8, 16, np.random.default_rng(1))
        assert_array_equal(omp(phi, np.zeros(8), sparsity=4), np.zeros(16))

    def test_exact_sparse_recovery(self):
        rng = np.random.default_rng(21)
        phi = bernoulli_matrix(64, 128, rng)
        support = np.array([5, 40, 77, 120])
        x = np.zeros(128)
        x[support] = rng.choice([-1.0, 1.0], 4) * rng.uniform(1.0, 2.0, 4)
        x_hat = omp(phi, phi.entries @ x, sparsity=4)
        assert_array_equal(np.flatnonzero(x_hat), support)
        self.assertLess(np.linalg.norm(x - x_hat), 1e-8)

    def test_sparsity_range(self):
        phi = bernoulli_matrix(4, 8, np.random.default_rng(0))
        with self.assertRaises(InvalidDimensionError):
            omp(phi, np.ones(4), sparsity=5)

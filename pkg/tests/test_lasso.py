import numpy as np
import numpy.testing as npt
import pytest

from stlab.datagen import Dataset, make_regression_dataset, make_sparse_beta
from stlab.lasso import (
    LassoConvergenceError,
    LassoProblem,
    incoherence_check,
    kkt_violation,
    lambda_schedule,
    lasso_solve,
    objective,
    st_decomposed_fit,
    target_lasso_fit,
)
from stlab.numerics import NumericsError, SeededRng
from stlab.oracles import NoisyLinearEval, linear_test_error


def exhaustive_lasso(p: LassoProblem):
    """Global LASSO optimum by enumerating every sign pattern (d <= 8).

    Any optimum is stationary for its own sign pattern, so solving the
    stationarity system for every pattern and keeping the best true
    objective recovers the global minimum.
    """
    n, d = p.A.shape
    best_x = np.zeros(d)
    best_obj = objective(p, best_x)
    for signs in np.ndindex(*([3] * d)):
        sigma = np.array(signs, dtype=float) - 1.0  # entries in {-1, 0, 1}
        support = np.flatnonzero(sigma != 0.0)
        if support.size == 0:
            continue
        a_s = p.A[:, support]
        gram = a_s.T @ a_s
        if np.linalg.matrix_rank(gram) < support.size:
            continue
        rhs = a_s.T @ p.b - 0.5 * p.n_samples * p.lam * sigma[support]
        x_s = np.linalg.solve(gram, rhs)
        x = np.zeros(d)
        x[support] = x_s
        obj = objective(p, x)
        if obj < best_obj:
            best_obj, best_x = obj, x
    return best_x, best_obj


def random_problem(gen, d=None, n=None, lam=None):
    d = d or int(gen.integers(2, 9))
    n = n or int(gen.integers(d, d + 6))
    a = gen.standard_normal((n, d))
    b = gen.standard_normal(n)
    lam = lam if lam is not None else float(gen.uniform(0.01, 1.0))
    return LassoProblem(A=a, b=b, lam=lam, n_samples=n)


class TestLassoSolve:
    def test_lambda_zero_square_invertible_is_exact_solve(self):
        gen = np.random.default_rng(0)
        a = gen.standard_normal((5, 5)) + 3 * np.eye(5)
        b = gen.standard_normal(5)
        p = LassoProblem(A=a, b=b, lam=0.0, n_samples=5)
        x = lasso_solve(p, tol=1e-12)
        npt.assert_allclose(x, np.linalg.solve(a, b), atol=1e-8)

    def test_full_shrinkage_threshold(self):
        gen = np.random.default_rng(1)
        a = gen.standard_normal((6, 4))
        b = gen.standard_normal(6)
        lam = (2.0 / 6) * np.max(np.abs(a.T @ b)) * 1.0001
        p = LassoProblem(A=a, b=b, lam=lam, n_samples=6)
        npt.assert_array_equal(lasso_solve(p), 0.0)

    def test_one_dimensional_soft_threshold(self):
        p = LassoProblem(A=np.array([[1.0]]), b=np.array([1.0]), lam=1.0, n_samples=1)
        npt.assert_allclose(lasso_solve(p), [0.5], atol=1e-12)

    def test_kkt_certificate_on_random_problems(self):
        gen = np.random.default_rng(2)
        for _ in range(20):
            p = random_problem(gen)
            x = lasso_solve(p, tol=1e-12)
            assert kkt_violation(p, x) < 1e-8

    def test_matches_exhaustive_oracle(self):
        gen = np.random.default_rng(3)
        for _ in range(15):
            p = random_problem(gen, d=int(gen.integers(2, 7)))
            x = lasso_solve(p, tol=1e-12)
            _, best_obj = exhaustive_lasso(p)
            assert objective(p, x) <= best_obj + 1e-6

    def test_objective_non_increasing_across_sweeps(self):
        gen = np.random.default_rng(4)
        a = gen.standard_normal((12, 8))
        a[:, 1] = a[:, 0] + 0.1 * gen.standard_normal(12)  # correlated columns
        b = gen.standard_normal(12)
        p = LassoProblem(A=a, b=b, lam=0.02, n_samples=12)
        history = []
        lasso_solve(p, tol=1e-12, sweep_objectives=history)
        assert len(history) >= 3
        diffs = np.diff(history)
        assert np.all(diffs <= 1e-12 * max(1.0, history[0]))

    def test_nonconvergence_raises_with_kkt(self):
        gen = np.random.default_rng(5)
        p = random_problem(gen, d=6, n=8, lam=0.01)
        with pytest.raises(LassoConvergenceError) as exc:
            lasso_solve(p, tol=1e-14, max_iters=1)
        assert exc.value.kkt >= 0

    def test_high_dimensional_underdetermined(self):
        # d >> n exercises the working-set growth path
        gen = np.random.default_rng(6)
        a = gen.standard_normal((20, 400))
        truth = np.zeros(400)
        truth[:3] = (2.0, -1.5, 1.0)
        b = a @ truth + 0.01 * gen.standard_normal(20)
        p = LassoProblem(A=a, b=b, lam=0.1, n_samples=20)
        x = lasso_solve(p, tol=1e-12)
        assert kkt_violation(p, x) < 1e-8
        assert set(np.flatnonzero(np.abs(x) > 0.5)) == {0, 1, 2}


class TestLambdaSchedule:
    def test_plug_in_value(self):
        # gamma=1, K_x=1, sigma=1, ||beta_i||=1, ln(d_x)=1, n=400 -> 20/sqrt(400)
        lam = lambda_schedule(1.0, 1.0, 1.0, d_x=np.e, n_samples=400, sigma_eps=1.0)
        npt.assert_allclose(lam, 1.0, rtol=1e-12)

    def test_formula_direct(self):
        lam = lambda_schedule(2.0, 0.5, 1.5, d_x=100, n_samples=50, sigma_eps=0.3)
        expect = (20.0 / 0.5) * np.sqrt(np.log(100) * 0.09 * 4.0 * 1.5 / 50)
        npt.assert_allclose(lam, expect, rtol=1e-12)

    def test_zero_noise_gives_zero(self):
        assert lambda_schedule(1.0, 0.8, 1.0, 100, 50, 0.0) == 0.0

    def test_homogeneous_in_block_norm(self):
        a = lambda_schedule(1.0, 0.8, 1.0, 100, 50, 0.3)
        b = lambda_schedule(2.0, 0.8, 1.0, 100, 50, 0.3)
        npt.assert_allclose(b, 2 * a, rtol=1e-12)

    def test_gamma_nonpositive_rejected(self):
        with pytest.raises(NumericsError, match="incoherence"):
            lambda_schedule(1.0, 0.0, 1.0, 100, 50, 0.3)


class TestIncoherenceCheck:
    def test_orthogonal_design_gives_gamma_one(self):
        n, d = 12, 4
        q, _ = np.linalg.qr(np.random.default_rng(7).standard_normal((n, d)))
        x = (q * np.sqrt(n)).T  # columns-as-samples dataset with orthogonal design rows
        ds = Dataset(X=x, Z=np.zeros_like(x), Xeps=x, Y=np.zeros((1, n)), sigma_eps=0.0, seed=0)
        gt = make_sparse_beta(d, 2, 1.0, group_size=1)
        report = incoherence_check(ds, gt)
        npt.assert_allclose(report.gamma, 1.0, atol=1e-10)
        assert not report.violated

    def test_hand_design(self):
        # design rows (samples): [1,1], [0,1], [1,0]; block {0}, j=1:
        # Xe_1^T Xe_0 = 1, Xe_0^T Xe_0 = 2 -> l1 norm = 0.5, gamma = 0.5
        design = np.array([[1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        x = design.T
        ds = Dataset(X=x, Z=np.zeros_like(x), Xeps=x, Y=np.zeros((1, 3)), sigma_eps=0.0, seed=0)
        gt = make_sparse_beta(2, 1, 1.0)
        report = incoherence_check(ds, gt)
        npt.assert_allclose(report.gamma, 0.5, atol=1e-12)
        npt.assert_allclose(report.k_x, 2.0 / 3.0, atol=1e-12)
        npt.assert_allclose(report.lambda_min, 2.0 / 3.0, atol=1e-12)

    def test_gaussian_design_usually_incoherent(self):
        hits = 0
        for seed in range(10):
            ds = make_regression_dataset(SeededRng(seed), 200, 1, 500, 0.3, lambda c: c[:1])
            gt = make_sparse_beta(200, 10, 1.0, group_size=5)
            if incoherence_check(ds, gt).gamma > 0:
                hits += 1
        assert hits >= 9

    def test_singular_block_flagged_not_fatal(self):
        x = np.zeros((3, 4))
        x[0] = 1.0  # all other coordinates identically zero -> singular blocks
        ds = Dataset(X=x, Z=np.zeros_like(x), Xeps=x, Y=np.zeros((1, 4)), sigma_eps=0.0, seed=0)
        gt = make_sparse_beta(3, 2, 1.0, group_size=2)
        report = incoherence_check(ds, gt)
        assert report.per_block[0].singular
        assert report.violated


class TestDecomposedFit:
    def test_noiseless_tiny_lambda_recovers_blocks(self):
        gt = make_sparse_beta(12, 4, 1.0, group_size=2)
        ds = make_regression_dataset(SeededRng(8), 12, 1, 30, 0.0, lambda c: gt.beta @ c)
        fit = st_decomposed_fit(ds, gt, lambdas=1e-12)
        for i, w in enumerate(fit.w_blocks):
            npt.assert_allclose(w, gt.block_vector(i), atol=1e-6)
        npt.assert_allclose(fit.w_total, gt.beta, atol=1e-6)

    def test_w_total_is_sum_of_blocks(self):
        gt = make_sparse_beta(10, 4, 1.0, group_size=2)
        ds = make_regression_dataset(SeededRng(9), 10, 1, 40, 0.3, lambda c: gt.beta @ c)
        fit = st_decomposed_fit(ds, gt, lambdas=0.05)
        npt.assert_array_equal(fit.w_total, np.sum(fit.w_blocks, axis=0))

    def test_single_group_equals_target_problem(self):
        gt = make_sparse_beta(8, 4, 1.0, group_size=4)
        ds = make_regression_dataset(SeededRng(10), 8, 1, 25, 0.2, lambda c: gt.beta @ c)
        lam = 0.07
        fit = st_decomposed_fit(ds, gt, lambdas=lam)
        direct = lasso_solve(
            LassoProblem(A=ds.Xeps.T, b=ds.X.T @ gt.beta, lam=lam, n_samples=ds.n_samples),
            tol=1e-10,
        )
        npt.assert_allclose(fit.w_total, direct, atol=1e-8)

    def test_auto_lambda_uses_schedule(self):
        gt = make_sparse_beta(40, 4, 1.0, group_size=2)
        ds = make_regression_dataset(SeededRng(11), 40, 1, 200, 0.3, lambda c: gt.beta @ c)
        fit = st_decomposed_fit(ds, gt, lambdas="auto")
        rep = fit.diagnostics
        expect = lambda_schedule(
            float(np.linalg.norm(gt.beta[gt.blocks[0]])),
            rep.gamma, rep.k_x, 40, 200, 0.3,
        )
        npt.assert_allclose(fit.lambdas[0], expect, rtol=1e-12)

    def test_support_recovery_in_theorem_regime(self):
        # Gaussian design, n ~ g^2 log d: recovered supports stay inside blocks
        d_x, g = 60, 2
        gt = make_sparse_beta(d_x, 6, 1.0, group_size=g)
        hits = 0
        for seed in range(20):
            n = int(40 * g * g * np.ceil(np.log(d_x)))
            ds = make_regression_dataset(SeededRng(seed), d_x, 1, n, 0.3, lambda c: gt.beta @ c)
            fit = st_decomposed_fit(ds, gt, lambdas="auto")
            ok = all(
                set(sup) <= set(gt.blocks[i]) for i, sup in enumerate(fit.supports)
            )
            hits += ok
        assert hits >= 18

    def test_decomposition_identity_when_supports_verify(self):
        gt = make_sparse_beta(30, 4, 1.0, group_size=2)
        ds = make_regression_dataset(SeededRng(12), 30, 1, 300, 0.3, lambda c: gt.beta @ c)
        fit = st_decomposed_fit(ds, gt, lambdas="auto")
        assert all(set(s) <= set(gt.blocks[i]) for i, s in enumerate(fit.supports))
        ref = NoisyLinearEval(gt.beta, ds.sigma_eps)
        total = linear_test_error(fit.w_total, ref)
        blockwise = sum(
            np.sum((w - gt.block_vector(i)) ** 2) + ds.sigma_eps**2 * np.sum(w**2)
            for i, w in enumerate(fit.w_blocks)
        )
        npt.assert_allclose(total, blockwise, rtol=1e-12)


class TestTargetFit:
    def test_noiseless_small_lambda_near_zero_error(self):
        gt = make_sparse_beta(6, 3, 1.0)
        ds = make_regression_dataset(SeededRng(13), 6, 1, 20, 0.0, lambda c: gt.beta @ c)
        fit = target_lasso_fit(ds, gt, [1e-8, 1e-4])
        assert fit.error < 1e-6

    def test_single_lambda_grid(self):
        gt = make_sparse_beta(6, 2, 1.0)
        ds = make_regression_dataset(SeededRng(14), 6, 1, 15, 0.2, lambda c: gt.beta @ c)
        fit = target_lasso_fit(ds, gt, [0.5])
        assert fit.lam == 0.5

    def test_empty_grid_rejected(self):
        gt = make_sparse_beta(6, 2, 1.0)
        ds = make_regression_dataset(SeededRng(15), 6, 1, 15, 0.2, lambda c: gt.beta @ c)
        with pytest.raises(NumericsError):
            target_lasso_fit(ds, gt, [])

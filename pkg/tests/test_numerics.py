import numpy as np
import numpy.testing as npt
import pytest

from stlab.numerics import (
    NumericsError,
    SeededRng,
    gaussian_mat,
    lambda_max_sym,
    least_squares_min_norm,
    sym_eig_topk,
)


def svd_pinv(a):
    """Independent pseudoinverse built from an explicit SVD."""
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    cut = max(a.shape) * np.finfo(float).eps * s[0]
    inv = np.where(s > cut, 1.0 / np.where(s > cut, s, 1.0), 0.0)
    return vt.T @ (inv[:, None] * u.T)


class TestSymEigTopk:
    def test_identity(self):
        vecs, vals = sym_eig_topk(np.eye(3), 2)
        npt.assert_allclose(vals, [1.0, 1.0])
        # any orthonormal pair is acceptable; check via the residual
        npt.assert_allclose(vecs.T @ vecs, np.eye(2), atol=1e-8)
        npt.assert_allclose(np.eye(3) @ vecs, vecs * vals, atol=1e-8)

    def test_diagonal(self):
        vecs, vals = sym_eig_topk(np.diag([4.0, 1.0]), 1)
        npt.assert_allclose(vals, [4.0])
        npt.assert_allclose(np.abs(vecs[:, 0]), [1.0, 0.0], atol=1e-10)

    def test_two_by_two_hand_case(self):
        m = np.array([[2.0, 1.0], [1.0, 2.0]])
        vecs, vals = sym_eig_topk(m, 2)
        npt.assert_allclose(vals, [3.0, 1.0], atol=1e-10)
        s = 1.0 / np.sqrt(2.0)
        npt.assert_allclose(np.abs(vecs[:, 0]), [s, s], atol=1e-10)
        npt.assert_allclose(np.abs(vecs[:, 1]), [s, s], atol=1e-10)
        npt.assert_allclose(vecs[0, 1] * vecs[1, 1], -0.5, atol=1e-10)
        for i in range(2):
            resid = m @ vecs[:, i] - vals[i] * vecs[:, i]
            assert np.linalg.norm(resid) < 1e-8 * np.linalg.norm(m)

    def test_rejects_asymmetric(self):
        with pytest.raises(NumericsError, match="not symmetric"):
            sym_eig_topk(np.array([[1.0, 2.0], [0.0, 1.0]]), 1)

    def test_rotation_invariance_of_eigenvalues(self):
        gen = np.random.default_rng(0)
        for _ in range(5):
            a = gen.standard_normal((6, 6))
            m = a + a.T
            q, _ = np.linalg.qr(gen.standard_normal((6, 6)))
            _, vals1 = sym_eig_topk(m, 6)
            _, vals2 = sym_eig_topk(q @ m @ q.T, 6)
            npt.assert_allclose(vals1, vals2, atol=1e-8)

    def test_rank_deficient_completion_is_deterministic(self):
        y = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])  # rank 1
        m = y @ y.T
        vecs1, vals1 = sym_eig_topk(m, 3)
        vecs2, vals2 = sym_eig_topk(m, 3)
        npt.assert_array_equal(vecs1, vecs2)
        npt.assert_allclose(vals1[1:], 0.0, atol=1e-12)
        npt.assert_allclose(vecs1.T @ vecs1, np.eye(3), atol=1e-8)


class TestLeastSquaresMinNorm:
    def test_identity_system(self):
        w = least_squares_min_norm(np.eye(2), np.array([[1.0, 2.0]]))
        npt.assert_allclose(w, [[1.0, 2.0]], atol=1e-12)

    def test_min_norm_zeroes_unobserved_coordinate(self):
        a = np.array([[1.0], [0.0]])
        b = np.array([[3.0]])
        w = least_squares_min_norm(a, b)
        npt.assert_allclose(w, [[3.0, 0.0]], atol=1e-12)

    def test_matches_svd_pinv_oracle(self):
        gen = np.random.default_rng(1)
        a = gen.standard_normal((4, 6))  # rank 4
        b = gen.standard_normal((2, 6))
        w = least_squares_min_norm(a, b)
        npt.assert_allclose(w, b @ svd_pinv(a), atol=1e-8)

    def test_residual_orthogonality(self):
        gen = np.random.default_rng(2)
        a = gen.standard_normal((3, 7))
        b = gen.standard_normal((2, 7))
        w = least_squares_min_norm(a, b)
        npt.assert_allclose((w @ a - b) @ a.T, 0.0, atol=1e-8)

    def test_minimal_norm_on_rank_deficient_system(self):
        gen = np.random.default_rng(3)
        base = gen.standard_normal((2, 5))
        a = np.vstack([base, base[0] + base[1]])  # rank 2, 3 rows
        b = gen.standard_normal((2, 5))
        w = least_squares_min_norm(a, b)
        w_oracle = b @ svd_pinv(a)
        npt.assert_allclose(w, w_oracle, atol=1e-8)
        assert np.linalg.norm(w) <= np.linalg.norm(w_oracle) + 1e-8

    def test_exact_recovery_with_full_row_rank(self):
        gen = np.random.default_rng(4)
        a = gen.standard_normal((5, 9))
        wstar = gen.standard_normal((3, 5))
        w = least_squares_min_norm(a, wstar @ a)
        npt.assert_allclose(w, wstar, atol=1e-8)

    def test_dimension_mismatch_names_shapes(self):
        with pytest.raises(NumericsError, match=r"\(2, 3\).*\(2, 4\)"):
            least_squares_min_norm(np.zeros((2, 3)), np.zeros((2, 4)))


class TestGaussianMat:
    def test_zero_std_gives_zero_matrix(self):
        m = gaussian_mat(SeededRng(0), 4, 5, 0.0)
        npt.assert_array_equal(m, 0.0)

    def test_moments(self):
        m = gaussian_mat(SeededRng(123), 500, 200, 1.0)
        assert abs(m.mean()) < 0.02
        assert abs(m.std() - 1.0) < 0.02

    def test_determinism_bytes(self):
        a = gaussian_mat(SeededRng(9, (1,)), 13, 7, 2.5)
        b = gaussian_mat(SeededRng(9, (1,)), 13, 7, 2.5)
        assert a.tobytes() == b.tobytes()

    def test_streams_differ(self):
        a = gaussian_mat(SeededRng(9).child(0), 4, 4, 1.0)
        b = gaussian_mat(SeededRng(9).child(1), 4, 4, 1.0)
        assert not np.array_equal(a, b)

    def test_negative_std_rejected(self):
        with pytest.raises(NumericsError):
            gaussian_mat(SeededRng(0), 2, 2, -1.0)


def test_lambda_max_sym_matches_eigh():
    gen = np.random.default_rng(5)
    a = gen.standard_normal((8, 12))
    m = a @ a.T
    npt.assert_allclose(lambda_max_sym(m), np.linalg.eigvalsh(m).max(), rtol=1e-8)

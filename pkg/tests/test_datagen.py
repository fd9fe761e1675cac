import numpy as np
import numpy.testing as npt
import pytest

from stlab.datagen import (
    Dataset,
    load_dataset,
    make_diagonal_teacher,
    make_regression_dataset,
    make_relu_teacher,
    make_sparse_beta,
    pooling_matrix,
    save_dataset,
)
from stlab.numerics import NumericsError, SeededRng
from stlab.relu_net import relu


class TestRegressionDataset:
    def test_zero_noise_means_xeps_equals_x(self):
        ds = make_regression_dataset(SeededRng(0), 6, 1, 10, 0.0, lambda x: x[:1])
        npt.assert_array_equal(ds.Xeps, ds.X)
        npt.assert_array_equal(ds.Z, 0.0)

    def test_targets_computed_on_clean_inputs(self):
        beta = np.zeros(6)
        beta[0] = 1.0
        ds = make_regression_dataset(SeededRng(1), 6, 1, 20, 0.8, lambda x: beta @ x)
        npt.assert_allclose(ds.Y[0], ds.X[0], atol=1e-14)

    def test_noise_norm_matches_sigma(self):
        # column noise energy ||z_i||^2 / d_x should sit near sigma^2
        ds = make_regression_dataset(SeededRng(2), 500, 1, 50, 0.5, lambda x: x[:1])
        per_col = np.sum(ds.Z**2, axis=0) / ds.d_x
        assert abs(per_col.mean() - 0.25) < 0.025

    def test_xeps_identity_exact(self):
        ds = make_regression_dataset(SeededRng(3), 8, 2, 9, 1.3, lambda x: x[:2])
        npt.assert_array_equal(ds.Xeps, ds.X + ds.Z)

    def test_negative_sigma_rejected(self):
        with pytest.raises(NumericsError):
            make_regression_dataset(SeededRng(0), 4, 1, 5, -0.1, lambda x: x[:1])

    def test_determinism(self):
        mk = lambda: make_regression_dataset(SeededRng(17), 5, 1, 6, 0.2, lambda x: x[:1])
        a, b = mk(), mk()
        assert a.X.tobytes() == b.X.tobytes()
        assert a.Z.tobytes() == b.Z.tobytes()


class TestSparseBeta:
    def test_small_case(self):
        gt = make_sparse_beta(4, 2, 1.0)
        npt.assert_array_equal(gt.beta, [1.0, 1.0, 0.0, 0.0])

    def test_supplement_configuration(self):
        gt = make_sparse_beta(500, 25, 1.0)
        assert gt.s == 500 // 20
        assert np.count_nonzero(gt.beta) == 25
        npt.assert_array_equal(gt.beta[:25], 1.0)

    def test_fully_dense_boundary(self):
        gt = make_sparse_beta(5, 5, 2.0)
        npt.assert_array_equal(gt.beta, 2.0)

    def test_blocks_partition_support(self):
        gt = make_sparse_beta(20, 6, 1.0, group_size=2)
        assert len(gt.blocks) == 3
        all_idx = np.concatenate(gt.blocks)
        npt.assert_array_equal(np.sort(all_idx), np.arange(6))
        for a in range(3):
            for b in range(a + 1, 3):
                assert not set(gt.blocks[a]) & set(gt.blocks[b])

    def test_regroup(self):
        gt = make_sparse_beta(20, 6, 1.0).with_group_size(3)
        assert gt.group_size == 3
        assert len(gt.blocks) == 2

    def test_bad_group_size(self):
        with pytest.raises(NumericsError):
            make_sparse_beta(10, 4, 1.0, group_size=3)


class TestPoolingMatrix:
    def test_hand_case(self):
        npt.assert_array_equal(
            pooling_matrix(4, 2), [[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]
        )

    @pytest.mark.parametrize("m,g", [(4, 1), (4, 2), (4, 4), (12, 3), (12, 4)])
    def test_ppt_is_g_times_identity(self, m, g):
        p = pooling_matrix(m, g)
        npt.assert_array_equal(p @ p.T, g * np.eye(m // g))

    def test_rows_cover_all_columns(self):
        p = pooling_matrix(12, 3)
        npt.assert_array_equal(p.sum(axis=0), 1.0)


class TestDiagonalTeacher:
    def test_hand_case_groups(self):
        import dataclasses

        gt = make_sparse_beta(4, 4, 1.0, group_size=2)
        gt = dataclasses.replace(gt, beta=np.array([1.0, 2.0, 3.0, 4.0]))
        teacher = make_diagonal_teacher(gt, 2)
        npt.assert_array_equal(teacher.P, [[1, 1, 0, 0], [0, 0, 1, 1]])
        x = np.array([1.0, 1.0, 1.0, 1.0])
        pooled = teacher.P @ teacher.W1 @ x
        npt.assert_allclose(pooled, [3.0, 7.0])  # b1 x1 + b2 x2, b3 x3 + b4 x4

    def test_full_pooling(self):
        gt = make_sparse_beta(6, 3, 1.5)
        teacher = make_diagonal_teacher(gt, 3)
        assert teacher.P.shape == (1, 3)
        x = np.arange(6.0)
        npt.assert_allclose(teacher.composite_linear() @ x, gt.beta @ x)

    @pytest.mark.parametrize("s,g", [(6, 1), (6, 2), (6, 3), (6, 6)])
    def test_composite_reproduces_beta(self, s, g):
        gt = make_sparse_beta(12, s, 0.7)
        teacher = make_diagonal_teacher(gt, g)
        gen = np.random.default_rng(5)
        for _ in range(5):
            x = gen.standard_normal(12)
            assert abs(teacher.composite_linear() @ x - gt.beta @ x) < 1e-12

    def test_indivisible_group_rejected(self):
        gt = make_sparse_beta(10, 5, 1.0)
        with pytest.raises(NumericsError):
            make_diagonal_teacher(gt, 2)


class TestReluTeacher:
    def test_sign_split_small(self):
        t = make_relu_teacher(SeededRng(0), 6, 4, 2, sign_split=True)
        npt.assert_array_equal(t.W2, [[1.0, -1.0]])

    def test_sign_split_g1(self):
        t = make_relu_teacher(SeededRng(0), 6, 4, 1, sign_split=True)
        npt.assert_array_equal(t.W2, [[1.0, 1.0, -1.0, -1.0]])

    def test_w1_scale(self):
        t = make_relu_teacher(SeededRng(1), 100, 400, 1)
        assert abs(t.W1.std() - np.sqrt(2.0 / 500)) < 0.005

    def test_function_invariant_to_g_all_ones(self):
        rng = SeededRng(3)
        teachers = [make_relu_teacher(rng, 10, 12, g) for g in (1, 2, 3, 4, 6, 12)]
        gen = np.random.default_rng(0)
        x = gen.standard_normal((10, 100))
        outs = [t.W2 @ t.P @ relu(t.W1 @ x) for t in teachers]
        for out in outs[1:]:
            assert np.max(np.abs(out - outs[0])) < 1e-10

    def test_function_invariant_to_g_sign_split(self):
        rng = SeededRng(4)
        teachers = [make_relu_teacher(rng, 10, 12, g, sign_split=True) for g in (1, 2, 3, 6)]
        gen = np.random.default_rng(1)
        x = gen.standard_normal((10, 100))
        outs = [t.W2 @ t.P @ relu(t.W1 @ x) for t in teachers]
        for out in outs[1:]:
            assert np.max(np.abs(out - outs[0])) < 1e-10

    def test_divisibility_errors(self):
        with pytest.raises(NumericsError):
            make_relu_teacher(SeededRng(0), 5, 10, 3)
        with pytest.raises(NumericsError):
            make_relu_teacher(SeededRng(0), 5, 6, 2, sign_split=True)  # m/g = 3 odd


class TestContainerRoundTrip:
    def test_dataset_roundtrip(self, tmp_path):
        ds = make_regression_dataset(SeededRng(11), 7, 2, 9, 0.4, lambda x: x[:2])
        save_dataset(ds, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        npt.assert_array_equal(back.X, ds.X)
        npt.assert_array_equal(back.Z, ds.Z)
        npt.assert_array_equal(back.Y, ds.Y)
        npt.assert_array_equal(back.Xeps, ds.Xeps)
        assert back.sigma_eps == ds.sigma_eps
        assert back.seed == ds.seed

    def test_save_bytes_deterministic(self, tmp_path):
        ds = make_regression_dataset(SeededRng(12), 4, 1, 5, 0.1, lambda x: x[:1])
        save_dataset(ds, tmp_path / "a")
        save_dataset(ds, tmp_path / "b")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
        assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()

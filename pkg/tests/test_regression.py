import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcelsq.basis import PcBasis, eval_basis_row
from pcelsq.errors import InputError, NumericalError
from pcelsq.regression import (
    DesignSystem, NoiseModel, apply_noise, assemble, assemble_weighted, recovery_success,
    relative_error, solve, validation_rmse,
)
from pcelsq.sampling import draw, sample_standard


def legendre_design(N, d=2, p=3, seed=0):
    basis = PcBasis.total_order("legendre", d, p)
    batch = sample_standard(basis, N, seed)
    return basis, batch


class TestAssemble:
    def test_rows_are_weighted_basis_rows(self):
        basis = PcBasis.total_order("hermite", 2, 4)
        batch = draw(basis, "asymptotic", 30, seed=1)
        design = assemble(basis, batch, np.ones(30))
        for i in range(30):
            np.testing.assert_allclose(design.weighted_matrix[i],
                                       batch.weights[i] * eval_basis_row(basis, batch.points[i]), rtol=1e-14)
        np.testing.assert_allclose(design.weighted_rhs, batch.weights)

    def test_scale_from_strategy(self):
        basis = PcBasis.total_order("legendre", 2, 3)
        design = assemble(basis, draw(basis, "coherence-optimal", 20, seed=0), np.zeros(20))
        assert design.weight_scale == pytest.approx(math.sqrt(10))

    def test_length_mismatch(self):
        basis, batch = legendre_design(10)
        with pytest.raises(InputError):
            assemble(basis, batch, np.ones(9))

    def test_non_finite_values(self):
        basis, batch = legendre_design(3)
        with pytest.raises(InputError):
            assemble(basis, batch, [1.0, np.nan, 0.0])

    def test_order_zero_weighted_mean(self):
        basis = PcBasis.total_order("legendre", 1, 0)
        w = np.array([1.0, 2.0, 0.5])
        u = np.array([3.0, -1.0, 4.0])
        fit = solve(assemble_weighted(basis, np.zeros((3, 1)), w, u))
        assert fit.coefficients[0] == pytest.approx(np.sum(w**2 * u) / np.sum(w**2))

    def test_hand_computed_three_points(self):
        basis = PcBasis.total_order("legendre", 1, 1)
        x = np.array([[-1.0], [0.0], [1.0]])
        fit = solve(assemble_weighted(basis, x, np.ones(3), x[:, 0]))
        np.testing.assert_allclose(fit.coefficients, [0.0, 1 / math.sqrt(3)], atol=1e-15)

    def test_bad_weights(self):
        basis = PcBasis.total_order("legendre", 1, 1)
        with pytest.raises(InputError):
            assemble_weighted(basis, [[0.0], [0.5]], [1.0, 0.0], [1.0, 1.0])


class TestSolve:
    def test_square_system_interpolates(self):
        basis = PcBasis.total_order("hermite", 2, 2)
        Q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((6, 6)))
        b = np.arange(6.0)
        fit = solve(DesignSystem(Q, b))
        assert fit.residual_norm < 1e-12
        assert fit.method == "qr" and not fit.rank_deficient

    def test_underdetermined_is_rank_deficient_min_norm(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((4, 10))
        b = rng.standard_normal(4)
        fit = solve(DesignSystem(A, b))
        assert fit.rank_deficient and fit.method == "min-norm-svd" and fit.rank == 4
        np.testing.assert_allclose(fit.coefficients, np.linalg.pinv(A) @ b, atol=1e-12)

    def test_exact_recovery(self):
        basis, batch = legendre_design(200)
        c = np.random.default_rng(3).standard_normal(basis.P)
        fit = solve(assemble(basis, batch, basis.evaluate(batch.points) @ c))
        assert relative_error(fit.coefficients, c) < 1e-10

    def test_rank_deficient_square(self):
        A = np.ones((5, 3))
        fit = solve(DesignSystem(A, np.ones(5)))
        assert fit.rank == 1 and fit.rank_deficient
        np.testing.assert_allclose(fit.coefficients, [1 / 3] * 3)

    def test_residual_recomputed(self):
        basis, batch = legendre_design(50)
        u = np.random.default_rng(4).standard_normal(50)
        design = assemble(basis, batch, u)
        fit = solve(design)
        direct = np.linalg.norm(design.weighted_rhs - design.weighted_matrix @ fit.coefficients)
        assert fit.residual_norm == pytest.approx(direct, rel=1e-10)

    def test_normal_equation_orthogonality(self):
        basis, batch = legendre_design(80)
        design = assemble(basis, batch, np.random.default_rng(5).standard_normal(80))
        fit = solve(design)
        A, b = design.weighted_matrix, design.weighted_rhs
        g = A.T @ (b - A @ fit.coefficients)
        assert np.abs(g).max() <= 1e-8 * np.linalg.norm(A) * np.linalg.norm(b)

    @pytest.mark.parametrize("method", ["min-norm-svd", "lsqr"])
    def test_methods_agree(self, method):
        basis, batch = legendre_design(60)
        design = assemble(basis, batch, np.random.default_rng(6).standard_normal(60))
        ref = solve(design, "qr").coefficients
        other = solve(design, method)
        assert other.method == method
        assert relative_error(other.coefficients, ref) < 1e-9

    def test_stability_reported(self):
        basis = PcBasis.total_order("legendre", 2, 3)
        batch = draw(basis, "coherence-optimal", 500, seed=0)
        fit = solve(assemble(basis, batch, np.zeros(500)))
        assert fit.sigma_stability is not None and fit.stable

    def test_non_finite(self):
        with pytest.raises(NumericalError):
            solve(DesignSystem(np.array([[np.inf, 1.0]]), np.ones(1)))

    def test_unknown_method(self):
        with pytest.raises(InputError):
            solve(DesignSystem(np.eye(2), np.ones(2)), "cholesky")

    @settings(max_examples=30, deadline=None)
    @given(lam=st.floats(1e-3, 1e3), seed=st.integers(0, 10_000))
    def test_weight_rescaling_invariance(self, lam, seed):
        basis = PcBasis.total_order("hermite", 2, 3)
        batch = draw(basis, "asymptotic", 40, seed=seed)
        u = np.random.default_rng(seed).standard_normal(40)
        a = solve(assemble_weighted(basis, batch.points, batch.weights, u), stability=False)
        b = solve(assemble_weighted(basis, batch.points, lam * batch.weights, u), stability=False)
        assert relative_error(b.coefficients, a.coefficients) < 1e-12


class TestNoise:
    def test_zero_sigma_identity(self):
        v = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(apply_noise(v, NoiseModel.relative(0.0)), v)
        np.testing.assert_array_equal(apply_noise(v, NoiseModel()), v)

    def test_zero_value_unchanged(self):
        out = apply_noise(np.zeros(10), NoiseModel.relative(0.5), seed=1)
        np.testing.assert_array_equal(out, 0.0)

    def test_sample_std(self):
        out = apply_noise(np.ones(100_000), NoiseModel.relative(0.03), seed=2)
        assert 0.0297 <= out.std(ddof=1) <= 0.0303

    def test_invalid(self):
        with pytest.raises(InputError):
            NoiseModel.relative(-0.1)
        with pytest.raises(InputError):
            NoiseModel("uniform")


class TestMetrics:
    def test_recovery_success(self):
        c = np.array([1.0, -2.0, 0.5])
        assert recovery_success(c, c)
        assert not recovery_success(1.03 * c, c)
        assert recovery_success(1.019 * c, c)

    def test_zero_reference(self):
        with pytest.raises(InputError):
            relative_error(np.ones(2), np.zeros(2))

    def test_validation_identical(self):
        basis = PcBasis.total_order("hermite", 2, 2)
        c = np.arange(1.0, 7.0)
        assert validation_rmse(basis, c, c, 100).sampled == 0.0

    def test_validation_coefficient_value(self):
        basis = PcBasis.total_order("hermite", 2, 2)
        c = np.arange(1.0, 7.0)
        c_hat = c + 0.1
        v = validation_rmse(basis, c_hat, c, 10)
        assert v.coefficient == pytest.approx(np.linalg.norm(c_hat - c) / np.linalg.norm(c), rel=1e-15)

    def test_validation_sampled_converges(self):
        basis = PcBasis.total_order("legendre", 2, 3)
        rng = np.random.default_rng(7)
        c = rng.standard_normal(basis.P)
        delta = rng.standard_normal(basis.P)
        c_hat = c + 0.1 * delta / np.linalg.norm(delta)
        v = validation_rmse(basis, c_hat, c, 10_000, seed=3)
        assert abs(v.sampled - v.coefficient) <= 3 / math.sqrt(10_000) * v.coefficient

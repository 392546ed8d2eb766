import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanfactor.errors import NonSpdError, RankDeficiencyError, ShapeError
from kanfactor.linalg import as_matrix, matmul, matvec, ridge_solve, spd_solve

from oracles import gauss_solve, matmul_triple_loop


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(np.eye(2), b), b)

    def test_row_times_column(self):
        out = matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
        assert out.shape == (1, 1)
        assert out[0, 0] == 11.0

    def test_random_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((4, 3))
        assert np.max(np.abs(matmul(a, b) - matmul_triple_loop(a, b))) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ShapeError):
            as_matrix(np.array([[1.0, np.nan]]))
        with pytest.raises(ShapeError):
            as_matrix(np.array([[np.inf, 1.0]]))


class TestSpdSolve:
    def test_identity(self):
        assert np.array_equal(spd_solve(np.eye(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])

    def test_scaled_identity(self):
        assert np.allclose(spd_solve(2 * np.eye(2), [4.0, 6.0]), [2.0, 3.0], atol=1e-12, rtol=0)

    def test_random_spd_against_gauss(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((8, 8))
        a = m.T @ m + np.eye(8)
        b = rng.standard_normal(8)
        assert np.max(np.abs(spd_solve(a, b) - gauss_solve(a, b))) < 1e-9

    def test_residual_bound(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            m = rng.standard_normal((6, 6))
            a = m.T @ m + np.eye(6)
            b = rng.standard_normal(6)
            x = spd_solve(a, b)
            assert np.max(np.abs(a @ x - b)) <= 1e-8 * (1 + np.max(np.abs(b)))

    def test_non_spd_names_pivot(self):
        a = np.diag([1.0, -1.0, 2.0])
        with pytest.raises(NonSpdError) as exc:
            spd_solve(a, np.ones(3))
        assert exc.value.pivot_index == 1
        assert "index 1" in str(exc.value)

    def test_asymmetric_rejected(self):
        a = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ShapeError):
            spd_solve(a, np.ones(2))

    def test_roundtrip_recovers_x(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            m = rng.standard_normal((7, 7))
            a = m.T @ m + np.eye(7)
            x = rng.standard_normal(7)
            got = spd_solve(a, a @ x)
            assert np.max(np.abs(got - x)) <= 1e-8 * max(1.0, np.max(np.abs(x)))


class TestRidgeSolve:
    def test_identity_ols(self):
        assert np.allclose(ridge_solve(np.eye(2), [1.0, 2.0], 0.0), [1.0, 2.0])

    def test_identity_with_penalty(self):
        assert np.allclose(ridge_solve(np.eye(2), [1.0, 2.0], 1.0), [0.5, 1.0], atol=1e-12, rtol=0)

    def test_random_against_normal_equations(self):
        rng = np.random.default_rng(4)
        z = rng.standard_normal((20, 4))
        r = rng.standard_normal(20)
        lam = 0.1
        expected = gauss_solve(z.T @ z + lam * np.eye(4), z.T @ r)
        assert np.max(np.abs(ridge_solve(z, r, lam) - expected)) < 1e-9

    def test_many_random_instances(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(5, 30))
            p = int(rng.integers(1, min(n, 8) + 1))
            lam = float(rng.uniform(0, 2))
            z = rng.standard_normal((n, p))
            r = rng.standard_normal(n)
            expected = gauss_solve(z.T @ z + lam * np.eye(p), z.T @ r)
            assert np.max(np.abs(ridge_solve(z, r, lam) - expected)) < 1e-9

    def test_rank_deficiency_error_advises_penalty(self):
        rng = np.random.default_rng(6)
        col = rng.standard_normal((10, 1))
        z = np.hstack([col, col])
        with pytest.raises(RankDeficiencyError, match="lambda > 0"):
            ridge_solve(z, rng.standard_normal(10), 0.0)
        # the advised fix works
        x = ridge_solve(z, rng.standard_normal(10), 0.01)
        assert np.all(np.isfinite(x))

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            ridge_solve(np.eye(2), [1.0, 2.0], -0.5)

    def test_ols_orthogonality(self):
        rng = np.random.default_rng(7)
        z = rng.standard_normal((25, 5))
        r = rng.standard_normal(25)
        x = ridge_solve(z, r, 0.0)
        assert np.max(np.abs(z.T @ (r - z @ x))) < 1e-8

    @settings(deadline=None, max_examples=30)
    @given(
        lam1=st.floats(min_value=0.0, max_value=10.0),
        lam2=st.floats(min_value=0.0, max_value=10.0),
    )
    def test_shrinkage_monotone_in_lambda(self, lam1, lam2):
        rng = np.random.default_rng(8)
        z = rng.standard_normal((15, 3))
        r = rng.standard_normal(15)
        lo, hi = sorted((lam1, lam2))
        n_lo = np.linalg.norm(ridge_solve(z, r, lo))
        n_hi = np.linalg.norm(ridge_solve(z, r, hi))
        assert n_lo >= n_hi - 1e-12


def test_matvec_shape_check():
    with pytest.raises(ShapeError):
        matvec(np.ones((2, 3)), np.ones(2))
    assert np.allclose(matvec(np.eye(2), [3.0, 4.0]), [3.0, 4.0])

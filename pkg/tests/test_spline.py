import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanfactor.spline import (
    SplineFunction,
    SplineGrid,
    bspline_basis,
    bspline_basis_deriv,
    init_spline,
    silu,
    spline_eval,
    spline_grad,
)

from oracles import assert_close_rel, bspline_basis_recursive, central_diff, fit_identity_coeffs


def random_grid(rng, degree=None):
    return SplineGrid(
        lo=-1.0,
        hi=1.0,
        intervals=int(rng.integers(1, 8)),
        degree=int(rng.integers(0, 4)) if degree is None else degree,
    )


def interior_points(grid, rng, n, margin=1e-3):
    """Points inside the grid, away from knots and endpoints (finite
    differences straddle kinks otherwise)."""
    pts = []
    while len(pts) < n:
        x = rng.uniform(grid.lo, grid.hi)
        if np.min(np.abs(x - grid.knots)) > margin:
            pts.append(x)
    return pts


class TestBasis:
    def test_degree0_indicators(self):
        grid = SplineGrid(lo=0.0, hi=1.0, intervals=2, degree=0)
        assert np.array_equal(bspline_basis(0.25, grid), [1.0, 0.0])
        assert np.array_equal(bspline_basis(0.75, grid), [0.0, 1.0])

    @pytest.mark.parametrize("degree", [0, 1, 2, 3])
    @pytest.mark.parametrize("intervals", list(range(1, 11)))
    def test_partition_of_unity(self, degree, intervals):
        grid = SplineGrid(lo=-1.0, hi=1.0, intervals=intervals, degree=degree)
        xs = np.concatenate([np.linspace(-1.0, 1.0, 41), [-1.0, 1.0]])
        for x in xs:
            assert abs(bspline_basis(x, grid).sum() - 1.0) < 1e-12

    def test_matches_recursive_oracle_single_point(self):
        grid = SplineGrid(lo=-1.0, hi=1.0, intervals=5, degree=3)
        expected = bspline_basis_recursive(0.3, 3, grid.knots)
        assert np.max(np.abs(bspline_basis(0.3, grid) - expected)) < 1e-12

    def test_matches_recursive_oracle_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            grid = random_grid(rng)
            x = rng.uniform(grid.lo, grid.hi)
            expected = bspline_basis_recursive(x, grid.degree, grid.knots)
            assert np.max(np.abs(bspline_basis(x, grid) - expected)) < 1e-12

    def test_local_support(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            grid = random_grid(rng)
            knots = grid.knots
            x = rng.uniform(grid.lo - 0.5, grid.hi + 0.5)
            xc = np.clip(x, grid.lo, grid.hi)
            values = bspline_basis(x, grid)
            for m, v in enumerate(values):
                inside = knots[m] <= xc <= knots[m + grid.degree + 1]
                if not inside:
                    assert v == 0.0

    def test_clamping_extends_boundary_values(self):
        grid = SplineGrid()
        assert np.array_equal(bspline_basis(-3.0, grid), bspline_basis(-1.0, grid))
        assert np.array_equal(bspline_basis(4.0, grid), bspline_basis(1.0, grid))

    @settings(deadline=None, max_examples=60)
    @given(
        x=st.floats(min_value=-1.0, max_value=1.0),
        intervals=st.integers(min_value=1, max_value=10),
        degree=st.integers(min_value=0, max_value=3),
    )
    def test_partition_of_unity_property(self, x, intervals, degree):
        grid = SplineGrid(lo=-1.0, hi=1.0, intervals=intervals, degree=degree)
        values = bspline_basis(x, grid)
        assert abs(values.sum() - 1.0) < 1e-12
        assert np.all(values >= 0.0)


class TestBasisDerivative:
    def test_hat_function_slope(self):
        grid = SplineGrid(lo=0.0, hi=1.0, intervals=4, degree=1)
        # middle of the second cell: rising edge of basis 2, falling edge of basis 1
        d = bspline_basis_deriv(0.375, grid)
        assert d[2] == pytest.approx(4.0, abs=1e-12)
        assert d[1] == pytest.approx(-4.0, abs=1e-12)

    def test_derivative_sums_to_zero_inside(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            grid = random_grid(rng)
            x = rng.uniform(grid.lo, grid.hi)
            assert abs(bspline_basis_deriv(x, grid).sum()) < 1e-10

    def test_zero_outside_grid(self):
        grid = SplineGrid()
        assert np.array_equal(bspline_basis_deriv(-1.5, grid), np.zeros(grid.num_basis))
        assert np.array_equal(bspline_basis_deriv(2.0, grid), np.zeros(grid.num_basis))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        grid = SplineGrid(lo=-1.0, hi=1.0, intervals=5, degree=3)
        for x in interior_points(grid, rng, 25):
            analytic = bspline_basis_deriv(x, grid)
            for m in range(grid.num_basis):
                numeric = central_diff(lambda t, m=m: bspline_basis(t, grid)[m], x)
                assert_close_rel(analytic[m], numeric, label=f"basis {m} at x={x}")


class TestSplineEval:
    def test_all_zero_parameters(self):
        grid = SplineGrid()
        f = SplineFunction(grid, np.zeros(grid.num_basis), base_weight=0.0)
        for x in [-2.0, -0.3, 0.0, 0.9, 5.0]:
            assert spline_eval(f, x) == 0.0

    def test_silu_only_at_zero(self):
        grid = SplineGrid()
        f = SplineFunction(grid, np.zeros(grid.num_basis), base_weight=1.0)
        assert spline_eval(f, 0.0) == 0.0

    def test_silu_term_uses_raw_input_outside_grid(self):
        grid = SplineGrid()
        f = SplineFunction(grid, np.zeros(grid.num_basis), base_weight=1.0)
        assert spline_eval(f, 3.0) == pytest.approx(float(silu(3.0)), abs=1e-15)

    def test_matches_term_by_term_oracle(self):
        rng = np.random.default_rng(4)
        grid = SplineGrid(lo=-1.0, hi=1.0, intervals=5, degree=3)
        for _ in range(20):
            coeffs = rng.standard_normal(grid.num_basis)
            wb = float(rng.standard_normal())
            f = SplineFunction(grid, coeffs, wb)
            x = float(rng.uniform(-1.5, 1.5))
            xc = np.clip(x, grid.lo, grid.hi)
            oracle = wb * float(silu(x)) + sum(
                c * bspline_basis_recursive(xc, grid.degree, grid.knots)[m]
                for m, c in enumerate(coeffs)
            )
            assert abs(spline_eval(f, x) - oracle) < 1e-12

    def test_coeff_count_validated(self):
        grid = SplineGrid()
        with pytest.raises(ValueError):
            SplineFunction(grid, np.zeros(grid.num_basis + 1))


class TestSplineGrad:
    def test_zero_upstream(self):
        grid = SplineGrid()
        f = init_spline(0, grid, 0.1)
        dx, dcoeffs, dbase = spline_grad(f, 0.37, 0.0)
        assert dx == 0.0 and dbase == 0.0
        assert np.array_equal(dcoeffs, np.zeros(grid.num_basis))

    def test_silu_slope_at_zero(self):
        grid = SplineGrid()
        f = SplineFunction(grid, np.zeros(grid.num_basis), base_weight=1.0)
        dx, _, dbase = spline_grad(f, 0.0, 1.0)
        assert dx == pytest.approx(0.5, abs=1e-12)
        assert dbase == 0.0

    def test_matches_finite_differences_thousand_pairs(self):
        rng = np.random.default_rng(5)
        checked = 0
        while checked < 1000:
            grid = random_grid(rng, degree=int(rng.integers(1, 4)))
            f = SplineFunction(
                grid, rng.standard_normal(grid.num_basis), float(rng.standard_normal())
            )
            x = float(rng.uniform(grid.lo - 1.0, grid.hi + 1.0))
            if np.min(np.abs(x - grid.knots)) < 1e-3:
                continue  # finite differences would straddle a kink or the clamp
            upstream = float(rng.standard_normal())
            dx, dcoeffs, dbase = spline_grad(f, x, upstream)

            num_dx = upstream * central_diff(lambda t: spline_eval(f, t), x)
            assert_close_rel(dx, num_dx, label=f"dx at x={x}")

            num_dbase = upstream * central_diff(
                lambda w: spline_eval(SplineFunction(grid, f.coeffs, w), x), f.base_weight
            )
            assert_close_rel(dbase, num_dbase, label="dbase")

            m = int(rng.integers(grid.num_basis))

            def eval_with_coeff(c, m=m):
                coeffs = f.coeffs.copy()
                coeffs[m] = c
                return spline_eval(SplineFunction(grid, coeffs, f.base_weight), x)

            num_dc = upstream * central_diff(eval_with_coeff, f.coeffs[m])
            assert_close_rel(dcoeffs[m], num_dc, label=f"dcoeffs[{m}]")
            checked += 1


class TestLinearReproduction:
    @pytest.mark.parametrize("degree", [1, 2, 3])
    @pytest.mark.parametrize("intervals", list(range(1, 11)))
    def test_identity_fit(self, degree, intervals):
        grid = SplineGrid(lo=-1.0, hi=1.0, intervals=intervals, degree=degree)
        coeffs = fit_identity_coeffs(grid)
        f = SplineFunction(grid, coeffs, base_weight=0.0)
        xs = np.linspace(grid.lo, grid.hi, 101)
        residual = max(abs(spline_eval(f, float(x)) - float(x)) for x in xs)
        assert residual < 1e-10


class TestInitSpline:
    def test_zero_noise(self):
        grid = SplineGrid()
        f = init_spline(42, grid, 0.0)
        assert np.array_equal(f.coeffs, np.zeros(grid.num_basis))
        assert f.base_weight == 1.0

    def test_same_seed_bit_identical(self):
        grid = SplineGrid()
        f1 = init_spline(7, grid, 0.1)
        f2 = init_spline(7, grid, 0.1)
        assert np.array_equal(f1.coeffs, f2.coeffs)
        assert f1.base_weight == f2.base_weight

    def test_coefficient_distribution(self):
        grid = SplineGrid()
        draws = np.concatenate([init_spline(seed, grid, 0.1).coeffs for seed in range(1250)])
        assert draws.size == 10_000
        assert np.all(np.abs(draws) <= 0.1)
        assert abs(draws.mean()) < 0.01

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            init_spline(0, SplineGrid(), -1.0)


def test_grid_validation():
    with pytest.raises(ValueError):
        SplineGrid(lo=1.0, hi=-1.0)
    with pytest.raises(ValueError):
        SplineGrid(intervals=0)
    with pytest.raises(ValueError):
        SplineGrid(degree=-1)


def test_knot_vector_shape():
    grid = SplineGrid(lo=-1.0, hi=1.0, intervals=5, degree=3)
    assert len(grid.knots) == 5 + 2 * 3 + 1
    assert grid.num_basis == 8
    assert np.all(np.diff(grid.knots) >= 0)

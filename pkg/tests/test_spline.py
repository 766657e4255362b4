import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanevo.spline import SplineDomainError, SplineGrid, basis_deriv, basis_eval, basis_matrix, edge_activation, silu


def cox_de_boor(knots, i, k, x):
    """Textbook recursion, one term at a time, half-open intervals."""
    if k == 0:
        return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
    left = 0.0
    den = knots[i + k] - knots[i]
    if den > 0:
        left = (x - knots[i]) / den * cox_de_boor(knots, i, k - 1, x)
    right = 0.0
    den = knots[i + k + 1] - knots[i + 1]
    if den > 0:
        right = (knots[i + k + 1] - x) / den * cox_de_boor(knots, i + 1, k - 1, x)
    return left + right


class TestSplineGrid:
    def test_knot_layout(self):
        g = SplineGrid(-1.0, 1.0, 5)
        assert g.knots.size == 5 + 2 * 3 + 1
        assert g.n_basis == 8
        assert np.all(np.diff(g.knots) > 0)
        interior = g.knots[(g.knots >= -1 - 1e-12) & (g.knots <= 1 + 1e-12)]
        assert interior.size == 6
        np.testing.assert_allclose(np.diff(g.knots), 0.4)

    @pytest.mark.parametrize("lo,hi,G", [(1.0, 1.0, 3), (2.0, 1.0, 3), (0.0, 1.0, 0), (0.0, math.inf, 2)])
    def test_rejects_bad_grids(self, lo, hi, G):
        with pytest.raises(SplineDomainError):
            SplineGrid(lo, hi, G)

    def test_degree_fixed(self):
        with pytest.raises(SplineDomainError):
            SplineGrid(0.0, 1.0, 4, degree=2)


class TestBasisEval:
    def test_matches_recursion_oracle(self):
        g = SplineGrid(-1.0, 1.0, 5)
        got = basis_eval(g, 0.3)
        want = [cox_de_boor(g.knots, i, 3, 0.3) for i in range(g.n_basis)]
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-14)

    @pytest.mark.parametrize("G", [1, 2, 7, 16, 64])
    def test_oracle_random_points(self, G):
        g = SplineGrid(-3.0, 2.5, G)
        rng = np.random.default_rng(G)
        for x in rng.uniform(-3.0, 2.5, 20):
            want = [cox_de_boor(g.knots, i, 3, x) for i in range(g.n_basis)]
            np.testing.assert_allclose(basis_eval(g, x), want, atol=1e-13)

    @pytest.mark.parametrize("G", range(1, 65))
    def test_partition_of_unity(self, G):
        g = SplineGrid(-2.0, 3.0, G)
        xs = np.random.default_rng(G).uniform(-2.0, 3.0, 1000)
        B, _ = basis_matrix(g, xs)
        assert np.max(np.abs(B.sum(axis=1) - 1.0)) <= 1e-12
        assert B.min() >= 0.0 and B.max() <= 1.0

    def test_endpoints_partition(self):
        g = SplineGrid(0.0, 1.0, 4)
        for x in (0.0, 1.0):
            assert abs(basis_eval(g, x).sum() - 1.0) <= 1e-12

    def test_clamping(self):
        g = SplineGrid(-1.0, 1.0, 5)
        np.testing.assert_array_equal(basis_eval(g, 11.0), basis_eval(g, 1.0))
        np.testing.assert_array_equal(basis_eval(g, -7.0), basis_eval(g, -1.0))

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite(self, bad):
        g = SplineGrid(-1.0, 1.0, 5)
        with pytest.raises(SplineDomainError):
            basis_eval(g, bad)
        with pytest.raises(SplineDomainError):
            basis_deriv(g, bad)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-1.0, 1.0), st.integers(1, 64))
    def test_partition_property(self, x, G):
        g = SplineGrid(-1.0, 1.0, G)
        b = basis_eval(g, x)
        assert abs(b.sum() - 1.0) <= 1e-12
        assert np.all(b >= 0)


class TestBasisDeriv:
    def test_sum_zero_interior(self):
        g = SplineGrid(-1.0, 1.0, 5)
        for x in np.linspace(-0.95, 0.95, 37):
            assert abs(basis_deriv(g, x).sum()) <= 1e-10

    def test_finite_difference_at_point(self):
        g = SplineGrid(-1.0, 1.0, 5)
        h = 1e-5
        fd = (basis_eval(g, 0.3 + h) - basis_eval(g, 0.3 - h)) / (2 * h)
        d = basis_deriv(g, 0.3)
        big = np.abs(fd) > 1e-8
        np.testing.assert_allclose(d[big], fd[big], rtol=1e-5)
        assert np.all(np.abs(d[~big]) < 1e-8)

    @pytest.mark.parametrize("G", [1, 3, 8, 20, 64])
    def test_finite_difference_away_from_knots(self, G):
        g = SplineGrid(-2.0, 2.0, G)
        h = 1e-5
        rng = np.random.default_rng(100 + G)
        checked = 0
        for x in rng.uniform(-2.0, 2.0, 50):
            if np.min(np.abs(g.knots - x)) < 10 * h:
                continue
            fd = (basis_eval(g, x + h) - basis_eval(g, x - h)) / (2 * h)
            d = basis_deriv(g, x)
            scale = np.max(np.abs(d))
            assert np.max(np.abs(d - fd)) <= 1e-5 * scale
            checked += 1
        assert checked > 20

    def test_zero_outside(self):
        g = SplineGrid(-1.0, 1.0, 5)
        assert np.all(basis_deriv(g, 1.5) == 0.0)
        assert np.all(basis_deriv(g, -3.0) == 0.0)


class TestEdgeActivation:
    def test_zero_weights(self):
        g = SplineGrid(-1.0, 1.0, 5)
        assert edge_activation(g, np.ones(8), 0.0, 0.0, 0.4) == 0.0

    def test_silu_limits(self):
        g = SplineGrid(-1.0, 1.0, 5)
        c = np.zeros(8)
        assert edge_activation(g, c, 1.0, 0.0, 0.0) == 0.0
        assert abs(edge_activation(g, c, 1.0, 0.0, 40.0) - 40.0) < 1e-12
        assert silu(0.0) == 0.0

    def test_constant_coeffs(self):
        g = SplineGrid(-1.0, 1.0, 5)
        for x in np.linspace(-1, 1, 11):
            assert abs(edge_activation(g, np.full(8, 2.5), 0.0, 1.0, x) - 2.5) < 1e-12

    def test_length_mismatch(self):
        g = SplineGrid(-1.0, 1.0, 5)
        with pytest.raises(ValueError):
            edge_activation(g, np.ones(7), 1.0, 1.0, 0.0)

    def test_deterministic(self):
        g = SplineGrid(-1.0, 1.0, 9)
        c = np.random.default_rng(0).normal(size=12)
        assert edge_activation(g, c, 0.3, 0.7, 0.123) == edge_activation(g, c, 0.3, 0.7, 0.123)

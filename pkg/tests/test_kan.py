"""Spline basis identities, KAN layer behaviour, block composition, counting."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import kanpaint as kp
from kanpaint.errors import ConfigError, DimensionError
from kanpaint.gradcheck import check_gradients
from kanpaint.kan import (KanBlock, KanLayer, SplineGrid, bspline_basis,
                          count_parameters, fit_spline_coeffs)
from kanpaint.nn import Conv2d


def cox_de_boor_reference(x, knots, i, k):
    """Textbook recursive definition, evaluated pointwise."""
    if k == 0:
        return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
    left = 0.0
    if knots[i + k] != knots[i]:
        left = (x - knots[i]) / (knots[i + k] - knots[i]) \
            * cox_de_boor_reference(x, knots, i, k - 1)
    right = 0.0
    if knots[i + k + 1] != knots[i + 1]:
        right = (knots[i + k + 1] - x) / (knots[i + k + 1] - knots[i + 1]) \
            * cox_de_boor_reference(x, knots, i + 1, k - 1)
    return left + right


class TestSplineGrid:
    def test_knot_vector_length_and_monotonicity(self):
        grid = SplineGrid(-1, 1, 5, 3)
        knots = grid.knots
        assert len(knots) == 5 + 2 * 3 + 1
        assert np.all(np.diff(knots) > 0)
        assert grid.num_basis == 8

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            SplineGrid(1.0, -1.0, 5, 3)
        with pytest.raises(ConfigError):
            SplineGrid(-1, 1, 0, 3)
        with pytest.raises(ConfigError):
            SplineGrid(-1, 1, 5, 0)


class TestBasis:
    def test_hand_hat_function(self):
        # order 1, two intervals on [0, 1]: hats peaked at 0, 0.5, 1
        grid = SplineGrid(0.0, 1.0, 2, 1)
        values = bspline_basis(kp.Tensor([0.25]), grid).data[0]
        np.testing.assert_allclose(values, [0.5, 0.5, 0.0], atol=1e-12)

    def test_matches_recursive_reference(self, rng):
        grid = SplineGrid(-1.2, 0.7, 4, 3)
        xs = rng.uniform(-1.2, 0.699, size=20)
        mine = bspline_basis(kp.Tensor(xs), grid).data
        for j, x in enumerate(xs):
            ref = [cox_de_boor_reference(x, grid.knots, i, 3)
                   for i in range(grid.num_basis)]
            np.testing.assert_allclose(mine[j], ref, atol=1e-12)

    def test_clamping_is_idempotent_at_boundaries(self):
        grid = SplineGrid(-1, 1, 5, 3)
        at_min = bspline_basis(kp.Tensor([-1.0]), grid).data
        below = bspline_basis(kp.Tensor([-3.7]), grid).data
        np.testing.assert_array_equal(at_min, below)
        at_max = bspline_basis(kp.Tensor([1.0]), grid).data
        above = bspline_basis(kp.Tensor([250.0]), grid).data
        np.testing.assert_array_equal(at_max, above)
        np.testing.assert_allclose(at_max.sum(), 1.0, atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(order=st.integers(1, 3), intervals=st.integers(1, 8),
           lo=st.floats(-5, 0.9), span=st.floats(0.1, 8),
           u=st.floats(0.0, 1.0))
    def test_partition_of_unity_property(self, order, intervals, lo, span, u):
        grid = SplineGrid(lo, lo + span, intervals, order)
        x = lo + u * span
        total = bspline_basis(kp.Tensor([x]), grid).data.sum()
        assert abs(total - 1.0) < 1e-9

    @settings(max_examples=60, deadline=None)
    @given(order=st.integers(1, 3), intervals=st.integers(1, 8),
           u=st.floats(0.0, 1.0))
    def test_local_support_property(self, order, intervals, u):
        grid = SplineGrid(-1, 1, intervals, order)
        values = bspline_basis(kp.Tensor([-1 + 2 * u]), grid).data[0]
        assert (values > 1e-12).sum() <= order + 1
        assert values.min() >= 0.0 and values.max() <= 1.0

    def test_gradcheck_interior(self, rng):
        grid = SplineGrid(-1, 1, 5, 3)
        x = kp.Tensor(rng.uniform(-0.95, 0.95, size=8), requires_grad=True)
        w = kp.Tensor(rng.standard_normal((8, grid.num_basis)))
        check_gradients(lambda t: (bspline_basis(t, grid) * w).sum(), [x], rng)

    def test_clamped_inputs_get_zero_gradient(self):
        grid = SplineGrid(-1, 1, 5, 3)
        x = kp.Tensor([-2.0, 3.0], requires_grad=True)
        kp.backward(bspline_basis(x, grid).sum())
        np.testing.assert_array_equal(x.grad, 0.0)


class TestKanLayer:
    def test_zero_coeffs_identity_base_reduces_to_silu(self, rng):
        grid = SplineGrid(-1, 1, 5, 3)
        layer = KanLayer(3, 3, grid, rng)
        layer.spline_coeffs.data[...] = 0.0
        layer.base_weight.data[...] = np.eye(3)
        x = rng.standard_normal((6, 3))
        expected = kp.silu(kp.Tensor(x)).data
        np.testing.assert_array_equal(layer(kp.Tensor(x)).data, expected)

    def test_fitted_coefficients_approximate_identity(self, rng):
        grid = SplineGrid(-1, 1, 8, 3)
        layer = KanLayer(2, 1, grid, rng)
        layer.base_weight.data[...] = 0.0
        layer.spline_scale.data[...] = 1.0
        xs = np.linspace(-1, 1, 200)
        coeffs = fit_spline_coeffs(grid, xs, xs)
        layer.spline_coeffs.data[0, 0] = coeffs
        layer.spline_coeffs.data[0, 1] = coeffs
        x = rng.uniform(-0.98, 0.98, size=(40, 2))
        out = layer(kp.Tensor(x)).data[:, 0]
        np.testing.assert_allclose(out, x.sum(axis=1), atol=1e-3)

    def test_gradcheck_all_parameters(self, rng):
        grid = SplineGrid(-1, 1, 4, 2)
        layer = KanLayer(3, 4, grid, rng)
        x = kp.Tensor(rng.uniform(-0.9, 0.9, size=(5, 3)), requires_grad=True)
        worst = check_gradients(
            lambda t, *ps: (layer(t) ** 2).mean(),
            [x, layer.base_weight, layer.spline_scale, layer.spline_coeffs],
            rng, max_coords=16)
        assert worst < 1e-4

    def test_feature_mismatch(self, rng):
        layer = KanLayer(3, 4, SplineGrid(), rng)
        with pytest.raises(DimensionError):
            layer(kp.Tensor(rng.standard_normal((2, 5))))


class TestKanBlock:
    def test_constant_map_before_attention(self, rng):
        """Zero conv plus splines pinned at 0 give a constant ReLU(v) map."""
        grid = SplineGrid(-1, 1, 5, 3)
        block = KanBlock(2, 3, grid, rng)
        block.conv.weight.data[...] = 0.0
        block.conv.bias.data[...] = 0.0
        layer = block.kans[0]
        v = np.array([0.7, -0.4, 0.2])
        layer.base_weight.data[...] = 0.0
        layer.spline_scale.data[...] = 1.0
        # constant coefficients c make the spline sum equal c everywhere
        # (partition of unity), so out_o = in_features * c_o
        layer.spline_coeffs.data[...] = (v / 3.0)[:, None, None]
        x = rng.standard_normal((2, 2, 4, 4))
        h = block.conv(kp.Tensor(x))
        n, c, hh, ww = h.shape
        tokens = h.reshape(n, c, hh * ww).transpose(0, 2, 1).reshape(-1, c)
        pre_attention = kp.relu(layer(tokens)).data
        expected = np.maximum(v, 0.0)
        np.testing.assert_allclose(pre_attention,
                                   np.tile(expected, (n * hh * ww, 1)),
                                   atol=1e-12)

    def test_degenerate_single_pixel(self, rng):
        block = KanBlock(2, 4, SplineGrid(), rng)
        y = block(kp.Tensor(rng.standard_normal((1, 2, 1, 1))))
        assert y.shape == (1, 4, 1, 1)
        assert np.all(np.isfinite(y.data))

    def test_matches_manual_composition(self, rng):
        block = KanBlock(3, 4, SplineGrid(), rng)
        x = rng.standard_normal((1, 3, 6, 6))
        y = block(kp.Tensor(x)).data

        h = block.conv(kp.Tensor(x))
        n, c, hh, ww = h.shape
        tokens = h.reshape(n, c, hh * ww).transpose(0, 2, 1).reshape(-1, c)
        tokens = kp.relu(block.kans[0](tokens))
        fmap = tokens.reshape(n, hh * ww, c).transpose(0, 2, 1) \
            .reshape(n, c, hh, ww)
        expected = block.attention(fmap).data
        np.testing.assert_array_equal(y, expected)
        assert y.shape == (1, 4, 6, 6)
        assert np.all(np.isfinite(y))


class TestCounting:
    def test_kan_layer_count(self, rng):
        layer = KanLayer(2, 3, SplineGrid(-1, 1, 5, 3), rng)
        assert count_parameters(layer) == 3 * 2 * (5 + 3) + 3 * 2 + 3 * 2

    def test_conv_count(self, rng):
        conv = Conv2d(4, 8, 3, rng)
        assert count_parameters(conv) == 8 * 4 * 9 + 8

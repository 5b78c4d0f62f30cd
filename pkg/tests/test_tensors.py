import pytest
import numpy as np

from models import PoolMode
from services import oracles
from services.errors import DimensionError, GeometryError, ParameterError
from services.tensors import (
    adaptive_pool, as_feature_map, concat_channels, conv2d, dropout, flatten_grid, linear, matmul,
    sigmoid, silu, silu_grad, softplus, unflatten_tokens, upsample_nearest,
)
from utils.rng import SeededRng

@pytest.mark.unit
class TestShapes:
    """Feature map and token sequence coercion."""

    def test_feature_map_requires_three_axes(self):
        """A 2D array is not a feature map."""
        with pytest.raises(DimensionError):
            as_feature_map(np.zeros((4, 4)))

    def test_flatten_is_row_major(self):
        """Token k of a flattened grid is cell (k // W, k % W)."""
        grid = np.arange(12, dtype=float).reshape(2, 3, 2)
        seq = flatten_grid(grid)
        assert seq.shape == (6, 2)
        assert np.array_equal(seq[4], grid[1, 1])

    def test_unflatten_rejects_wrong_length(self):
        """Tokens must fill the grid exactly."""
        with pytest.raises(GeometryError):
            unflatten_tokens(np.zeros((5, 2)), 2, 3)

@pytest.mark.unit
class TestLinearAlgebra:
    """Ordered matrix products."""

    def test_matmul_matches_loop(self, rng):
        """Each entry equals the ascending-k loop sum bit for bit."""
        g = rng.generator()
        a, b = g.normal(size=(5, 7)), g.normal(size=(7, 3))
        out = matmul(a, b)
        for col in range(3):
            assert out[:, col].tolist() == oracles.loop_matvec(a, b[:, col])

    def test_matmul_shape_mismatch(self):
        """Inner dimensions must agree."""
        with pytest.raises(DimensionError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_linear_maps_channels(self):
        """linear acts on the trailing axis of a feature map."""
        x = np.ones((2, 2, 3))
        w = np.arange(6, dtype=float).reshape(3, 2)
        out = linear(x, w)
        assert out.shape == (2, 2, 2)
        assert np.array_equal(out[0, 0], np.array([6.0, 9.0]))

@pytest.mark.unit
class TestConv2d:
    """Cross-correlation with zero padding."""

    def test_identity_kernel(self):
        """A centred one-hot 3x3 kernel with padding 1 returns the input."""
        x = np.arange(18, dtype=float).reshape(3, 3, 2)
        kernel = np.zeros((3, 3, 2, 2))
        kernel[1, 1] = np.eye(2)
        assert np.array_equal(conv2d(x, kernel, padding=1), x)

    def test_box_filter_hand_computed(self):
        """3x3 ones kernel without padding on a 3x3 ramp sums every value."""
        x = np.arange(9, dtype=float).reshape(3, 3, 1)
        out = conv2d(x, np.ones((3, 3, 1, 1)))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 36.0

    @pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (2, 0)])
    def test_matches_loop_oracle(self, rng, stride, padding):
        """Vectorised and literal loop convolutions agree exactly."""
        g = rng.generator()
        x, kernel = g.normal(size=(9, 6, 3)), g.normal(size=(3, 3, 3, 2))
        assert np.array_equal(conv2d(x, kernel, stride, padding), oracles.loop_conv2d(x, kernel, stride, padding))

    def test_stride_two_output_size(self):
        """floor((H + 2p - k) / s) + 1."""
        out = conv2d(np.ones((8, 8, 1)), np.ones((3, 3, 1, 4)), stride=2, padding=1)
        assert out.shape == (4, 4, 4)

    def test_non_positive_output_rejected(self):
        """A 3x3 kernel does not fit a 2x2 map without padding."""
        with pytest.raises(GeometryError):
            conv2d(np.ones((2, 2, 1)), np.ones((3, 3, 1, 1)))

    def test_channel_mismatch(self):
        """Kernel input channels must match the map."""
        with pytest.raises(DimensionError):
            conv2d(np.ones((4, 4, 2)), np.ones((3, 3, 1, 1)), padding=1)

@pytest.mark.unit
class TestAdaptivePool:
    """Floor-partition adaptive pooling."""

    def test_average_and_max_hand_computed(self):
        """4x4 ramp pooled to 2x2."""
        x = np.arange(16, dtype=float).reshape(4, 4, 1)
        avg = adaptive_pool(x, 2, 2, PoolMode.AVG)[:, :, 0]
        mx = adaptive_pool(x, 2, 2, PoolMode.MAX)[:, :, 0]
        assert avg.tolist() == [[2.5, 4.5], [10.5, 12.5]]
        assert mx.tolist() == [[5.0, 7.0], [13.0, 15.0]]

    def test_uneven_windows(self):
        """5 rows into 2 cells split as [0, 2) and [2, 5)."""
        x = np.arange(5, dtype=float).reshape(5, 1, 1)
        avg = adaptive_pool(x, 2, 1, PoolMode.AVG)[:, 0, 0]
        assert avg.tolist() == [0.5, 3.0]

    def test_window_sums_exact(self, rng):
        """Average times area equals the ordered window sum for power-of-two areas."""
        x = rng.normal((16, 16, 2))
        assert np.array_equal(adaptive_pool(x, 4, 4) * 16.0, oracles.loop_window_sums(x, 4, 4))

    def test_uneven_max_matches_oracle(self, rng):
        """Max pooling with irregular windows."""
        x = rng.normal((7, 10, 3))
        assert np.array_equal(adaptive_pool(x, 3, 4, PoolMode.MAX), oracles.loop_window_max(x, 3, 4))

    def test_target_larger_than_input(self):
        """Pooling cannot enlarge a map."""
        with pytest.raises(GeometryError):
            adaptive_pool(np.ones((4, 4, 1)), 5, 4)

@pytest.mark.unit
class TestActivations:
    """Elementwise nonlinearities."""

    def test_sigmoid_is_stable_for_large_inputs(self):
        """No overflow warnings and correct saturation."""
        out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        assert out.tolist() == [0.0, 0.5, 1.0]

    def test_softplus_values(self):
        """softplus(0) = ln 2 and softplus(x) ~ x for large x."""
        assert softplus(0.0) == pytest.approx(np.log(2.0))
        assert softplus(50.0) == pytest.approx(50.0)

    def test_silu_and_derivative(self):
        """silu(0) = 0, silu'(0) = 1/2."""
        assert silu(0.0) == 0.0
        assert silu_grad(0.0) == 0.5
        h = 1e-6
        assert silu_grad(1.3) == pytest.approx((silu(1.3 + h) - silu(1.3 - h)) / (2 * h), rel=1e-8)

@pytest.mark.unit
class TestDropout:
    """Inverted dropout."""

    def test_evaluation_is_identity(self, rng):
        """Evaluation mode returns the input unchanged."""
        x = rng.normal((4, 4, 2))
        assert np.array_equal(dropout(x, 0.5, rng, training=False), x)

    def test_training_zeroes_and_rescales(self):
        """Survivors are scaled by 1 / (1 - p)."""
        x = np.ones((32, 32, 1))
        out = dropout(x, 0.25, SeededRng(seed=3), training=True)
        assert set(np.unique(out).tolist()) <= {0.0, 1.0 / 0.75}
        assert 0 < np.count_nonzero(out == 0.0) < x.size

    def test_same_seed_same_mask(self):
        """One seed, one mask."""
        x = np.ones((8, 8, 1))
        a = dropout(x, 0.5, SeededRng(seed=9, path=(1,)), training=True)
        b = dropout(x, 0.5, SeededRng(seed=9, path=(1,)), training=True)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("p", [1.0, -0.1, 1.5])
    def test_invalid_probability(self, p):
        """p must lie in [0, 1)."""
        with pytest.raises(ParameterError):
            dropout(np.ones((2, 2, 1)), p, SeededRng(), training=True)

@pytest.mark.unit
class TestResizeAndConcat:
    """Channel concatenation and nearest upsampling."""

    def test_concat_stacks_channels(self):
        """Channels add up in list order."""
        out = concat_channels([np.zeros((2, 2, 1)), np.ones((2, 2, 3))])
        assert out.shape == (2, 2, 4)
        assert out[0, 0].tolist() == [0.0, 1.0, 1.0, 1.0]

    def test_concat_rejects_spatial_mismatch(self):
        """All maps must share height and width."""
        with pytest.raises(GeometryError):
            concat_channels([np.zeros((2, 2, 1)), np.zeros((2, 3, 1))])

    def test_upsample_doubles(self):
        """Each source cell becomes a 2x2 block."""
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
        out = upsample_nearest(x, 4, 4)[:, :, 0]
        assert out.tolist() == [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]

@pytest.mark.unit
class TestSeededRng:
    """Counter-based seeded streams."""

    def test_children_are_independent_and_repeatable(self):
        """Same path, same numbers; different path, different numbers."""
        root = SeededRng(seed=5)
        assert np.array_equal(root.child(0).uniform(0, 1, 8), root.child(0).uniform(0, 1, 8))
        assert not np.array_equal(root.child(0).uniform(0, 1, 8), root.child(1).uniform(0, 1, 8))

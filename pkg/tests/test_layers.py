"""Test cases for the attention, MLP and stage-boundary layers."""
import dataclasses
import unittest

import numpy as np
from numpy.testing import assert_allclose
from numpy.testing import assert_array_equal

from revprop.exceptions import ConfigError
from revprop.exceptions import ShapeError
from revprop.gradcheck import numeric_grad
from revprop.gradcheck import random_block
from revprop.gradcheck import relative_error
from revprop.layers import AttentionParams
from revprop.layers import BoundaryParams
from revprop.layers import FusionKind
from revprop.layers import MlpParams
from revprop.layers import attention_forward
from revprop.layers import attention_vjp
from revprop.layers import fuse
from revprop.layers import fuse_average
from revprop.layers import fuse_vjp
from revprop.layers import mlp_forward
from revprop.layers import mlp_vjp
from revprop.layers import patch_merge
from revprop.layers import patch_merge_vjp
from revprop.tensor import DType
from revprop.tensor import Rng

FD_TOL = 1e-6


def _draw(name: str, *shape: int) -> np.ndarray:
    return Rng(11).child(name).normal(shape, DType.F64)


class AttentionTestCase(unittest.TestCase):
    def setUp(self) -> None:
        self.params = random_block(8, 2, Rng(0)).f

    def test_zero_params(self) -> None:
        """Test that attention with every parameter zero outputs exactly zero."""
        y, _ = attention_forward(_draw("x", 2, 4, 8), self.params.map(np.zeros_like))
        assert_array_equal(y, np.zeros((2, 4, 8)))

    def test_full_window(self) -> None:
        """Test that a window spanning every token is plain attention, bit for bit."""
        x = _draw("x", 2, 4, 8)
        full, _ = attention_forward(x, self.params)
        windowed, _ = attention_forward(x, dataclasses.replace(self.params, window=4))
        assert_array_equal(windowed, full)

    def test_output_shape(self) -> None:
        """Test that attention preserves the input shape."""
        y, _ = attention_forward(_draw("x", 2, 4, 8), self.params)
        self.assertEqual(y.shape, (2, 4, 8))

    def test_windows_are_independent(self) -> None:
        """Test that windowed attention runs each window on its own."""
        windowed = dataclasses.replace(self.params, window=2)
        x = _draw("x", 1, 4, 8)
        y, _ = attention_forward(x, windowed)
        left, _ = attention_forward(np.ascontiguousarray(x[:, :2]), self.params)
        right, _ = attention_forward(np.ascontiguousarray(x[:, 2:]), self.params)
        assert_allclose(y[:, :2], left, rtol=1e-12, atol=1e-12)
        assert_allclose(y[:, 2:], right, rtol=1e-12, atol=1e-12)

    def test_window_must_divide_tokens(self) -> None:
        """Test that a window must divide the sequence length."""
        windowed = dataclasses.replace(self.params, window=3)
        with self.assertRaises(ShapeError):
            attention_forward(_draw("x", 1, 4, 8), windowed)

    def test_wrong_width(self) -> None:
        """Test that the input width must match the parameters."""
        with self.assertRaises(ShapeError):
            attention_forward(_draw("x", 1, 4, 6), self.params)

    def test_heads_must_divide_width(self) -> None:
        """Test that heads must divide the width."""
        with self.assertRaises(ShapeError):
            dataclasses.replace(self.params, heads=3)

    def test_weight_shapes(self) -> None:
        """Test that mismatched projections are rejected."""
        with self.assertRaises(ShapeError):
            AttentionParams(
                w_qkv=np.zeros((8, 16)),
                w_out=np.zeros((8, 8)),
                ln_gamma=np.ones(8),
                ln_beta=np.zeros(8),
                heads=2,
            )

    def test_vjp(self) -> None:
        """Test attention cotangents against finite differences."""
        x = _draw("x", 1, 4, 8)
        w = _draw("w", 1, 4, 8)
        _, cache = attention_forward(x, self.params)
        d_x, grads = attention_vjp(cache, w)

        def objective() -> float:
            return float(np.sum(attention_forward(x, self.params)[0] * w))

        self.assertLess(relative_error(d_x, numeric_grad(objective, x)), FD_TOL)
        for name, array in self.params.arrays().items():
            with self.subTest(param=name):
                numeric = numeric_grad(objective, array)
                error = relative_error(grads.arrays()[name], numeric)
                self.assertLess(error, FD_TOL)

    def test_vjp_cotangent_shape(self) -> None:
        """Test that the cotangent must match the output shape."""
        _, cache = attention_forward(_draw("x", 1, 4, 8), self.params)
        with self.assertRaises(ShapeError):
            attention_vjp(cache, np.zeros((1, 2, 8)))


class MlpTestCase(unittest.TestCase):
    def setUp(self) -> None:
        self.params = random_block(8, 2, Rng(0)).g

    def test_zero_params(self) -> None:
        """Test that an MLP with every parameter zero outputs exactly zero."""
        y, _ = mlp_forward(_draw("x", 2, 4, 8), self.params.map(np.zeros_like))
        assert_array_equal(y, np.zeros((2, 4, 8)))

    def test_output_shape(self) -> None:
        """Test that the MLP preserves the input shape."""
        y, _ = mlp_forward(_draw("x", 2, 3, 8), self.params)
        self.assertEqual(y.shape, (2, 3, 8))

    def test_hidden_width(self) -> None:
        """Test that the hidden width may not be smaller than the model width."""
        with self.assertRaises(ShapeError):
            MlpParams(
                w1=np.zeros((8, 4)),
                b1=np.zeros(4),
                w2=np.zeros((4, 8)),
                b2=np.zeros(8),
                ln_gamma=np.ones(8),
                ln_beta=np.zeros(8),
            )

    def test_vjp(self) -> None:
        """Test MLP cotangents against finite differences."""
        x = _draw("x", 1, 3, 8)
        w = _draw("w", 1, 3, 8)
        _, cache = mlp_forward(x, self.params)
        d_x, grads = mlp_vjp(cache, w)

        def objective() -> float:
            return float(np.sum(mlp_forward(x, self.params)[0] * w))

        self.assertLess(relative_error(d_x, numeric_grad(objective, x)), FD_TOL)
        for name, array in self.params.arrays().items():
            with self.subTest(param=name):
                numeric = numeric_grad(objective, array)
                error = relative_error(grads.arrays()[name], numeric)
                self.assertLess(error, FD_TOL)

    def test_cache_bytes(self) -> None:
        """Test that the cache reports the bytes of its activations."""
        _, cache = mlp_forward(_draw("x", 1, 3, 8), self.params)
        # x_hat, x_norm: 24 each; rstd: 3; hidden, act: 48 each.
        self.assertEqual(cache.nbytes, (24 + 24 + 3 + 48 + 48) * 8)


class BoundaryTestCase(unittest.TestCase):
    def test_sequence_merge(self) -> None:
        """Test that adjacent tokens are concatenated in order."""
        p = BoundaryParams(merge_w=np.eye(2))
        x = np.arange(4.0).reshape(1, 4, 1)
        y, _ = patch_merge(x, p)
        assert_array_equal(y, [[[0.0, 1.0], [2.0, 3.0]]])

    def test_grid_merge(self) -> None:
        """Test that 2x2 neighbourhoods are gathered row by row."""
        p = BoundaryParams(merge_w=np.eye(4), grid=(2, 4))
        x = np.arange(8.0).reshape(1, 8, 1)
        y, _ = patch_merge(x, p)
        assert_array_equal(y, [[[0.0, 1.0, 4.0, 5.0], [2.0, 3.0, 6.0, 7.0]]])
        self.assertEqual(p.next_grid, (1, 2))

    def test_merge_widths(self) -> None:
        """Test the widths entering and leaving a boundary."""
        p = BoundaryParams(merge_w=np.zeros((16, 16)))
        self.assertEqual((p.reduction, p.width, p.next_width), (2, 8, 16))

    def test_odd_token_count(self) -> None:
        """Test that tokens must divide evenly into groups."""
        p = BoundaryParams(merge_w=np.zeros((2, 2)))
        with self.assertRaises(ShapeError):
            patch_merge(np.zeros((1, 3, 1)), p)

    def test_merge_vjp_is_adjoint(self) -> None:
        """Test that the merge cotangent is the adjoint of the merge."""
        p = BoundaryParams(merge_w=_draw("merge_w", 16, 16), grid=(2, 2))
        x = _draw("x", 2, 4, 4)
        y, cache = patch_merge(x, p)
        d_y = _draw("d_y", *y.shape)
        d_x, _ = patch_merge_vjp(cache, d_y)
        assert_allclose(np.sum(y * d_y), np.sum(x * d_x), rtol=1e-12)

    def test_merge_weight_gradient(self) -> None:
        """Test the merge weight cotangent against finite differences."""
        p = BoundaryParams(merge_w=_draw("merge_w", 8, 8))
        x = _draw("x", 1, 4, 4)
        w = _draw("w", 1, 2, 8)
        _, cache = patch_merge(x, p)
        _, d_merge_w = patch_merge_vjp(cache, w)

        def objective() -> float:
            return float(np.sum(patch_merge(x, p)[0] * w))

        numeric = numeric_grad(objective, p.merge_w)
        self.assertLess(relative_error(d_merge_w, numeric), FD_TOL)

    def test_fuse_average(self) -> None:
        """Test that averaging fusion halves the sum."""
        a = np.full((1, 2, 2), 1.0)
        b = np.full((1, 2, 2), 3.0)
        assert_array_equal(fuse_average(a, b), np.full((1, 2, 2), 2.0))
        _, cache = fuse(a, b, BoundaryParams(merge_w=np.zeros((4, 4))))
        d_a, d_b, d_w = fuse_vjp(cache, np.ones((1, 2, 2)))
        assert_array_equal(d_a, np.full((1, 2, 2), 0.5))
        assert_array_equal(d_b, np.full((1, 2, 2), 0.5))
        self.assertIsNone(d_w)

    def test_fuse_shape_mismatch(self) -> None:
        """Test that only equally shaped streams can be fused."""
        with self.assertRaises(ShapeError):
            fuse_average(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))

    def test_fuse_projection_gradients(self) -> None:
        """Test projected fusion against finite differences."""
        p = BoundaryParams(
            merge_w=np.zeros((8, 8)),
            fusion_kind=FusionKind.MLP,
            fusion_w=_draw("fusion_w", 8, 4),
        )
        a = _draw("a", 1, 2, 4)
        b = _draw("b", 1, 2, 4)
        w = _draw("w", 1, 2, 4)
        _, cache = fuse(a, b, p)
        d_a, d_b, d_w = fuse_vjp(cache, w)

        def objective() -> float:
            return float(np.sum(fuse(a, b, p)[0] * w))

        assert p.fusion_w is not None and d_w is not None
        self.assertLess(relative_error(d_a, numeric_grad(objective, a)), FD_TOL)
        self.assertLess(relative_error(d_b, numeric_grad(objective, b)), FD_TOL)
        numeric = numeric_grad(objective, p.fusion_w)
        self.assertLess(relative_error(d_w, numeric), FD_TOL)

    def test_fusion_weight_presence(self) -> None:
        """Test that a projection is given exactly for projected fusion."""
        with self.assertRaises(ShapeError):
            BoundaryParams(merge_w=np.zeros((8, 8)), fusion_kind=FusionKind.MLP)
        with self.assertRaises(ShapeError):
            BoundaryParams(merge_w=np.zeros((8, 8)), fusion_w=np.zeros((8, 4)))

    def test_parse_fusion_kind(self) -> None:
        """Test fusion kind names."""
        self.assertIs(FusionKind.parse("MLP"), FusionKind.MLP)
        with self.assertRaises(ConfigError):
            FusionKind.parse("concat")


if __name__ == "__main__":
    unittest.main()

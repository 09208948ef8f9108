"""Modulation branches, the bounded attention map, and paka_conv2d."""

import numpy as np
import pytest

from paka import ops
from paka.attention import (
    ChannelBranch,
    DirectionalBranch,
    PakaLayer,
    branch_hidden_width,
    kernel_attention,
    paka_conv2d,
)
from paka.gradcheck import _activate_branches
from paka.ops import ConvSpec, ShapeError
from paka.tensor import Rng, Tensor

from oracles import attention_oracle


def _warm_eval(layer, x_shape, seed=0):
    """Activate branches, populate running stats, switch to eval mode."""
    _activate_branches(layer, Rng(seed))
    layer(Tensor(Rng(seed + 1).normal(x_shape)))
    layer.set_mode(False)


class TestBranches:
    def test_hidden_width_floor(self):
        assert branch_hidden_width(3) == 4
        assert branch_hidden_width(16) == 4
        assert branch_hidden_width(64) == 16

    def test_fresh_branches_output_zero(self):
        # gamma starts at zero, so a fresh branch emits exactly zero even in
        # train mode
        x = Tensor(Rng(0).normal((2, 6, 5, 5)))
        cb = ChannelBranch(6, Rng(1))
        db = DirectionalBranch(6, ConvSpec(3), Rng(2))
        assert np.all(cb(x).data == 0.0)
        assert np.all(db(x).data == 0.0)

    def test_branch_shapes(self):
        x = Tensor(Rng(0).normal((2, 6, 5, 5)))
        assert ChannelBranch(6, Rng(1))(x).data.shape == (2, 6, 5, 5)
        assert ChannelBranch(6, Rng(1), out_ch=3)(x).data.shape == (2, 3, 5, 5)
        spec = ConvSpec(3, dilation=2)
        assert DirectionalBranch(6, spec, Rng(2))(x).data.shape == (2, 9, 5, 5)


class TestKernelAttention:
    def test_formula(self):
        rng = Rng(3)
        m, n = rng.normal((2, 9, 4, 4)), rng.normal((2, 3, 4, 4))
        got = kernel_attention(Tensor(m), Tensor(n)).data
        np.testing.assert_allclose(got, attention_oracle(m, n), atol=1e-15)

    def test_open_bound(self):
        rng = Rng(4)
        a = kernel_attention(
            Tensor(rng.normal((2, 9, 8, 8)) * 2.0), Tensor(rng.normal((2, 5, 8, 8)) * 2.0)
        ).data
        assert np.all(a > 0.0) and np.all(a < 2.0)

    def test_saturation_limits(self):
        a = kernel_attention(
            Tensor(np.full((1, 9, 2, 2), 1e6)), Tensor(np.zeros((1, 1, 2, 2)))
        ).data
        assert np.all(np.abs(a - 2.0) <= 1e-12)
        a = kernel_attention(
            Tensor(np.full((1, 9, 2, 2), -1e6)), Tensor(np.zeros((1, 1, 2, 2)))
        ).data
        assert np.all(np.abs(a) <= 1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            kernel_attention(Tensor(np.zeros((1, 9, 4, 4))), Tensor(np.zeros((1, 3, 5, 5))))


class TestPakaLayer:
    def test_fresh_layer_is_plain_conv(self):
        # zero-gamma branch norms make the attention exactly 1 everywhere
        rng = Rng(5)
        layer = PakaLayer(3, 4, ConvSpec(3), rng.spawn(1))
        x = Tensor(rng.normal((2, 3, 6, 6)))
        plain = ops.conv2d(x, layer.weight, layer.bias, layer.spec)
        diff = np.abs(layer(x).data - plain.data).max()
        assert diff == 0.0

    def test_fused_matches_materialized(self):
        rng = Rng(6)
        layer = PakaLayer(3, 4, ConvSpec(3, dilation=2), rng.spawn(1))
        _warm_eval(layer, (2, 3, 6, 6))
        x = Tensor(rng.normal((2, 3, 6, 6)))
        layer.fused = True
        yf = layer(x).data
        layer.fused = False
        ym = layer(x).data
        assert np.abs(yf - ym).max() <= 1e-12

    def test_fused_matches_materialized_gradients(self):
        rng = Rng(7)
        layer = PakaLayer(2, 2, ConvSpec(3), rng.spawn(1))
        _warm_eval(layer, (1, 2, 5, 5))
        x = rng.normal((1, 2, 5, 5))
        grads = {}
        for fused in (True, False):
            layer.fused = fused
            layer.zero_grad()
            xt = Tensor(x.copy(), requires_grad=True)
            ops.tmean(ops.square(layer(xt))).backward()
            grads[fused] = (xt.grad.copy(), layer.weight.grad.copy())
        np.testing.assert_allclose(grads[True][0], grads[False][0], atol=1e-12)
        np.testing.assert_allclose(grads[True][1], grads[False][1], atol=1e-12)

    def test_attention_shared_across_output_channels(self):
        # duplicating an output channel's weights must duplicate its output
        rng = Rng(8)
        layer = PakaLayer(3, 2, ConvSpec(3), rng.spawn(1))
        _warm_eval(layer, (1, 3, 5, 5))
        layer.weight.data[1] = layer.weight.data[0]
        layer.bias.data[1] = layer.bias.data[0]
        y = layer(Tensor(rng.normal((1, 3, 5, 5)))).data
        np.testing.assert_allclose(y[:, 0], y[:, 1], atol=1e-14)

    def test_record_captures_modulation(self):
        rng = Rng(9)
        spec = ConvSpec(3, dilation=2)
        layer = PakaLayer(3, 2, spec, rng.spawn(1))
        record = {}
        paka_conv2d(Tensor(rng.normal((1, 3, 5, 5))), layer, record=record)
        assert record["m"].shape == (1, 9, 5, 5)
        assert record["dilation"] == 2
        assert record["offsets"] == spec.offsets()

    def test_input_validation(self):
        layer = PakaLayer(3, 2, ConvSpec(3), Rng(0))
        with pytest.raises(ShapeError):
            layer(Tensor(np.zeros((1, 4, 5, 5))))
        strided = PakaLayer(3, 2, ConvSpec(3, stride=2, padding=1), Rng(0))
        with pytest.raises(ShapeError):
            strided(Tensor(np.zeros((1, 3, 6, 6))))

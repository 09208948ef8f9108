"""Joint up-sampling layer and the guided depth super-resolution network."""

import numpy as np
import pytest

from paka import ops
from paka.gradcheck import _activate_branches
from paka.ops import ShapeError
from paka.tensor import Rng, Tensor
from paka.upsampling import DsrNet, JointUpLayer, bicubic_upsample, dsr_forward


class TestJointUpLayer:
    def test_output_shape(self):
        rng = Rng(0)
        layer = JointUpLayer(3, 2, 5, rng.spawn(1))
        t = Tensor(rng.normal((2, 3, 4, 4)))
        g = Tensor(rng.normal((2, 2, 8, 8)))
        assert layer(t, g).data.shape == (2, 5, 8, 8)

    def test_fresh_layer_is_plain_subpixel_conv(self):
        # zero-gamma branches give attention 1, leaving pure phase banks
        rng = Rng(1)
        layer = JointUpLayer(2, 3, 2, rng.spawn(1))
        t = Tensor(rng.normal((1, 2, 3, 3)))
        g = Tensor(rng.normal((1, 3, 6, 6)))
        got = layer(t, g).data
        cols = ops.im2col(t, layer.spec)
        phases = [
            ops.add_channel_bias(
                ops.kernel_contract(cols, layer.banks[i]), layer.bank_biases[i]
            )
            for i in range(4)
        ]
        ref = ops.phase_interleave(phases).data
        assert np.abs(got - ref).max() == 0.0

    def test_guide_shape_validation(self):
        rng = Rng(2)
        layer = JointUpLayer(2, 3, 2, rng.spawn(1))
        t = Tensor(rng.normal((1, 2, 3, 3)))
        with pytest.raises(ShapeError):
            layer(t, Tensor(rng.normal((1, 3, 5, 6))))
        with pytest.raises(ShapeError):
            layer(t, Tensor(rng.normal((1, 4, 6, 6))))

    def test_record_at_high_resolution(self):
        rng = Rng(3)
        layer = JointUpLayer(2, 3, 2, rng.spawn(1))
        record = {}
        layer(Tensor(rng.normal((1, 2, 3, 3))), Tensor(rng.normal((1, 3, 6, 6))), record=record)
        assert record["m"].shape == (1, 9, 6, 6)
        assert record["dilation"] == 1

    def test_parameters_and_state_cover_everything(self):
        layer = JointUpLayer(2, 3, 2, Rng(4))
        names = [n for n, _ in layer.parameters()]
        assert sum(n.startswith("banks.") for n in names) == 4
        assert sum(n.startswith("bank_biases.") for n in names) == 4
        assert any(n.startswith("channel_branch.") for n in names)
        assert any(n.startswith("directional_branch.") for n in names)
        state = [n for n, _ in layer.state_arrays()]
        assert "channel_branch.norm.run_mean" in state


class TestDsrNet:
    def test_initial_output_is_bicubic(self):
        # the head is zero-initialized, so a fresh network is exactly the
        # bicubic baseline
        rng = Rng(5)
        net = DsrNet(4, rng.spawn(1), width=8)
        lr = Tensor(Rng(6).uniform((2, 1, 6, 6)))
        guide = Tensor(Rng(7).uniform((2, 1, 24, 24)))
        got = net(lr, guide).data
        ref = bicubic_upsample(lr, 4).data
        assert np.abs(got - ref).max() == 0.0

    @pytest.mark.parametrize("scale,stages", [(2, 1), (4, 2)])
    def test_scale_and_trace(self, scale, stages):
        rng = Rng(8)
        net = DsrNet(scale, rng.spawn(1), width=8)
        lr = Tensor(Rng(9).uniform((1, 1, 6, 6)))
        guide = Tensor(Rng(10).uniform((1, 1, 6 * scale, 6 * scale)))
        trace = []
        out = dsr_forward(lr, guide, net, trace=trace)
        assert out.data.shape == (1, 1, 6 * scale, 6 * scale)
        assert len(trace) == stages
        # stages run coarsest first; each record sits at its HR resolution
        assert [rec["m"].shape[2] for rec in trace] == [6 * 2 ** (i + 1) for i in range(stages)]

    def test_invalid_scale(self):
        with pytest.raises(ValueError):
            DsrNet(3, Rng(0))

    def test_input_validation(self):
        net = DsrNet(2, Rng(0), width=8)
        with pytest.raises(ShapeError):
            net(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 1, 8, 8))))
        with pytest.raises(ShapeError):
            net(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 9, 8))))

    def test_trained_mode_roundtrip(self):
        # after branch activation the net still produces finite outputs and
        # eval mode is deterministic
        rng = Rng(11)
        net = DsrNet(2, rng.spawn(1), width=8)
        _activate_branches(net, rng.spawn(2))
        lr = Tensor(Rng(12).uniform((1, 1, 5, 5)))
        guide = Tensor(Rng(13).uniform((1, 1, 10, 10)))
        net(lr, guide)  # populate running stats
        net.set_mode(False)
        a = net(lr, guide).data
        b = net(lr, guide).data
        np.testing.assert_array_equal(a, b)
        assert np.isfinite(a).all()


def test_bicubic_upsample_is_ops_upsample():
    x = Tensor(Rng(14).normal((1, 2, 4, 4)))
    np.testing.assert_array_equal(
        bicubic_upsample(x, 2).data, ops.upsample(x, 2, "bicubic").data
    )

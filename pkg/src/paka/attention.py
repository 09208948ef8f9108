"""Pixel-adaptive kernel attention: modulation branches, the bounded
attention map, and the attention-modulated convolution.

The attention A(b, k, j, p) = 1 + tanh(m_k + n_j) rescales each (tap k,
input channel j) product of a shared convolution per pixel. It is shared
across output channels. Two forward paths exist: a materialized one that
builds A as a graph node, and a fused one that never exposes it; both
produce identical results.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .layers import BatchNorm2d, Conv2d, Module
from .ops import ConvSpec, ShapeError
from .tensor import Rng, Tensor, make_op


def branch_hidden_width(in_ch: int) -> int:
    return max(4, in_ch // 4)


class ChannelBranch(Module):
    """Per-pixel channel modulation n: 1x1 conv, relu, 1x1 conv, BN.

    The final BN scale starts at zero so n == 0 on a fresh layer.
    """

    def __init__(self, in_ch: int, rng: Rng, hidden: int | None = None, out_ch: int | None = None):
        self.in_ch = in_ch
        out_ch = in_ch if out_ch is None else out_ch
        hidden = branch_hidden_width(in_ch) if hidden is None else hidden
        one = ConvSpec(kernel_size=1)
        self.reduce = Conv2d(in_ch, hidden, one, rng.spawn(1))
        self.expand = Conv2d(hidden, out_ch, one, rng.spawn(2))
        self.norm = BatchNorm2d(out_ch, gamma_init=0.0)

    def __call__(self, x: Tensor) -> Tensor:
        return self.norm(self.expand(ops.relu(self.reduce(x))))


class DirectionalBranch(Module):
    """Per-pixel tap modulation m with K output channels.

    The first conv copies the shared convolution's kernel size, dilation,
    and stride, giving the branch the same receptive field.
    """

    def __init__(self, in_ch: int, spec: ConvSpec, rng: Rng, hidden: int | None = None):
        self.in_ch = in_ch
        hidden = branch_hidden_width(in_ch) if hidden is None else hidden
        self.spatial = Conv2d(in_ch, hidden, spec, rng.spawn(1))
        self.project = Conv2d(hidden, spec.taps, ConvSpec(kernel_size=1), rng.spawn(2))
        self.norm = BatchNorm2d(spec.taps, gamma_init=0.0)

    def __call__(self, x: Tensor) -> Tensor:
        return self.norm(self.project(self.spatial(x)))


def kernel_attention(m: Tensor, n: Tensor) -> Tensor:
    """A(b,k,j,h,w) = 1 + tanh(m(b,k,h,w) + n(b,j,h,w)), open-bounded in (0,2)."""
    if m.data.shape[0] != n.data.shape[0] or m.data.shape[2:] != n.data.shape[2:]:
        raise ShapeError(f"modulation shapes disagree: {m.data.shape} vs {n.data.shape}")
    b, k, h, w = m.data.shape
    m5 = ops.reshape(m, (b, k, 1, h, w))
    n5 = ops.reshape(n, (b, 1, n.data.shape[1], h, w))
    return ops.add_const(ops.tanh(ops.add(m5, n5)), 1.0)


def _fused_modulated_contract(cols: Tensor, m: Tensor, n: Tensor, w: Tensor) -> Tensor:
    """y = sum_{k,j} cols * (1 + tanh(m_k + n_j)) * w, without a graph node for A."""
    a = 1.0 + np.tanh(m.data[:, :, None] + n.data[:, None, :])
    xa = cols.data * a
    out = np.einsum("okj,bkjhw->bohw", w.data, xa, optimize=True)

    def bw(g):
        g_xa = np.einsum("okj,bohw->bkjhw", w.data, g, optimize=True)
        w.accumulate_grad(np.einsum("bohw,bkjhw->okj", g, xa, optimize=True))
        cols.accumulate_grad(g_xa * a)
        # d tanh = 1 - tanh^2 = 1 - (a - 1)^2
        g_s = g_xa * cols.data * (1.0 - (a - 1.0) ** 2)
        m.accumulate_grad(g_s.sum(axis=2))
        n.accumulate_grad(g_s.sum(axis=1))

    return make_op(out, (cols, m, n, w), bw)


class PakaLayer(Module):
    """Shared-weight convolution whose taps are rescaled by pixel-adaptive
    attention from the two modulation branches.

    Branch BN scales start at zero, so a fresh layer computes exactly the
    plain convolution with its shared weights.
    """

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        spec: ConvSpec,
        rng: Rng,
        hidden: int | None = None,
        fused: bool = True,
    ):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.spec = spec
        self.fused = fused
        self.weight = Tensor(
            rng.spawn(0).normal((out_ch, spec.taps, in_ch), std=np.sqrt(2.0 / (spec.taps * in_ch))),
            requires_grad=True,
        )
        self.weight.decay = True
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)
        self.channel_branch = ChannelBranch(in_ch, rng.spawn(3), hidden=hidden)
        self.directional_branch = DirectionalBranch(in_ch, spec, rng.spawn(4), hidden=hidden)

    def channel_modulation(self, x: Tensor) -> Tensor:
        return self.channel_branch(x)

    def directional_modulation(self, x: Tensor) -> Tensor:
        return self.directional_branch(x)

    def attention(self, x: Tensor) -> Tensor:
        return kernel_attention(self.directional_modulation(x), self.channel_modulation(x))

    def __call__(self, x: Tensor) -> Tensor:
        return paka_conv2d(x, self)


def paka_conv2d(x: Tensor, layer: PakaLayer, record: dict | None = None) -> Tensor:
    """Attention-modulated convolution of ``x`` with ``layer``.

    ``record``, if given, captures the directional modulation map for
    propagational-field queries.
    """
    if x.data.ndim != 4 or x.data.shape[1] != layer.in_ch:
        raise ShapeError(
            f"input shape {x.data.shape} does not match layer in_ch={layer.in_ch}"
        )
    if layer.spec.stride != 1:
        raise ShapeError("attention-modulated convolution supports stride 1 only")
    m = layer.directional_modulation(x)
    n = layer.channel_modulation(x)
    cols = ops.im2col(x, layer.spec)
    if record is not None:
        record["m"] = m.data.copy()
        record["dilation"] = layer.spec.dilation
        record["offsets"] = layer.spec.offsets()
    if layer.fused:
        y = _fused_modulated_contract(cols, m, n, layer.weight)
    else:
        a = kernel_attention(m, n)
        y = ops.kernel_contract(ops.mul(cols, a), layer.weight)
    return ops.add_channel_bias(y, layer.bias)

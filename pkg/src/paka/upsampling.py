"""Guided joint up-sampling: attention computed from high-resolution guide
features modulates a bank of sub-pixel convolutions over low-resolution
target features. A small guided depth super-resolution network stacks these
layers over an encoder pair, predicting a residual over bicubic.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .attention import ChannelBranch, DirectionalBranch, kernel_attention
from .layers import Conv2d, Module
from .ops import ConvSpec, ShapeError
from .tensor import Rng, Tensor


class JointUpLayer(Module):
    """x2 up-sampling layer: one sub-pixel weight bank per output phase,
    shared attention computed at high resolution from the guide.

    Fresh branches (zero BN scale) reduce the layer to a plain sub-pixel
    convolution of the target features.
    """

    factor = 2

    def __init__(self, target_ch: int, guide_ch: int, out_ch: int, rng: Rng):
        self.target_ch = target_ch
        self.guide_ch = guide_ch
        self.out_ch = out_ch
        self.spec = ConvSpec(kernel_size=3, dilation=1)
        k = self.spec.taps
        nb = self.factor * self.factor
        std = np.sqrt(2.0 / (k * target_ch))
        self.banks = [
            Tensor(rng.spawn(i).normal((out_ch, k, target_ch), std=std), requires_grad=True)
            for i in range(nb)
        ]
        for t in self.banks:
            t.decay = True
        self.bank_biases = [Tensor(np.zeros(out_ch), requires_grad=True) for _ in range(nb)]
        self.channel_branch = ChannelBranch(guide_ch, rng.spawn(100), out_ch=target_ch)
        self.directional_branch = DirectionalBranch(guide_ch, self.spec, rng.spawn(101))

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [(f"banks.{i}", t) for i, t in enumerate(self.banks)]
        out += [(f"bank_biases.{i}", t) for i, t in enumerate(self.bank_biases)]
        out += [(f"channel_branch.{n}", t) for n, t in self.channel_branch.parameters()]
        out += [(f"directional_branch.{n}", t) for n, t in self.directional_branch.parameters()]
        return out

    def state_arrays(self):
        out = [(f"banks.{i}", t.data) for i, t in enumerate(self.banks)]
        out += [(f"bank_biases.{i}", t.data) for i, t in enumerate(self.bank_biases)]
        out += [(f"channel_branch.{n}", a) for n, a in self.channel_branch.state_arrays()]
        out += [(f"directional_branch.{n}", a) for n, a in self.directional_branch.state_arrays()]
        return out

    def set_mode(self, train: bool) -> None:
        self.channel_branch.set_mode(train)
        self.directional_branch.set_mode(train)

    def __call__(self, t: Tensor, g: Tensor, record: dict | None = None) -> Tensor:
        return joint_upsample(t, g, self, record=record)


def joint_upsample(t: Tensor, g: Tensor, layer: JointUpLayer, record: dict | None = None) -> Tensor:
    """Up-sample target features ``t`` x2, guided by HR features ``g``.

    Each HR pixel takes its phase's sub-pixel convolution of the LR
    neighborhood, rescaled by the attention at that HR pixel.
    """
    f = layer.factor
    b, ct, h, w = t.data.shape
    if g.data.ndim != 4 or g.data.shape[0] != b or g.data.shape[2:] != (f * h, f * w):
        raise ShapeError(
            f"guide shape {g.data.shape} must be target {t.data.shape} scaled x{f} spatially"
        )
    if ct != layer.target_ch or g.data.shape[1] != layer.guide_ch:
        raise ShapeError("channel counts do not match layer configuration")
    m = layer.directional_branch(g)
    n = layer.channel_branch(g)
    if record is not None:
        record["m"] = m.data.copy()
        record["dilation"] = layer.spec.dilation
        record["offsets"] = layer.spec.offsets()
    a = kernel_attention(m, n)  # (b, K, guide_ch, fh, fw)
    cols = ops.im2col(t, layer.spec)  # (b, K, target_ch, h, w)
    phases = []
    for i in range(f * f):
        sy, sx = divmod(i, f)
        a_s = ops.phase_slice(a, sy, sx, f)
        y = ops.kernel_contract(ops.mul(cols, a_s), layer.banks[i])
        phases.append(ops.add_channel_bias(y, layer.bank_biases[i]))
    return ops.phase_interleave(phases, f)


def bicubic_upsample(x: Tensor, factor: int) -> Tensor:
    return ops.upsample(x, factor, kind="bicubic")


class _ConvStack(Module):
    """A few 3x3 conv+relu layers at one resolution."""

    def __init__(self, in_ch: int, out_ch: int, depth: int, rng: Rng):
        spec = ConvSpec(kernel_size=3)
        chans = [in_ch] + [out_ch] * depth
        self.convs = [
            Conv2d(chans[i], chans[i + 1], spec, rng.spawn(i)) for i in range(depth)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = ops.relu(conv(x))
        return x


class _Downsample2(Module):
    """Stride-2 3x3 conv + relu."""

    def __init__(self, ch: int, rng: Rng):
        self.conv = Conv2d(ch, ch, ConvSpec(kernel_size=3, stride=2, padding=1), rng)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.conv(x))


class DsrNet(Module):
    """Guided depth super-resolution at scale 2 or 4.

    LR depth is encoded, lifted through one joint up-sampling stage per
    factor of 2 (each guided by intensity features at the matching
    resolution), and decoded by a zero-initialized head whose output is
    added to the bicubic up-sampled input.
    """

    def __init__(self, scale: int, rng: Rng, width: int = 16):
        if scale not in (2, 4):
            raise ValueError("scale must be 2 or 4 (powers of two at desk scale)")
        self.scale = scale
        self.width = width
        n_stages = scale.bit_length() - 1
        self.target_encoder = _ConvStack(1, width, 2, rng.spawn(1))
        self.guide_encoder = _ConvStack(1, width, 3, rng.spawn(2))
        # stride-2 stages produce guide features at each intermediate resolution
        self.guide_down = [_Downsample2(width, rng.spawn(10 + i)) for i in range(n_stages - 1)]
        self.up_stages = [
            JointUpLayer(width, width, width, rng.spawn(20 + i)) for i in range(n_stages)
        ]
        # the head also sees the bicubic base itself, so the residual can be
        # driven by the HR depth directly rather than only through the
        # randomly initialized encoders
        self.head = Conv2d(width + 1, 1, ConvSpec(kernel_size=3), rng.spawn(3), zero_init=True)

    def __call__(self, d_lr: Tensor, guide: Tensor, trace: list | None = None) -> Tensor:
        return dsr_forward(d_lr, guide, self, trace=trace)


def dsr_forward(d_lr: Tensor, guide: Tensor, net: DsrNet, trace: list | None = None) -> Tensor:
    b, c, h, w = d_lr.data.shape
    if c != 1 or guide.data.shape[1] != 1:
        raise ShapeError("depth and guide must be single-channel")
    if guide.data.shape[2:] != (net.scale * h, net.scale * w):
        raise ShapeError(
            f"guide spatial dims {guide.data.shape[2:]} must be LR dims x{net.scale}"
        )
    g_full = net.guide_encoder(guide)
    guides = [g_full]
    for down in net.guide_down:
        guides.append(down(guides[-1]))
    guides = guides[::-1]  # coarsest first, matching the up-stage order
    z = net.target_encoder(d_lr)
    for stage, g in zip(net.up_stages, guides):
        record: dict | None = {} if trace is not None else None
        z = ops.relu(stage(z, g, record=record))
        if trace is not None:
            trace.append(record)
    base = bicubic_upsample(d_lr, net.scale)
    residual = net.head(ops.concat_channels([z, base]))
    return ops.add(residual, base)

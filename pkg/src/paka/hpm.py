"""Hierarchical module: channel-squeezing bottleneck, a cascade of
increasingly dilated attention-modulated convolutions, and fusion of the
globally pooled bottleneck features with every cascade output.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .attention import PakaLayer, branch_hidden_width, paka_conv2d
from .layers import BatchNorm2d, Conv2d, Module
from .ops import ConvSpec
from .tensor import Rng, Tensor


@dataclass(frozen=True)
class HpmConfig:
    in_channels: int
    bottleneck_channels: int
    cascade: tuple[tuple[int, int], ...] = ()  # (out_channels, dilation) pairs
    include_global_pool: bool = True
    out_channels: int | None = None  # None: no fusion projection, emit the concat
    kernel_size: int = 3

    def __post_init__(self):
        dil = [d for _, d in self.cascade]
        if any(b >= a for a, b in zip(dil[1:], dil)):
            raise ValueError(f"cascade dilations must be strictly increasing, got {dil}")

    @property
    def concat_channels(self) -> int:
        total = sum(c for c, _ in self.cascade)
        if self.include_global_pool:
            total += self.bottleneck_channels
        return total


class Hpm(Module):
    """Parameter state and forward pass for one hierarchical module."""

    def __init__(self, cfg: HpmConfig, rng: Rng, fused: bool = True):
        self.cfg = cfg
        one = ConvSpec(kernel_size=1)
        self.bottleneck = Conv2d(cfg.in_channels, cfg.bottleneck_channels, one, rng.spawn(0))
        self.bottleneck_norm = BatchNorm2d(cfg.bottleneck_channels)
        self.cascade = []
        self.cascade_norms = []
        ch = cfg.bottleneck_channels
        for i, (out_ch, d) in enumerate(cfg.cascade):
            spec = ConvSpec(kernel_size=cfg.kernel_size, dilation=d)
            self.cascade.append(PakaLayer(ch, out_ch, spec, rng.spawn(10 + i), fused=fused))
            self.cascade_norms.append(BatchNorm2d(out_ch))
            ch = out_ch
        if cfg.out_channels is not None:
            self.fuse = Conv2d(cfg.concat_channels, cfg.out_channels, one, rng.spawn(99))
            self.fuse_norm = BatchNorm2d(cfg.out_channels)

    def __call__(self, x: Tensor, trace: list | None = None) -> Tensor:
        return hpm_forward(x, self, trace=trace)


def hpm_forward(x: Tensor, s: Hpm, trace: list | None = None) -> Tensor:
    """Bottleneck, cascade, then fusion of pooled and cascade features.

    ``trace`` collects each cascade layer's directional-modulation record
    for field visualization.
    """
    cfg = s.cfg
    if x.data.shape[1] != cfg.in_channels:
        raise ops.ShapeError(
            f"input channels {x.data.shape[1]} != config in_channels {cfg.in_channels}"
        )
    z = ops.relu(s.bottleneck_norm(s.bottleneck(x)))
    parts = []
    if cfg.include_global_pool:
        parts.append(ops.global_avg_pool(z, broadcast=True))
    for layer, norm in zip(s.cascade, s.cascade_norms):
        record: dict | None = {} if trace is not None else None
        z = ops.relu(norm(paka_conv2d(z, layer, record=record)))
        if trace is not None:
            trace.append(record)
        parts.append(z)
    if not parts:
        return z
    out = parts[0] if len(parts) == 1 else ops.concat_channels(parts)
    if cfg.out_channels is not None:
        out = ops.relu(s.fuse_norm(s.fuse(out)))
    return out


def hpm_param_count(cfg: HpmConfig) -> int:
    """Exact learnable-scalar count for a module built from ``cfg``.

    BN contributes scale and shift only; running stats are not learnable.
    """
    k2 = cfg.kernel_size * cfg.kernel_size

    def conv(cin, cout, taps=1):
        return cin * cout * taps + cout

    def bn(c):
        return 2 * c

    total = conv(cfg.in_channels, cfg.bottleneck_channels) + bn(cfg.bottleneck_channels)
    ch = cfg.bottleneck_channels
    for out_ch, _ in cfg.cascade:
        r = branch_hidden_width(ch)
        total += ch * out_ch * k2 + out_ch  # shared weights + bias
        total += conv(ch, r) + conv(r, ch) + bn(ch)  # channel branch
        total += conv(ch, r, taps=k2) + conv(r, k2) + bn(k2)  # directional branch
        total += bn(out_ch)  # post-layer norm
        ch = out_ch
    if cfg.out_channels is not None:
        total += conv(cfg.concat_channels, cfg.out_channels) + bn(cfg.out_channels)
    return total

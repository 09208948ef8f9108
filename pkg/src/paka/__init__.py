"""Pixel-adaptive kernel attention convolution library."""

from .attention import ChannelBranch, DirectionalBranch, PakaLayer, kernel_attention, paka_conv2d
from .gradcheck import grad_check
from .hpm import Hpm, HpmConfig, hpm_forward, hpm_param_count
from .ops import ConvSpec, ShapeError
from .tensor import Rng, Tensor
from .train import RunConfig, metrics_seg, metrics_sr, poly_lr
from .upsampling import DsrNet, JointUpLayer, dsr_forward, joint_upsample

__all__ = [
    "ChannelBranch",
    "ConvSpec",
    "DirectionalBranch",
    "DsrNet",
    "Hpm",
    "HpmConfig",
    "JointUpLayer",
    "PakaLayer",
    "Rng",
    "RunConfig",
    "ShapeError",
    "Tensor",
    "dsr_forward",
    "grad_check",
    "hpm_forward",
    "hpm_param_count",
    "joint_upsample",
    "kernel_attention",
    "metrics_seg",
    "metrics_sr",
    "paka_conv2d",
    "poly_lr",
]

"""Parameter-holding layers built on the primitives in ops.py."""

from __future__ import annotations

import numpy as np

from . import ops
from .ops import ConvSpec
from .tensor import Rng, Tensor


class Module:
    """Lightweight parameter container with named recursion and a train flag."""

    def parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend((f"{name}.{sub}", t) for sub, t in val.parameters())
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend((f"{name}.{i}.{sub}", t) for sub, t in item.parameters())
        return out

    def set_mode(self, train: bool) -> None:
        for val in vars(self).values():
            if isinstance(val, Module):
                val.set_mode(train)
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        item.set_mode(train)
        if hasattr(self, "training"):
            self.training = train

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.zero_grad()

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All persistent arrays (parameters plus running statistics).

        Arrays are returned by reference and must only ever be mutated in
        place, so a loaded checkpoint stays wired to the live module.
        """
        out: list[tuple[str, np.ndarray]] = []
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((name, val.data))
            elif isinstance(val, Module):
                out.extend((f"{name}.{sub}", a) for sub, a in val.state_arrays())
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend((f"{name}.{i}.{sub}", a) for sub, a in item.state_arrays())
        return out


def fan_in_normal(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(shape, std=np.sqrt(2.0 / fan_in))


class Conv2d(Module):
    """Convolution layer; weight layout (out_ch, K, in_ch)."""

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        spec: ConvSpec,
        rng: Rng,
        bias: bool = True,
        zero_init: bool = False,
    ):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.spec = spec
        shape = (out_ch, spec.taps, in_ch)
        if zero_init:
            w = np.zeros(shape)
        else:
            w = fan_in_normal(rng, shape, spec.taps * in_ch)
        self.weight = Tensor(w, requires_grad=True)
        self.weight.decay = True
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.spec)


class BatchNorm2d(Module):
    """Batch normalization with running statistics (momentum 0.1, eps 1e-5)."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, gamma_init: float = 1.0):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.full(channels, gamma_init), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.run_mean = np.zeros(channels)
        self.run_var = np.ones(channels)
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[1] != self.channels:
            raise ops.ShapeError(
                f"batch norm expects {self.channels} channels, got shape {x.data.shape}"
            )
        if self.training:
            out, (mu, var) = ops.batch_norm_train(x, self.gamma, self.beta, self.eps)
            # in-place so state_arrays references stay live
            self.run_mean *= 1 - self.momentum
            self.run_mean += self.momentum * mu
            self.run_var *= 1 - self.momentum
            self.run_var += self.momentum * var
            return out
        return ops.batch_norm_eval(x, self.gamma, self.beta, self.run_mean, self.run_var, self.eps)

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("gamma", self.gamma.data),
            ("beta", self.beta.data),
            ("run_mean", self.run_mean),
            ("run_var", self.run_var),
        ]

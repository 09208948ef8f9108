"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

A Tensor wraps an ndarray plus an optional gradient. Primitive operations
(see ops.py) build a DAG of parents and backward closures; calling
``backward()`` on a scalar replays the tape in reverse topological order.
Tensors are treated as immutable once produced by an operation.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """Dense float64 array with reverse-mode gradient support."""

    __slots__ = ("data", "grad", "requires_grad", "decay", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        # weight-decay eligibility; the optimizer skips tensors with decay=False
        self.decay = False
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()
        # The backward closure of each op node references the node itself,
        # forming cycles that only the cyclic collector could reclaim. Break
        # them so the whole graph is freed by refcounting as soon as the loss
        # goes out of scope; a tape is single-use anyway.
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._prev = ()

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # convenience arithmetic; heavy lifting lives in ops.py
    def __add__(self, other):
        from . import ops

        return ops.add(self, _wrap(other))

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _wrap(other))

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)


def _wrap(v) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(v)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in seen:
                stack.append((p, False))
    return order


_grad_enabled = True


class no_grad:
    """Context manager suppressing graph construction, for inference passes
    whose tapes would otherwise linger until the cyclic collector runs."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def make_op(out_data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op result, registering parents and the backward closure.

    ``backward`` receives the output gradient and must call
    ``accumulate_grad`` on each parent that requires grad.
    """
    out = Tensor(out_data, requires_grad=_grad_enabled and any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._prev = parents

        def _bw(out=out):
            backward(out.grad)

        out._backward = _bw
    return out


class Rng:
    """Deterministic counter-based random stream (Philox under the hood).

    The same 64-bit seed yields the same sequence on every platform.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size=shape) * std

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)

    def spawn(self, stream: int) -> "Rng":
        """Derive an independent child stream; deterministic in (seed, stream)."""
        return Rng((self.seed * 0x9E3779B97F4A7C15 + stream + 1) & 0xFFFFFFFFFFFFFFFF)

"""Differentiable primitives: arithmetic, convolution machinery, batch norm,
activations, pooling, resampling, concat, and the losses built on them.

All tensors are 4-D (batch, channels, height, width) unless noted. Every
operation is a pure function of its inputs and registers its backward
closure via ``make_op``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, make_op


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# elementwise / broadcast arithmetic


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bw(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return make_op(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bw(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(-_unbroadcast(g, b.data.shape))

    return make_op(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bw(g):
        a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return make_op(out, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def bw(g):
        a.accumulate_grad(g * s)

    return make_op(out, (a,), bw)


def add_const(a: Tensor, c: float) -> Tensor:
    out = a.data + c

    def bw(g):
        a.accumulate_grad(g)

    return make_op(out, (a,), bw)


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def bw(g):
        a.accumulate_grad(g * 2.0 * a.data)

    return make_op(out, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g, out=out):
        a.accumulate_grad(g * (1.0 - out * out))

    return make_op(out, (a,), bw)


_kink_margin: list[float] | None = None


class track_kink_margin:
    """Context manager recording the smallest |pre-relu| seen, so finite
    difference probes can reject inputs too close to a kink."""

    def __enter__(self):
        global _kink_margin
        _kink_margin = [np.inf]
        return _kink_margin

    def __exit__(self, *exc):
        global _kink_margin
        _kink_margin = None
        return False


_relu_signs: list | None = None


class track_relu_signs:
    """Context manager collecting relu activation masks, so finite difference
    probes can tell when a step crossed a kink."""

    def __enter__(self):
        global _relu_signs
        _relu_signs = []
        return _relu_signs

    def __exit__(self, *exc):
        global _relu_signs
        _relu_signs = None
        return False


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is defined as 0
    if _kink_margin is not None and a.data.size:
        _kink_margin[0] = min(_kink_margin[0], float(np.abs(a.data).min()))
    mask = a.data > 0.0
    if _relu_signs is not None:
        _relu_signs.append(mask)
    out = np.where(mask, a.data, 0.0)

    def bw(g):
        a.accumulate_grad(g * mask)

    return make_op(out, (a,), bw)


def activation(a: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "tanh":
        return tanh(a)
    raise ValueError(f"unknown activation kind {kind!r}")


def tsum(a: Tensor) -> Tensor:
    out = np.array(a.data.sum())

    def bw(g):
        a.accumulate_grad(np.broadcast_to(g, a.data.shape))

    return make_op(out, (a,), bw)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.array(a.data.mean())

    def bw(g):
        a.accumulate_grad(np.broadcast_to(g / n, a.data.shape))

    return make_op(out, (a,), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)

    def bw(g):
        a.accumulate_grad(g.reshape(a.data.shape))

    return make_op(out, (a,), bw)


# ---------------------------------------------------------------------------
# convolution geometry


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution: odd kernel, dilation, stride, zero padding."""

    kernel_size: int = 3
    dilation: int = 1
    stride: int = 1
    padding: int | None = None  # None = "same" at stride 1

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.dilation < 1 or self.stride < 1:
            raise ValueError("dilation and stride must be >= 1")
        if self.padding is None:
            object.__setattr__(self, "padding", self.dilation * (self.kernel_size - 1) // 2)
        if self.padding < 0:
            raise ValueError("padding must be >= 0")

    @property
    def taps(self) -> int:
        return self.kernel_size * self.kernel_size

    def offsets(self) -> list[tuple[int, int]]:
        """Row-major grid offsets, e.g. (-1,-1),(-1,0),...,(1,1) for 3x3."""
        r = self.kernel_size // 2
        return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        span = self.dilation * (self.kernel_size - 1)
        oh = (h + 2 * self.padding - span - 1) // self.stride + 1
        ow = (w + 2 * self.padding - span - 1) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"input {h}x{w} too small for {self}")
        return oh, ow


def _im2col_data(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    b, c, h, w = x.shape
    oh, ow = spec.out_size(h, w)
    p, d, s = spec.padding, spec.dilation, spec.stride
    r = spec.kernel_size // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((b, spec.taps, c, oh, ow), dtype=np.float64)
    for k, (dy, dx) in enumerate(spec.offsets()):
        y0 = d * (dy + r)
        x0 = d * (dx + r)
        cols[:, k] = xp[:, :, y0 : y0 + s * (oh - 1) + 1 : s, x0 : x0 + s * (ow - 1) + 1 : s]
    return cols


def _col2im_data(gcols: np.ndarray, x_shape: tuple[int, ...], spec: ConvSpec) -> np.ndarray:
    b, c, h, w = x_shape
    _, _, _, oh, ow = gcols.shape
    p, d, s = spec.padding, spec.dilation, spec.stride
    r = spec.kernel_size // 2
    gxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=np.float64)
    for k, (dy, dx) in enumerate(spec.offsets()):
        y0 = d * (dy + r)
        x0 = d * (dx + r)
        gxp[:, :, y0 : y0 + s * (oh - 1) + 1 : s, x0 : x0 + s * (ow - 1) + 1 : s] += gcols[:, k]
    return gxp[:, :, p : p + h, p : p + w]


def im2col(x: Tensor, spec: ConvSpec) -> Tensor:
    """Gather conv patches: (b, c, h, w) -> (b, K, c, oh, ow)."""
    out = _im2col_data(x.data, spec)

    def bw(g):
        x.accumulate_grad(_col2im_data(g, x.data.shape, spec))

    return make_op(out, (x,), bw)


def kernel_contract(cols: Tensor, w: Tensor) -> Tensor:
    """Contract patches (b, K, c, oh, ow) with weights (out, K, c) -> (b, out, oh, ow)."""
    if cols.data.shape[1:3] != w.data.shape[1:]:
        raise ShapeError(
            f"patch dims {cols.data.shape[1:3]} do not match weight dims {w.data.shape[1:]}"
        )
    out = np.einsum("okj,bkjhw->bohw", w.data, cols.data, optimize=True)

    def bw(g):
        cols.accumulate_grad(np.einsum("okj,bohw->bkjhw", w.data, g, optimize=True))
        w.accumulate_grad(np.einsum("bohw,bkjhw->okj", g, cols.data, optimize=True))

    return make_op(out, (cols, w), bw)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias (c,) to a (b, c, h, w) map."""
    if b.data.shape != (x.data.shape[1],):
        raise ShapeError(f"bias shape {b.data.shape} does not match channels {x.data.shape[1]}")
    out = x.data + b.data[None, :, None, None]

    def bw(g):
        x.accumulate_grad(g)
        b.accumulate_grad(g.sum(axis=(0, 2, 3)))

    return make_op(out, (x, b), bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec) -> Tensor:
    """Standard convolution; weights are (out_ch, K, in_ch), K = kernel_size^2."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input, got shape {x.data.shape}")
    if w.data.shape[1] != spec.taps:
        raise ShapeError(f"weight K={w.data.shape[1]} does not match spec K={spec.taps}")
    if w.data.shape[2] != x.data.shape[1]:
        raise ShapeError(
            f"weight in_ch={w.data.shape[2]} does not match input channels {x.data.shape[1]}"
        )
    y = kernel_contract(im2col(x, spec), w)
    if b is not None:
        y = add_channel_bias(y, b)
    return y


# ---------------------------------------------------------------------------
# normalization / pooling / resampling / concat


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize by batch statistics over (batch, h, w); returns gamma*xhat + beta."""
    axes = (0, 2, 3)
    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    g4 = gamma.data[None, :, None, None]
    out = g4 * xhat + beta.data[None, :, None, None]

    def bw(g):
        gamma.accumulate_grad((g * xhat).sum(axis=axes))
        beta.accumulate_grad(g.sum(axis=axes))
        gx = g * g4
        # standard batch-norm input gradient with biased variance
        x.accumulate_grad(
            inv
            * (
                gx
                - gx.mean(axis=axes, keepdims=True)
                - xhat * (gx * xhat).mean(axis=axes, keepdims=True)
            )
        )

    out_t = make_op(out, (x, gamma, beta), bw)
    # stash batch stats so the layer can update running estimates
    out_t_stats = (mu.reshape(-1), var.reshape(-1))
    return out_t, out_t_stats


def batch_norm_eval(
    x: Tensor, gamma: Tensor, beta: Tensor, run_mean: np.ndarray, run_var: np.ndarray, eps: float = 1e-5
) -> Tensor:
    inv = 1.0 / np.sqrt(run_var + eps)
    scale4 = (gamma.data * inv)[None, :, None, None]
    shift4 = (beta.data - gamma.data * run_mean * inv)[None, :, None, None]
    out = x.data * scale4 + shift4
    xhat = (x.data - run_mean[None, :, None, None]) * inv[None, :, None, None]

    def bw(g):
        x.accumulate_grad(g * scale4)
        gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        beta.accumulate_grad(g.sum(axis=(0, 2, 3)))

    return make_op(out, (x, gamma, beta), bw)


def global_avg_pool(x: Tensor, broadcast: bool = False) -> Tensor:
    """Per-(batch, channel) spatial mean; optionally broadcast back to h x w."""
    b, c, h, w = x.data.shape
    m = x.data.mean(axis=(2, 3), keepdims=True)
    if broadcast:
        out = np.broadcast_to(m, x.data.shape).copy()

        def bw(g):
            gm = g.sum(axis=(2, 3), keepdims=True) / (h * w)
            x.accumulate_grad(np.broadcast_to(gm, x.data.shape))

    else:
        out = m

        def bw(g):
            x.accumulate_grad(np.broadcast_to(g / (h * w), x.data.shape))

    return make_op(out, (x,), bw)


def _interp_matrix(n: int, factor: int, kind: str) -> np.ndarray:
    """1-D resampling matrix (n*factor, n), align-corners=false convention."""
    out_n = n * factor
    mat = np.zeros((out_n, n), dtype=np.float64)
    if kind == "nearest":
        for i in range(out_n):
            mat[i, i // factor] = 1.0
        return mat
    for i in range(out_n):
        src = (i + 0.5) / factor - 0.5
        if kind == "bilinear":
            lo = int(np.floor(src))
            t = src - lo
            for j, wgt in ((lo, 1.0 - t), (lo + 1, t)):
                mat[i, min(max(j, 0), n - 1)] += wgt
        elif kind == "bicubic":
            base = int(np.floor(src))
            t = src - base
            for off in range(-1, 3):
                wgt = _cubic_kernel(t - off)
                mat[i, min(max(base + off, 0), n - 1)] += wgt
        else:
            raise ValueError(f"unknown upsample kind {kind!r}")
    return mat


def _cubic_kernel(t: float, a: float = -0.5) -> float:
    t = abs(t)
    if t <= 1.0:
        return (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
    if t < 2.0:
        return a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a
    return 0.0


def upsample(x: Tensor, factor: int, kind: str = "bilinear") -> Tensor:
    """Spatial up-sampling by an integer factor (nearest, bilinear, or bicubic)."""
    if factor < 2:
        raise ValueError("upsample factor must be >= 2")
    b, c, h, w = x.data.shape
    mh = _interp_matrix(h, factor, kind)
    mw = _interp_matrix(w, factor, kind)
    out = np.einsum("Hh,bchw,Ww->bcHW", mh, x.data, mw, optimize=True)

    def bw(g):
        x.accumulate_grad(np.einsum("Hh,bcHW,Ww->bchw", mh, g, mw, optimize=True))

    return make_op(out, (x,), bw)


def concat_channels(xs: list[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("concat_channels needs at least one tensor")
    ref = xs[0].data.shape
    for t in xs[1:]:
        s = t.data.shape
        if s[0] != ref[0] or s[2:] != ref[2:]:
            raise ShapeError(f"concat spatial/batch mismatch: {ref} vs {s}")
    out = np.concatenate([t.data for t in xs], axis=1)
    splits = np.cumsum([t.data.shape[1] for t in xs])[:-1]

    def bw(g):
        for t, gpart in zip(xs, np.split(g, splits, axis=1)):
            t.accumulate_grad(gpart)

    return make_op(out, tuple(xs), bw)


def phase_slice(x: Tensor, sy: int, sx: int, factor: int = 2) -> Tensor:
    """Take every factor-th pixel (over the last two axes) starting at (sy, sx)."""
    sel = (Ellipsis, slice(sy, None, factor), slice(sx, None, factor))
    out = x.data[sel].copy()

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[sel] = g
        x.accumulate_grad(gx)

    return make_op(out, (x,), bw)


def phase_interleave(phases: list[Tensor], factor: int = 2) -> Tensor:
    """Inverse of phase_slice: interleave factor^2 maps into a factor-x-larger map.

    ``phases`` is ordered row-major over (sy, sx).
    """
    if len(phases) != factor * factor:
        raise ShapeError(f"need {factor * factor} phase maps, got {len(phases)}")
    b, c, h, w = phases[0].data.shape
    out = np.empty((b, c, h * factor, w * factor), dtype=np.float64)
    for i, t in enumerate(phases):
        sy, sx = divmod(i, factor)
        if t.data.shape != (b, c, h, w):
            raise ShapeError(f"phase map {i} shape {t.data.shape} != {(b, c, h, w)}")
        out[:, :, sy::factor, sx::factor] = t.data

    def bw(g):
        for i, t in enumerate(phases):
            sy, sx = divmod(i, factor)
            t.accumulate_grad(g[:, :, sy::factor, sx::factor])

    return make_op(out, tuple(phases), bw)


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred.data - target
    out = np.array((diff * diff).mean())

    def bw(g):
        pred.accumulate_grad(g * 2.0 * diff / diff.size)

    return make_op(out, (pred,), bw)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over pixels of -log softmax at the true class.

    logits: (b, n_classes, h, w); labels: integer (b, h, w).
    """
    b, nc, h, w = logits.data.shape
    if labels.shape != (b, h, w):
        raise ShapeError(f"labels shape {labels.shape} != {(b, h, w)}")
    if labels.min() < 0 or labels.max() >= nc:
        raise ValueError("labels out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    bi, hi, wi = np.meshgrid(np.arange(b), np.arange(h), np.arange(w), indexing="ij")
    n = b * h * w
    out = np.array(-np.log(p[bi, labels, hi, wi]).mean())

    def bw(g):
        gl = p.copy()
        gl[bi, labels, hi, wi] -= 1.0
        logits.accumulate_grad(g * gl / n)

    return make_op(out, (logits,), bw)

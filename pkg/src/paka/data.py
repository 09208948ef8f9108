"""Deterministic synthetic task generators.

Three desk-scale tasks: direction-copy regression (each pixel copies the
value of the neighbor its beacon points at), textured-shapes segmentation,
and piecewise-smooth depth scenes with an aligned intensity guide for
guided super-resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Rng

# the 8 non-center offsets of a 3x3 kernel, row-major
DIRECTIONS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass
class SegSample:
    image: np.ndarray  # (channels, h, w)
    label: np.ndarray  # integer (h, w)


def _smooth_noise(rng: Rng, shape, passes: int = 1) -> np.ndarray:
    """White noise mildly blurred with a 3x3 binomial kernel; unit-ish scale."""
    v = rng.normal(shape)
    k = np.array([0.25, 0.5, 0.25])
    for _ in range(passes):
        v = np.apply_along_axis(lambda r: np.convolve(np.pad(r, 1, mode="edge"), k, "valid"), -1, v)
        v = np.apply_along_axis(lambda r: np.convolve(np.pad(r, 1, mode="edge"), k, "valid"), -2, v)
    return v / v.std()


def _block_field(rng: Rng, size: int, block: int, n_values: int) -> np.ndarray:
    """Random integer field constant on block x block tiles."""
    nb = (size + block - 1) // block
    coarse = rng.integers(0, n_values, (nb, nb))
    return np.repeat(np.repeat(coarse, block, axis=0), block, axis=1)[:size, :size]


def gen_direction_copy(
    seed: int,
    n: int,
    size: int,
    block: int = 8,
    fixed_direction: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Inputs (n, 9, size, size): a value map plus 8 one-hot beacon channels.

    The target at each pixel is the value map sampled at the neighbor the
    beacon points at (zero outside the image, matching zero-padded
    convolution). The beacon field is constant on blocks.
    """
    if size < 5:
        raise ValueError("size must be >= 5")
    rng = Rng(seed)
    xs = np.zeros((n, 9, size, size))
    ys = np.zeros((n, 1, size, size))
    for i in range(n):
        v = _smooth_noise(rng, (size, size))
        if fixed_direction is None:
            d = _block_field(rng, size, block, 8)
        else:
            d = np.full((size, size), fixed_direction, dtype=np.int64)
        xs[i, 0] = v
        for k in range(8):
            xs[i, 1 + k] = d == k
        vp = np.pad(v, 1)
        yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        offs = np.array(DIRECTIONS)
        ys[i, 0] = vp[1 + yy + offs[d, 0], 1 + xx + offs[d, 1]]
    return xs, ys


# per non-background class, shapes occupy this fraction of the image on average
SHAPES_AREA_FRACTION = (0.05, 0.10)


def gen_shapes_seg(seed: int, n: int, size: int, n_classes: int) -> list[SegSample]:
    """Textured shapes on a textured background; one shape per foreground class,
    each confined to its own quadrant so class areas never overlap.
    """
    if not 2 <= n_classes <= 5:
        raise ValueError("n_classes must be in [2, 5]")
    rng = Rng(seed)
    out = []
    half = size // 2
    for _ in range(n):
        img = 0.25 + 0.08 * _smooth_noise(rng, (size, size))
        label = np.zeros((size, size), dtype=np.int64)
        quads = [(0, 0), (0, half), (half, 0), (half, half)]
        order = np.argsort(rng.uniform((4,)))
        for c in range(1, n_classes):
            qy, qx = quads[order[c - 1]]
            frac = rng.uniform((), *SHAPES_AREA_FRACTION)
            mask = _draw_shape(rng, size, half, qy, qx, c, float(frac))
            label[mask] = c
            img[mask] = 0.35 + 0.15 * c + 0.06 * _smooth_noise(rng, (size, size))[mask]
        out.append(SegSample(image=img[None], label=label))
    return out


def _draw_shape(rng: Rng, size: int, half: int, qy: int, qx: int, cls: int, frac: float) -> np.ndarray:
    """Shape mask whose expected pixel count equals frac * size^2 exactly.

    Sizes and positions are continuous, so averaging over the uniform
    placement offset makes the grid pixel count unbiased.
    """
    area = frac * size * size
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    kind = (cls - 1) % 3
    if kind == 0:  # rectangle
        aspect = float(rng.uniform((), 0.7, min(1.5, (half - 1) ** 2 / area)))
        hh = np.sqrt(area * aspect)
        ww = area / hh
        cy = qy + float(rng.uniform((), 0, half - hh))
        cx = qx + float(rng.uniform((), 0, half - ww))
        return (yy >= cy) & (yy < cy + hh) & (xx >= cx) & (xx < cx + ww)
    if kind == 1:  # disc
        r = np.sqrt(area / np.pi)
        cy = qy + r + float(rng.uniform((), 0, half - 2 * r))
        cx = qx + r + float(rng.uniform((), 0, half - 2 * r))
        return (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
    # right triangle cut from a square of side s
    s = np.sqrt(2.0 * area)
    cy = qy + float(rng.uniform((), 0, half - s))
    cx = qx + float(rng.uniform((), 0, half - s))
    return (yy >= cy) & (xx >= cx) & ((yy - cy) + (xx - cx) < s)


def seg_to_arrays(samples: list[SegSample]) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([s.image for s in samples])
    ys = np.stack([s.label for s in samples])
    return xs, ys


def box_downsample(hr: np.ndarray, f: int) -> np.ndarray:
    """Mean over f x f blocks; last two axes must divide by f."""
    *lead, h, w = hr.shape
    return hr.reshape(*lead, h // f, f, w // f, f).mean(axis=(-3, -1))


def gen_depth_scenes(
    seed: int, n: int, size: int, scale: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(LR depth, HR guide, HR depth) triples, values in [0, 1].

    HR depth is piecewise smooth: a tilted background plane with a few
    overlaid objects at distinct depths. The guide assigns each region a
    distinct albedo plus texture, so guide edges coincide with depth edges.
    """
    if scale not in (2, 4):
        raise ValueError("scale must be 2 or 4")
    if size % scale:
        raise ValueError("size must be divisible by scale")
    rng = Rng(seed)
    hr = np.zeros((n, 1, size, size))
    guide = np.zeros((n, 1, size, size))
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    for i in range(n):
        gy, gx = rng.uniform((2,), -0.25, 0.25)
        depth = 0.55 + gy * (yy - 0.5) + gx * (xx - 0.5)
        albedo = 0.35 + 0.10 * float(rng.uniform((), -1, 1))
        n_obj = int(rng.integers(2, 5))
        for j in range(n_obj):
            cy, cx = rng.uniform((2,), 0.2, 0.8)
            r = float(rng.uniform((), 0.08, 0.22))
            if int(rng.integers(0, 2)) == 0:
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            else:
                mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r * float(rng.uniform((), 0.6, 1.4)))
            level = float(rng.uniform((), 0.10, 0.45))
            tilt_y, tilt_x = rng.uniform((2,), -0.15, 0.15)
            depth = np.where(mask, level + tilt_y * (yy - cy) + tilt_x * (xx - cx), depth)
            # keep a contrast margin against the background so every depth
            # discontinuity also shows up in the guide
            sign = 1.0 if int(rng.integers(0, 2)) else -1.0
            obj_albedo = float(np.clip(0.35 + sign * rng.uniform((), 0.25, 0.45), 0.05, 0.9))
            albedo = np.where(mask, obj_albedo, albedo)
        texture = 0.04 * _smooth_noise(rng, (size, size))
        shading = 1.0 - 0.5 * depth
        hr[i, 0] = np.clip(depth, 0.0, 1.0)
        guide[i, 0] = np.clip(albedo * shading + texture + 0.15, 0.0, 1.0)
    lr = box_downsample(hr, scale)
    return lr, guide, hr

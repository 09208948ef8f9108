"""Propagational field: the receptive field of a chosen pixel, re-weighted
by the directional modulation of each stacked attention layer.

Per layer, the field vector is the attention-weighted sum of the 8
non-center sampling offsets (scaled by dilation). The accumulated footprint
expands the query pixel through the layer stack, multiplying directional
attention weights along each offset path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .serialize import save_ppm


@dataclass(frozen=True)
class FieldQuery:
    y: int
    x: int
    depth: int = 3  # layers expanded when accumulating the footprint


@dataclass
class FieldResult:
    query: FieldQuery
    vectors: list[tuple[float, float]] = field(default_factory=list)  # per layer (vy, vx)
    footprint: dict[tuple[int, int], float] = field(default_factory=dict)
    shape: tuple[int, int] = (0, 0)


def _dir_attention(m_pix: np.ndarray) -> np.ndarray:
    """Directional attention 1 + tanh(m_k) at one pixel (channel term excluded)."""
    return 1.0 + np.tanh(m_pix)


def propagational_field(trace: list[dict], q: FieldQuery) -> FieldResult:
    """Compute per-layer field vectors and the accumulated footprint.

    ``trace`` is a list of per-layer records {m: (b,K,H,W), dilation,
    offsets} captured during a forward pass (batch element 0 is used).
    All layers share one coordinate frame centered on the query pixel.
    """
    if not trace:
        raise ValueError("empty forward trace")
    _, _, h, w = trace[0]["m"].shape
    if not (0 <= q.y < h and 0 <= q.x < w):
        raise IndexError(f"query pixel ({q.y}, {q.x}) out of bounds for {h}x{w}")
    result = FieldResult(query=q, shape=(h, w))
    for rec in trace:
        m = rec["m"][0]
        d = rec["dilation"]
        offsets = rec["offsets"]
        a = _dir_attention(m[:, q.y, q.x])
        vy = sum(d * dy * a[k] for k, (dy, dx) in enumerate(offsets) if (dy, dx) != (0, 0))
        vx = sum(d * dx * a[k] for k, (dy, dx) in enumerate(offsets) if (dy, dx) != (0, 0))
        result.vectors.append((float(vy), float(vx)))

    # footprint: expand through the last `depth` layers, innermost first
    footprint = {(0, 0): 1.0}
    for rec in reversed(trace[-q.depth :] if q.depth else []):
        m = rec["m"][0]
        d = rec["dilation"]
        offsets = rec["offsets"]
        hh, ww = m.shape[1:]
        nxt: dict[tuple[int, int], float] = {}
        for (oy, ox), wgt in footprint.items():
            py = min(max(q.y + oy, 0), hh - 1)
            px = min(max(q.x + ox, 0), ww - 1)
            a = _dir_attention(m[:, py, px])
            for k, (dy, dx) in enumerate(offsets):
                key = (oy + d * dy, ox + d * dx)
                nxt[key] = nxt.get(key, 0.0) + wgt * float(a[k])
        footprint = nxt
    result.footprint = footprint
    return result


def field_to_csv(fr: FieldResult, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "dy", "dx", "weight"])
        for i, (vy, vx) in enumerate(fr.vectors):
            writer.writerow([f"vector_{i}", f"{vy:.12g}", f"{vx:.12g}", ""])
        for (dy, dx), wgt in sorted(fr.footprint.items()):
            writer.writerow(["footprint", dy, dx, f"{wgt:.12g}"])


def render_field(fr: FieldResult, base: np.ndarray, out_path) -> np.ndarray:
    """Write a P6 overlay: footprint heat in red, per-layer vectors as green
    arrows from the query pixel, the query pixel itself in full green.
    """
    h, w = base.shape
    lo, hi = base.min(), base.max()
    gray = np.zeros_like(base) if hi == lo else (base - lo) / (hi - lo)
    img = np.repeat((gray * 200.0)[:, :, None], 3, axis=2)

    if fr.footprint:
        wmax = max(fr.footprint.values())
        for (dy, dx), wgt in fr.footprint.items():
            py, px = fr.query.y + dy, fr.query.x + dx
            if 0 <= py < h and 0 <= px < w and wmax > 0:
                img[py, px, 0] = min(255.0, img[py, px, 0] + 255.0 * wgt / wmax)

    for vy, vx in fr.vectors:
        norm = np.hypot(vy, vx)
        if norm == 0:
            continue
        # arrow scaled to at most a quarter of the image
        scale = min(h, w) / 4.0 / max(norm, 1.0)
        for py, px in _raster_line(
            fr.query.y, fr.query.x, fr.query.y + vy * scale, fr.query.x + vx * scale
        ):
            if 0 <= py < h and 0 <= px < w:
                img[py, px, 1] = 255.0
                img[py, px, 2] = 0.0
    img[fr.query.y, fr.query.x] = (0.0, 255.0, 0.0)
    save_ppm(out_path, img)
    return img


def _raster_line(y0: float, x0: float, y1: float, x1: float) -> list[tuple[int, int]]:
    """Integer pixel chain from (y0,x0) to (y1,x1); deterministic."""
    n = int(max(abs(y1 - y0), abs(x1 - x0))) + 1
    ts = np.linspace(0.0, 1.0, max(n, 2))
    pts = [(int(round(y0 + t * (y1 - y0))), int(round(x0 + t * (x1 - x0)))) for t in ts]
    out = []
    for p in pts:
        if not out or out[-1] != p:
            out.append(p)
    return out

"""Central finite-difference validation of analytic gradients, plus the
named check suites the CLI runs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Rng, Tensor


def grad_check(
    f: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    rng: Rng | None = None,
    tether: Rng | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must rebuild the scalar loss from the current tensor values on each
    call. With ``max_coords_per_tensor`` set, a random coordinate subset of
    each large tensor is probed (the analytic side is always complete).

    With ``tether`` set, a fixed random linear term in each probed tensor is
    added to the loss. That keeps every coordinate's gradient away from zero,
    where the relative-error quotient would otherwise measure only float
    roundoff in the difference quotient; the operation's own gradient still
    enters the comparison in full.

    Coordinates whose probes flip any relu activation relative to the base
    point are skipped: the central difference straddles a kink there, so it
    does not estimate the one-sided subgradient that backward reports.
    """
    from . import ops
    if tether is not None:
        coeffs = [Tensor(0.1 * _nudged(tether, t.data.shape)) for t in tensors]
        inner = f

        def f():
            out = inner()
            for t, c in zip(tensors, coeffs):
                out = ops.add(out, ops.tsum(ops.mul(t, c)))
            return out

    for t in tensors:
        t.zero_grad()
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def masked_eval():
        with ops.track_relu_signs() as signs:
            val = f().item()
        return val, signs

    def same_signs(a, b):
        return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))

    _, base_signs = masked_eval()
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords_per_tensor is not None and flat.size > max_coords_per_tensor:
            if rng is None:
                raise ValueError("rng required when subsampling coordinates")
            idx = rng.integers(0, flat.size, shape=max_coords_per_tensor)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp, signs_p = masked_eval()
            flat[i] = orig - h
            fm, signs_m = masked_eval()
            flat[i] = orig
            if not (same_signs(signs_p, base_signs) and same_signs(signs_m, base_signs)):
                continue
            numeric = (fp - fm) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.worst < self.tolerance

    def line(self) -> str:
        status = "ok" if self.ok else "FAIL"
        return f"{self.name:40s} {self.worst:12.3e}  tol {self.tolerance:.0e}  {status}"


PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-4


def _nudged(rng: Rng, shape, margin: float = 0.15) -> np.ndarray:
    """Random values kept away from 0 so relu kinks are not crossed by h."""
    v = rng.normal(shape)
    return v + np.sign(v) * margin


def _primitive_checks(seed: int) -> list[CheckResult]:
    from . import ops
    from .ops import ConvSpec

    rng = Rng(seed)
    results = []

    def check(name, f, tensors):
        tether = rng.spawn(100 + len(results))
        results.append(CheckResult(name, grad_check(f, tensors, tether=tether), PRIMITIVE_TOL))

    x = Tensor(rng.normal((2, 3, 5, 5)), requires_grad=True)
    w = Tensor(rng.normal((4, 9, 3)) * 0.4, requires_grad=True)
    b = Tensor(rng.normal((4,)) * 0.1, requires_grad=True)
    spec = ConvSpec(3, dilation=2)
    check("conv2d", lambda: ops.tmean(ops.tanh(ops.conv2d(x, w, b, spec))), [x, w, b])

    xs = Tensor(rng.normal((2, 3, 7, 7)), requires_grad=True)
    ws = Tensor(rng.normal((2, 9, 3)) * 0.4, requires_grad=True)
    strided = ConvSpec(3, stride=2, padding=1)
    check("conv2d_stride2", lambda: ops.tmean(ops.tanh(ops.conv2d(xs, ws, None, strided))), [xs, ws])

    xb = Tensor(rng.normal((2, 3, 4, 4)), requires_grad=True)
    g = Tensor(1.0 + 0.3 * rng.normal((3,)), requires_grad=True)
    be = Tensor(0.2 * rng.normal((3,)), requires_grad=True)
    check(
        "batch_norm_train",
        lambda: ops.tmean(ops.tanh(ops.batch_norm_train(xb, g, be)[0])),
        [xb, g, be],
    )
    rm, rv = rng.normal((3,)) * 0.2, 1.0 + rng.uniform((3,))
    check(
        "batch_norm_eval",
        lambda: ops.tmean(ops.tanh(ops.batch_norm_eval(xb, g, be, rm, rv))),
        [xb, g, be],
    )

    xa = Tensor(_nudged(rng, (2, 3, 4, 4)), requires_grad=True)
    check("relu", lambda: ops.tmean(ops.square(ops.relu(xa))), [xa])
    check("tanh", lambda: ops.tmean(ops.square(ops.tanh(xa))), [xa])
    check("global_avg_pool", lambda: ops.tmean(ops.square(ops.global_avg_pool(xa))), [xa])
    check(
        "global_avg_pool_broadcast",
        lambda: ops.tmean(ops.square(ops.global_avg_pool(xa, broadcast=True))),
        [xa],
    )
    for kind in ("nearest", "bilinear", "bicubic"):
        check(
            f"upsample_{kind}",
            lambda kind=kind: ops.tmean(ops.square(ops.upsample(xa, 2, kind))),
            [xa],
        )

    c1 = Tensor(rng.normal((2, 2, 3, 3)), requires_grad=True)
    c2 = Tensor(rng.normal((2, 3, 3, 3)), requires_grad=True)
    check(
        "concat_channels",
        lambda: ops.tmean(ops.square(ops.concat_channels([c1, c2]))),
        [c1, c2],
    )

    ph = [Tensor(rng.normal((1, 2, 3, 3)), requires_grad=True) for _ in range(4)]
    check(
        "phase_interleave",
        lambda: ops.tmean(ops.square(ops.phase_interleave(ph))),
        ph,
    )
    xp = Tensor(rng.normal((1, 2, 6, 6)), requires_grad=True)
    check("phase_slice", lambda: ops.tmean(ops.square(ops.phase_slice(xp, 1, 0))), [xp])

    logits = Tensor(rng.normal((2, 4, 3, 3)), requires_grad=True)
    labels = Rng(seed + 1).integers(0, 4, (2, 3, 3))
    check("cross_entropy", lambda: ops.cross_entropy(logits, labels), [logits])

    target = rng.normal((2, 1, 4, 4))
    pr = Tensor(rng.normal((2, 1, 4, 4)), requires_grad=True)
    check("mse_loss", lambda: ops.mse_loss(pr, target), [pr])
    return results


def _composite_checks(seed: int, max_coords: int = 8) -> list[CheckResult]:
    return (
        _paka_checks(seed, max_coords)
        + _hpm_checks(seed, max_coords)
        + _joint_checks(seed, max_coords)
    )


def _activate_branches(module, rng: Rng) -> None:
    """Give zero-initialized branch norms nonzero scale/shift so the
    attention path carries gradient, then populate running stats."""
    from .layers import BatchNorm2d, Module

    for name, val in vars(module).items():
        if isinstance(val, BatchNorm2d):
            val.gamma.data[:] = 0.5 + 0.1 * rng.normal(val.gamma.data.shape)
            val.beta.data[:] = 0.1 * rng.normal(val.beta.data.shape)
        elif isinstance(val, Module):
            _activate_branches(val, rng)
        elif isinstance(val, (list, tuple)):
            for item in val:
                if isinstance(item, Module):
                    _activate_branches(item, rng)


def _safe_inputs(make, forward, rng: Rng, margin: float = 2.5e-4, attempts: int = 25):
    """Draw inputs until every relu pre-activation clears ``margin``, keeping
    h=1e-5 probes on one side of each kink."""
    from . import ops

    xs = None
    for i in range(attempts):
        xs = make(rng.spawn(i))
        with ops.track_kink_margin() as m:
            forward(*xs)
        if m[0] > margin:
            break
    return xs


def _paka_checks(seed: int, max_coords: int) -> list[CheckResult]:
    from . import ops
    from .attention import PakaLayer
    from .ops import ConvSpec

    rng = Rng(seed)
    layer = PakaLayer(3, 2, ConvSpec(3), rng.spawn(1))
    _activate_branches(layer, rng.spawn(2))
    layer(Tensor(rng.normal((1, 3, 4, 4))))  # populate running stats
    layer.set_mode(False)
    (x,) = _safe_inputs(
        lambda r: (Tensor(r.normal((1, 3, 4, 4)), requires_grad=True),),
        lambda x: layer(x),
        rng.spawn(7),
    )
    f = lambda: ops.tmean(ops.tanh(layer(x)))
    results = []
    for name, t in layer.parameters() + [("input", x)]:
        worst = grad_check(
            f, [t], max_coords_per_tensor=max_coords, rng=rng.spawn(3), tether=rng.spawn(9)
        )
        results.append(CheckResult(f"paka.{name}", worst, COMPOSITE_TOL))
    return results


def _hpm_checks(seed: int, max_coords: int) -> list[CheckResult]:
    from . import ops
    from .hpm import Hpm, HpmConfig

    rng = Rng(seed)
    cfg = HpmConfig(4, 4, ((4, 1), (4, 2)), out_channels=4)
    net = Hpm(cfg, rng.spawn(1))
    _activate_branches(net, rng.spawn(2))
    net(Tensor(rng.normal((1, 4, 5, 5))))
    net.set_mode(False)
    (x,) = _safe_inputs(
        lambda r: (Tensor(r.normal((1, 4, 5, 5)), requires_grad=True),),
        lambda x: net(x),
        rng.spawn(7),
    )
    f = lambda: ops.tmean(ops.tanh(net(x)))
    results = []
    groups = _grouped(net.parameters())
    for name, tensors in groups + [("input", [x])]:
        worst = max(
            grad_check(
                f, [t], max_coords_per_tensor=max_coords, rng=rng.spawn(4), tether=rng.spawn(9)
            )
            for t in tensors
        )
        results.append(CheckResult(f"hpm.{name}", worst, COMPOSITE_TOL))
    return results


def _joint_checks(seed: int, max_coords: int) -> list[CheckResult]:
    from . import ops
    from .upsampling import JointUpLayer

    rng = Rng(seed)
    layer = JointUpLayer(2, 3, 2, rng.spawn(1))
    _activate_branches(layer, rng.spawn(2))
    layer(Tensor(rng.normal((1, 2, 3, 3))), Tensor(rng.normal((1, 3, 6, 6))))
    layer.set_mode(False)
    t, g = _safe_inputs(
        lambda r: (
            Tensor(r.normal((1, 2, 3, 3)), requires_grad=True),
            Tensor(r.normal((1, 3, 6, 6)), requires_grad=True),
        ),
        lambda t, g: layer(t, g),
        rng.spawn(7),
    )
    f = lambda: ops.tmean(ops.tanh(layer(t, g)))
    results = []
    groups = _grouped(layer.parameters())
    for name, tensors in groups + [("target", [t]), ("guide", [g])]:
        worst = max(
            grad_check(
                f, [tt], max_coords_per_tensor=max_coords, rng=rng.spawn(3), tether=rng.spawn(9)
            )
            for tt in tensors
        )
        results.append(CheckResult(f"joint.{name}", worst, COMPOSITE_TOL))
    return results


def _grouped(params: list[tuple[str, Tensor]]) -> list[tuple[str, list[Tensor]]]:
    """Group parameters by their top-level component name."""
    groups: dict[str, list[Tensor]] = {}
    for name, t in params:
        key = name.split(".")[0]
        groups.setdefault(key, []).append(t)
    return list(groups.items())


SCOPES = ("primitive", "paka", "hpm", "joint", "all")


def run_suite(scope: str, seed: int, n_seeds: int = 20) -> list[CheckResult]:
    """Worst result per check over ``n_seeds`` seeds derived from ``seed``."""
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; choose from {SCOPES}")
    worst: dict[str, CheckResult] = {}
    for i in range(n_seeds):
        s = seed + 1000 * i
        batch: list[CheckResult] = []
        if scope in ("primitive", "all"):
            batch += _primitive_checks(s)
        if scope in ("paka", "all"):
            batch += _paka_checks(s, max_coords=8)
        if scope in ("hpm", "all"):
            batch += _hpm_checks(s, max_coords=8)
        if scope in ("joint", "all"):
            batch += _joint_checks(s, max_coords=8)
        for r in batch:
            cur = worst.get(r.name)
            if cur is None or r.worst > cur.worst:
                worst[r.name] = r
    return list(worst.values())

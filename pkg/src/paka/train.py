"""Optimizer, learning-rate schedule, metrics, model registry, and the
desk-scale training loop over the synthetic tasks.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data, ops, serialize
from .attention import PakaLayer, paka_conv2d
from .hpm import Hpm, HpmConfig
from .layers import BatchNorm2d, Conv2d, Module
from .ops import ConvSpec
from .tensor import Rng, Tensor, no_grad
from .upsampling import DsrNet, bicubic_upsample


class DivergenceError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: str = "direction-copy"
    model: str = "paka1"
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    poly_power: float = 0.9
    total_iters: int = 2000
    batch_size: int = 8
    seed: int = 0
    size: int = 64
    n_train: int = 64
    n_test: int = 16
    n_classes: int = 4
    scale: int = 4
    log_every: int = 100
    data_seed: int | None = None  # defaults to seed; lets model seeds vary on fixed data

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.poly_power <= 0:
            raise ConfigError("poly_power must be > 0")

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as f:
            raw = json.load(f)
        valid = set(cls.__dataclass_fields__)
        for key in raw:
            if key not in valid:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


def poly_lr(lr0: float, power: float, n_iter: int, n_total: int) -> float:
    """lr0 * (1 - n_iter/n_total) ** power."""
    if not 0 <= n_iter <= n_total:
        raise ValueError("n_iter must be in [0, n_total]")
    return lr0 * (1.0 - n_iter / n_total) ** power


class Sgd:
    """Momentum SGD; weight decay folds into the velocity and only applies
    to tensors flagged decay=True (conv weights).

    v <- momentum*v + grad + wd*param;  param <- param - lr*v
    """

    def __init__(self, params: list[tuple[str, Tensor]], momentum: float, weight_decay: float):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t in params}

    def step(self, lr: float) -> None:
        for name, t in self.params:
            if t.grad is None:
                continue
            g = t.grad
            if self.weight_decay and t.decay:
                g = g + self.weight_decay * t.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            t.data -= lr * v

    def zero_grad(self) -> None:
        for _, t in self.params:
            t.zero_grad()


# ---------------------------------------------------------------------------
# metrics


def metrics_seg(pred: np.ndarray, true: np.ndarray, n_classes: int) -> tuple[float, float]:
    """(mIoU, PixAcc); IoU averaged over classes present in pred or true."""
    if pred.shape != true.shape:
        raise ops.ShapeError(f"prediction shape {pred.shape} != label shape {true.shape}")
    pixacc = float((pred == true).mean())
    ious = []
    for c in range(n_classes):
        p = pred == c
        t = true == c
        union = (p | t).sum()
        if union == 0:
            continue
        ious.append((p & t).sum() / union)
    miou = float(np.mean(ious)) if ious else 1.0
    return miou, pixacc


def metrics_sr(pred: np.ndarray, true: np.ndarray, max_val: float) -> tuple[float, float]:
    """(RMSE, PSNR in dB); PSNR is +inf when the reconstruction is exact."""
    if pred.shape != true.shape:
        raise ops.ShapeError(f"prediction shape {pred.shape} != reference shape {true.shape}")
    rmse = float(np.sqrt(np.mean((pred - true) ** 2)))
    psnr = math.inf if rmse == 0.0 else 20.0 * math.log10(max_val / rmse)
    return rmse, psnr


# ---------------------------------------------------------------------------
# tasks and models


@dataclass
class Task:
    kind: str  # regress | seg | sr
    train_x: tuple
    train_y: np.ndarray
    test_x: tuple
    test_y: np.ndarray
    n_classes: int = 0
    scale: int = 1


def build_task(cfg: RunConfig) -> Task:
    rng_seed = cfg.seed if cfg.data_seed is None else cfg.data_seed
    if cfg.task == "direction-copy":
        xs, ys = data.gen_direction_copy(rng_seed, cfg.n_train + cfg.n_test, cfg.size)
        return Task(
            "regress",
            (xs[: cfg.n_train],),
            ys[: cfg.n_train],
            (xs[cfg.n_train :],),
            ys[cfg.n_train :],
        )
    if cfg.task == "shapes-seg":
        samples = data.gen_shapes_seg(rng_seed, cfg.n_train + cfg.n_test, cfg.size, cfg.n_classes)
        xs, ys = data.seg_to_arrays(samples)
        return Task(
            "seg",
            (xs[: cfg.n_train],),
            ys[: cfg.n_train],
            (xs[cfg.n_train :],),
            ys[cfg.n_train :],
            n_classes=cfg.n_classes,
        )
    if cfg.task == "depth-sr":
        lr, guide, hr = data.gen_depth_scenes(rng_seed, cfg.n_train + cfg.n_test, cfg.size, cfg.scale)
        nt = cfg.n_train
        return Task(
            "sr", (lr[:nt], guide[:nt]), hr[:nt], (lr[nt:], guide[nt:]), hr[nt:], scale=cfg.scale
        )
    raise ConfigError(f"unknown task {cfg.task!r}")


class DirectionCopyPaka(Module):
    """Single attention-modulated 3x3 layer for the direction-copy task.

    The branch hidden width is raised to 8 so the directional branch can
    separate all 8 beacon channels.
    """

    def __init__(self, rng: Rng, in_ch: int = 9):
        self.layer = PakaLayer(in_ch, 1, ConvSpec(kernel_size=3), rng, hidden=8)

    def __call__(self, x: Tensor, trace: list | None = None) -> Tensor:
        record: dict | None = {} if trace is not None else None
        out = paka_conv2d(x, self.layer, record=record)
        if trace is not None:
            trace.append(record)
        return out


class DirectionCopyConv(Module):
    """Single plain 3x3 convolution baseline for the same task."""

    def __init__(self, rng: Rng, in_ch: int = 9):
        self.layer = Conv2d(in_ch, 1, ConvSpec(kernel_size=3), rng)

    def __call__(self, x: Tensor, trace: list | None = None) -> Tensor:
        return self.layer(x)


class SegNet(Module):
    """Stem conv, hierarchical module, and a 1x1 classifier head."""

    def __init__(self, rng: Rng, n_classes: int, width: int = 16, paka: bool = True):
        self.stem = Conv2d(1, width, ConvSpec(kernel_size=3), rng.spawn(0))
        self.stem_norm = BatchNorm2d(width)
        cfg = HpmConfig(
            in_channels=width,
            bottleneck_channels=width,
            cascade=((width, 1), (width, 2), (width, 4)),
            out_channels=width,
        )
        self.hpm = Hpm(cfg, rng.spawn(1))
        if not paka:
            for layer in self.hpm.cascade:
                _freeze_branches(layer)
        self.head = Conv2d(width, n_classes, ConvSpec(kernel_size=1), rng.spawn(2))

    def __call__(self, x: Tensor, trace: list | None = None) -> Tensor:
        z = ops.relu(self.stem_norm(self.stem(x)))
        z = self.hpm(z, trace=trace)
        return self.head(z)


def _freeze_branches(layer: PakaLayer) -> None:
    """Pin both modulation branches at zero, reducing the layer to plain conv."""
    for branch in (layer.channel_branch, layer.directional_branch):
        for _, t in branch.parameters():
            t.data[...] = 0.0
            t.requires_grad = False


MODELS = {
    "paka1": lambda cfg, rng: DirectionCopyPaka(rng),
    "conv1": lambda cfg, rng: DirectionCopyConv(rng),
    "hpm-seg": lambda cfg, rng: SegNet(rng, cfg.n_classes, paka=True),
    "cascade-seg": lambda cfg, rng: SegNet(rng, cfg.n_classes, paka=False),
    "dsr": lambda cfg, rng: DsrNet(cfg.scale, rng),
}


def build_model(cfg: RunConfig, rng: Rng) -> Module:
    if cfg.model not in MODELS:
        raise ConfigError(f"unknown model {cfg.model!r}; choose from {sorted(MODELS)}")
    return MODELS[cfg.model](cfg, rng)


def _forward(model: Module, task: Task, xs: tuple[np.ndarray, ...]) -> Tensor:
    if task.kind == "sr":
        return model(Tensor(xs[0]), Tensor(xs[1]))
    return model(Tensor(xs[0]))


def _loss(model: Module, task: Task, xs: tuple, y: np.ndarray) -> Tensor:
    pred = _forward(model, task, xs)
    if task.kind == "seg":
        return ops.cross_entropy(pred, y)
    return ops.mse_loss(pred, y)


def evaluate(model: Module, task: Task, batch: int = 8) -> dict:
    """Task metrics over the held-out split, in eval mode."""
    model.set_mode(False)
    preds = []
    n = task.test_y.shape[0]
    with no_grad():
        for i in range(0, n, batch):
            xs = tuple(x[i : i + batch] for x in task.test_x)
            preds.append(_forward(model, task, xs).data)
    pred = np.concatenate(preds)
    model.set_mode(True)
    if task.kind == "regress":
        return {"mse": float(np.mean((pred - task.test_y) ** 2))}
    if task.kind == "seg":
        miou, pixacc = metrics_seg(pred.argmax(axis=1), task.test_y, task.n_classes)
        return {"miou": miou, "pixacc": pixacc}
    rmse, psnr = metrics_sr(pred * 255.0, task.test_y * 255.0, 255.0)
    return {"rmse": rmse, "psnr": psnr}


def train(cfg: RunConfig, out_dir=None, log=None) -> tuple[Module, Task, list[dict]]:
    """Run the loop; returns the trained model, its task, and the metric log.

    With ``out_dir`` set, writes checkpoint/ and log.csv there.
    """
    task = build_task(cfg)
    model = build_model(cfg, Rng(cfg.seed + 1))
    opt = Sgd(model.parameters(), cfg.momentum, cfg.weight_decay)
    sampler = Rng(cfg.seed + 2)
    n_train = task.train_y.shape[0]
    rows: list[dict] = []
    for it in range(cfg.total_iters):
        lr = poly_lr(cfg.lr0, cfg.poly_power, it, cfg.total_iters)
        idx = sampler.integers(0, n_train, cfg.batch_size)
        xs = tuple(x[idx] for x in task.train_x)
        loss = _loss(model, task, xs, task.train_y[idx])
        lv = loss.item()
        if not math.isfinite(lv):
            raise DivergenceError(f"non-finite loss at iteration {it}")
        loss.backward()
        opt.step(lr)
        opt.zero_grad()
        if it % cfg.log_every == 0 or it == cfg.total_iters - 1:
            row = {"iteration": it, "lr": lr, "loss": lv, **evaluate(model, task)}
            rows.append(row)
            if log is not None:
                log(row)
    if cfg.total_iters == 0:
        rows.append({"iteration": 0, "lr": cfg.lr0, "loss": math.nan, **evaluate(model, task)})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        serialize.save_checkpoint(out / "checkpoint", model.state_arrays(), meta=cfg.to_dict())
        write_log_csv(out / "log.csv", rows)
    return model, task, rows


def write_log_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)


def load_model(ckpt_dir) -> tuple[Module, RunConfig]:
    arrays, meta = serialize.load_checkpoint(ckpt_dir)
    cfg = RunConfig(**meta)
    model = build_model(cfg, Rng(cfg.seed + 1))
    serialize.restore_module(model, arrays)
    return model, cfg


def bicubic_baseline_rmse(task: Task) -> np.ndarray:
    """Per-scene RMSE of plain bicubic up-sampling on an SR task's test split."""
    lr = task.test_x[0]
    up = bicubic_upsample(Tensor(lr), task.scale).data
    err = (up - task.test_y) * 255.0
    return np.sqrt((err**2).mean(axis=(1, 2, 3)))

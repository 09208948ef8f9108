"""Command-line entry point.

Subcommands: gradcheck, train, eval, field, bench, gen-data, inspect.
Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import data, gradcheck, serialize, train as training
from .fieldviz import FieldQuery, field_to_csv, propagational_field, render_field
from .ops import ConvSpec
from .tensor import Rng, Tensor
from .attention import PakaLayer

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


def _echo_config(name: str, cfg: dict) -> None:
    print(f"[{name}] resolved config: {json.dumps(cfg, sort_keys=True)}")


def cmd_gradcheck(args) -> int:
    _echo_config("gradcheck", {"scope": args.scope, "seed": args.seed, "seeds": args.seeds})
    results = gradcheck.run_suite(args.scope, args.seed, n_seeds=args.seeds)
    for r in sorted(results, key=lambda r: r.name):
        print(r.line())
    bad = [r for r in results if not r.ok]
    if bad:
        print(f"FAILED: {len(bad)} checks over tolerance, worst: {max(bad, key=lambda r: r.worst).name}")
        return EXIT_NUMERIC
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _load_config(args) -> training.RunConfig:
    cfg = training.RunConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    _echo_config("train", cfg.to_dict())
    out = Path(args.out)

    def log(row):
        print("  " + " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))

    try:
        training.train(cfg, out_dir=out, log=log)
    except training.DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"checkpoint written to {out / 'checkpoint'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    _echo_config("eval", cfg.to_dict())
    model, meta_cfg = training.load_model(args.checkpoint)
    task = training.build_task(cfg)
    metrics = training.evaluate(model, task)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_field(args) -> int:
    cfg = _load_config(args)
    _echo_config("field", {**cfg.to_dict(), "pixel": args.pixel, "depth": args.depth})
    model, _ = training.load_model(args.checkpoint)
    task = training.build_task(cfg)
    xs = tuple(x[:1] for x in task.test_x)
    model.set_mode(False)
    trace: list = []
    if task.kind == "sr":
        model(Tensor(xs[0]), Tensor(xs[1]), trace=trace)
        base = xs[1][0, 0]
    else:
        model(Tensor(xs[0]), trace=trace)
        base = xs[0][0, 0]
    trace = [rec for rec in trace if rec and "m" in rec]
    if not trace:
        print("model exposes no attention layers", file=sys.stderr)
        return EXIT_USAGE
    y, x = (int(v) for v in args.pixel.split(","))
    fr = propagational_field(trace, FieldQuery(y=y, x=x, depth=args.depth))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    render_field(fr, base, out / "field.ppm")
    field_to_csv(fr, out / "field.csv")
    print(f"field written to {out / 'field.ppm'} and {out / 'field.csv'}")
    for i, (vy, vx) in enumerate(fr.vectors):
        print(f"  layer {i}: v = ({vy:+.6f}, {vx:+.6f})")
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    _echo_config("bench", {"sizes": sizes, "reps": args.reps, "seed": args.seed})
    rows = []
    for size in sizes:
        rng = Rng(args.seed)
        layer = PakaLayer(8, 8, ConvSpec(3), rng.spawn(1))
        layer.channel_branch.norm.gamma.data[:] = 0.3
        layer.directional_branch.norm.gamma.data[:] = 0.3
        x = Tensor(rng.normal((2, 8, size, size)))
        layer.fused = True
        yf = layer(x).data
        layer.fused = False
        ym = layer(x).data
        gap = float(np.abs(yf - ym).max())
        if gap > 1e-12:
            print(f"variant disagreement {gap:.3e} at size {size}", file=sys.stderr)
            return EXIT_NUMERIC
        timings = {}
        for variant in ("fused", "materialized"):
            layer.fused = variant == "fused"
            reps = []
            for _ in range(args.reps):
                t0 = time.perf_counter()
                layer(x)
                reps.append(time.perf_counter() - t0)
            timings[variant] = statistics.median(reps)
        rows.append(
            {
                "size": size,
                "fused_ms": timings["fused"] * 1e3,
                "materialized_ms": timings["materialized"] * 1e3,
                "max_abs_gap": gap,
            }
        )
    writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    _echo_config(
        "gen-data",
        {"task": args.task, "seed": args.seed, "n": args.n, "size": args.size, "out": args.out},
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.task == "direction-copy":
        xs, ys = data.gen_direction_copy(args.seed, args.n, args.size)
        serialize.save_tensor(out / "inputs.bin", xs)
        serialize.save_tensor(out / "targets.bin", ys)
    elif args.task == "shapes-seg":
        samples = data.gen_shapes_seg(args.seed, args.n, args.size, args.n_classes)
        xs, ys = data.seg_to_arrays(samples)
        serialize.save_tensor(out / "images.bin", xs)
        serialize.save_tensor(out / "labels.bin", ys[:, None].astype(np.float64))
    elif args.task == "depth-sr":
        lr, guide, hr = data.gen_depth_scenes(args.seed, args.n, args.size, args.scale)
        serialize.save_tensor(out / "depth_lr.bin", lr)
        serialize.save_tensor(out / "guide.bin", guide)
        serialize.save_tensor(out / "depth_hr.bin", hr)
        for i in range(min(args.n, 4)):
            serialize.save_pgm(out / f"depth_hr_{i}.pgm", hr[i, 0] * 65535, max_val=65535)
            serialize.save_pgm(out / f"guide_{i}.pgm", guide[i, 0] * 255, max_val=255)
    else:
        print(f"unknown task {args.task!r}", file=sys.stderr)
        return EXIT_USAGE
    print(f"dataset written to {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    _echo_config("inspect", {"path": args.path})
    path = Path(args.path)
    if path.is_dir():
        arrays, meta = serialize.load_checkpoint(path)
        info = {
            "tensors": {k: list(v.shape) for k, v in sorted(arrays.items())},
            "total_scalars": int(sum(v.size for v in arrays.values())),
            "meta": meta,
        }
    else:
        info = serialize.tensor_info(path)
        arr = serialize.load_tensor(path)
        info.update(
            {"min": float(arr.min()), "max": float(arr.max()), "mean": float(arr.mean())}
        )
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paka", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    g.add_argument("--scope", default="all", choices=gradcheck.SCOPES)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--seeds", type=int, default=20, help="number of random seeds per check")
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="run a training loop from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint; metrics as JSON on stdout")
    e.add_argument("--config", required=True)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--checkpoint", required=True)
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("field", help="render the propagational field of a pixel")
    f.add_argument("--config", required=True)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--pixel", required=True, help="y,x")
    f.add_argument("--depth", type=int, default=3)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_field)

    b = sub.add_parser("bench", help="time fused vs materialized attention paths")
    b.add_argument("--sizes", default="16,32,64")
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("gen-data", help="write a synthetic dataset to disk")
    d.add_argument("--task", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--n", type=int, default=16)
    d.add_argument("--size", type=int, default=64)
    d.add_argument("--n-classes", type=int, default=4)
    d.add_argument("--scale", type=int, default=4)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_gen_data)

    i = sub.add_parser("inspect", help="describe a tensor file or checkpoint")
    i.add_argument("--path", required=True)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (training.ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

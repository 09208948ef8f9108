"""The command-line interface, driven through main(argv)."""

import json

import numpy as np
import pytest

from paka.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from paka.serialize import load_ppm, load_tensor


@pytest.fixture
def train_cfg(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(
        json.dumps(
            {
                "task": "direction-copy",
                "model": "paka1",
                "total_iters": 8,
                "batch_size": 2,
                "size": 16,
                "n_train": 4,
                "n_test": 2,
                "log_every": 4,
            }
        )
    )
    return path


def test_gradcheck_primitive_ok(capsys):
    rc = main(["gradcheck", "--scope", "primitive", "--seed", "0", "--seeds", "1"])
    out = capsys.readouterr().out
    assert rc == EXIT_OK
    assert "resolved config" in out
    assert "conv2d" in out and "checks passed" in out


def test_train_eval_field_pipeline(tmp_path, train_cfg, capsys):
    run = tmp_path / "run"
    assert main(["train", "--config", str(train_cfg), "--out", str(run)]) == EXIT_OK
    assert (run / "checkpoint" / "manifest.json").exists()
    assert (run / "log.csv").exists()
    capsys.readouterr()

    rc = main(
        ["eval", "--config", str(train_cfg), "--checkpoint", str(run / "checkpoint")]
    )
    assert rc == EXIT_OK
    metrics = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert "mse" in metrics

    fout = tmp_path / "field"
    rc = main(
        [
            "field", "--config", str(train_cfg), "--checkpoint", str(run / "checkpoint"),
            "--pixel", "8,8", "--depth", "1", "--out", str(fout),
        ]
    )
    assert rc == EXIT_OK
    assert load_ppm(fout / "field.ppm").shape == (16, 16, 3)
    assert (fout / "field.csv").read_text().startswith("layer,dy,dx,weight")


def test_train_seed_override(tmp_path, train_cfg, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["train", "--config", str(train_cfg), "--out", str(a), "--seed", "5"])
    main(["train", "--config", str(train_cfg), "--out", str(b), "--seed", "6"])
    wa = load_tensor(a / "checkpoint" / "layer.weight.bin")
    wb = load_tensor(b / "checkpoint" / "layer.weight.bin")
    assert not np.array_equal(wa, wb)


def test_train_divergence_exit_code(tmp_path, train_cfg, capsys):
    cfg = json.loads(train_cfg.read_text())
    cfg["lr0"] = 1e6
    cfg["total_iters"] = 50
    train_cfg.write_text(json.dumps(cfg))
    rc = main(["train", "--config", str(train_cfg), "--out", str(tmp_path / "run")])
    assert rc == EXIT_NUMERIC


def test_bad_config_key_is_usage_error(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"task": "direction-copy", "bogus": 1}))
    rc = main(["train", "--config", str(path), "--out", str(tmp_path / "run")])
    assert rc == EXIT_USAGE


def test_missing_config_is_io_error(tmp_path, capsys):
    rc = main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "r")])
    assert rc == EXIT_IO


def test_bench_small(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    rc = main(["bench", "--sizes", "8", "--reps", "2", "--out", str(out)])
    assert rc == EXIT_OK
    stdout = capsys.readouterr().out
    assert "fused_ms" in stdout and "materialized_ms" in stdout
    assert out.read_text().startswith("size,")


@pytest.mark.parametrize(
    "task,files",
    [
        ("direction-copy", ["inputs.bin", "targets.bin"]),
        ("shapes-seg", ["images.bin", "labels.bin"]),
        ("depth-sr", ["depth_lr.bin", "guide.bin", "depth_hr.bin", "depth_hr_0.pgm"]),
    ],
)
def test_gen_data_and_inspect(tmp_path, capsys, task, files):
    out = tmp_path / task
    rc = main(["gen-data", "--task", task, "--n", "2", "--size", "16", "--out", str(out)])
    assert rc == EXIT_OK
    for fname in files:
        assert (out / fname).exists()
    capsys.readouterr()
    rc = main(["inspect", "--path", str(out / files[0])])
    assert rc == EXIT_OK
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["dims"][0] == 2


def test_gen_data_unknown_task(tmp_path, capsys):
    rc = main(["gen-data", "--task", "imagenet", "--out", str(tmp_path / "d")])
    assert rc == EXIT_USAGE


def test_inspect_checkpoint_dir(tmp_path, train_cfg, capsys):
    run = tmp_path / "run"
    main(["train", "--config", str(train_cfg), "--out", str(run)])
    capsys.readouterr()
    rc = main(["inspect", "--path", str(run / "checkpoint")])
    assert rc == EXIT_OK
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["total_scalars"] > 0
    assert "layer.weight" in info["tensors"]

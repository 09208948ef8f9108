"""File formats: the binary tensor container, checkpoint directories with a
JSON manifest, and PGM/PPM images.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PAKA"
VERSION = 1
_DTYPES = {0: "<f8", 1: "<f4"}
_DTYPE_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


class FormatError(ValueError):
    pass


def save_tensor(path, arr: np.ndarray) -> None:
    """Write a 4-D array: magic, version u32, dtype u8, ndim u8, dims 4xu64, payload."""
    arr = np.asarray(arr)
    if arr.ndim > 4:
        raise FormatError(f"tensor rank {arr.ndim} > 4")
    shaped = arr.reshape((1,) * (4 - arr.ndim) + arr.shape)
    code = _DTYPE_CODES.get(arr.dtype, 0)
    data = np.ascontiguousarray(shaped, dtype=_DTYPES[code])
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IBB", VERSION, code, 4))
        f.write(struct.pack("<4Q", *shaped.shape))
        f.write(data.tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise FormatError(f"{path}: bad magic bytes")
        version, code, ndim = struct.unpack("<IBB", f.read(6))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if ndim != 4 or code not in _DTYPES:
            raise FormatError(f"{path}: bad header (ndim={ndim}, dtype={code})")
        dims = struct.unpack("<4Q", f.read(32))
        n = int(np.prod(dims))
        payload = f.read()
    arr = np.frombuffer(payload, dtype=_DTYPES[code])
    if arr.size != n:
        raise FormatError(f"{path}: payload holds {arr.size} values, header says {n}")
    return arr.reshape(dims).astype(np.float64)


def tensor_info(path) -> dict:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise FormatError(f"{path}: bad magic bytes")
        version, code, ndim = struct.unpack("<IBB", f.read(6))
        dims = struct.unpack("<4Q", f.read(32))
    return {"version": version, "dtype": {0: "f64", 1: "f32"}[code], "ndim": ndim, "dims": list(dims)}


def save_checkpoint(out_dir, arrays: list[tuple[str, np.ndarray]], meta: dict | None = None) -> None:
    """One binary tensor file per named array plus manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"tensors": {}, "meta": meta or {}}
    for name, arr in arrays:
        fname = name.replace("/", "_") + ".bin"
        save_tensor(out / fname, arr)
        manifest["tensors"][name] = {"file": fname, "shape": list(arr.shape)}
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(ckpt_dir) -> tuple[dict[str, np.ndarray], dict]:
    ckpt = Path(ckpt_dir)
    with open(ckpt / "manifest.json") as f:
        manifest = json.load(f)
    arrays = {}
    for name, entry in manifest["tensors"].items():
        arr = load_tensor(ckpt / entry["file"])
        arrays[name] = arr.reshape(entry["shape"])
    return arrays, manifest.get("meta", {})


def restore_module(module, arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into a module's live state, in place."""
    state = dict(module.state_arrays())
    missing = set(state) - set(arrays)
    extra = set(arrays) - set(state)
    if missing or extra:
        raise FormatError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, arr in arrays.items():
        target = state[name]
        target[...] = arr.reshape(target.shape)


# ---------------------------------------------------------------------------
# netpbm images


def save_pgm(path, img: np.ndarray, max_val: int = 255) -> None:
    """Binary PGM; 16-bit samples are written big-endian per the format."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise FormatError("PGM expects a 2-D array")
    data = np.clip(np.rint(img), 0, max_val)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{max_val}\n".encode())
        if max_val > 255:
            f.write(data.astype(">u2").tobytes())
        else:
            f.write(data.astype(np.uint8).tobytes())


def load_pgm(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as f:
        raw = f.read()
    magic, rest = raw.split(b"\n", 1)
    if magic.strip() != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    fields: list[int] = []
    while len(fields) < 3:
        line, rest = rest.split(b"\n", 1)
        line = line.split(b"#")[0].strip()
        if line:
            fields.extend(int(v) for v in line.split())
    w, h, max_val = fields
    dt = ">u2" if max_val > 255 else np.uint8
    img = np.frombuffer(rest, dtype=dt, count=h * w).reshape(h, w)
    return img.astype(np.float64), max_val


def save_ppm(path, img: np.ndarray) -> None:
    """Binary P6, 8-bit; img is (h, w, 3) in [0, 255]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError("PPM expects (h, w, 3)")
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def load_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    magic, rest = raw.split(b"\n", 1)
    if magic.strip() != b"P6":
        raise FormatError(f"{path}: not a binary PPM")
    fields: list[int] = []
    while len(fields) < 3:
        line, rest = rest.split(b"\n", 1)
        line = line.split(b"#")[0].strip()
        if line:
            fields.extend(int(v) for v in line.split())
    w, h, _ = fields
    return np.frombuffer(rest, dtype=np.uint8, count=h * w * 3).reshape(h, w, 3).astype(np.float64)

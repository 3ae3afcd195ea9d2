"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic           8 bytes  b"ROPEKIT\\0"
    version         u32      currently 1
    step            u64      optimizer step counter
    rng seed        u64
    rng state       u64
    config length   u32      followed by that many UTF-8 bytes of
                             "key=value" lines (the model config)
    tensor count    u32
    per tensor:
        name length u16, name bytes
        ndim        u8, then ndim u64 dims
        precision   u8 (32 or 64)
        payload     raw little-endian floats

Model parameters come first in registry order, then the Adam moments as
"adam.m:<name>" / "adam.v:<name>". Loading rebuilds the model from the
config text and overwrites every array bytewise, so a resumed run
continues the exact trajectory of an uninterrupted one.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import DataError
from ..numerics import Rng

MAGIC = b"ROPEKIT\x00"
VERSION = 1

__all__ = ["save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<Q", dim))
    bits = 64 if arr.dtype == np.float64 else 32
    fh.write(struct.pack("<B", bits))
    fh.write(arr.astype("<f8" if bits == 64 else "<f4", copy=False).tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError("checkpoint is truncated")
    return buf


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = tuple(struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(ndim))
    (bits,) = struct.unpack("<B", _read_exact(fh, 1))
    if bits not in (32, 64):
        raise DataError(f"unknown precision flag {bits} for tensor {name!r}")
    dtype = "<f8" if bits == 64 else "<f4"
    count = int(np.prod(shape)) if shape else 1
    payload = _read_exact(fh, count * (bits // 8))
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return name, arr.astype(np.float64 if bits == 64 else np.float32)


def save_checkpoint(path, model, adam, rng: Rng) -> None:
    config_text = model.config.to_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", adam.step))
        fh.write(struct.pack("<Q", rng.seed))
        fh.write(struct.pack("<Q", rng.state))
        fh.write(struct.pack("<I", len(config_text)))
        fh.write(config_text)
        tensors = [(p.name, p.data) for p in model.params]
        tensors += [(f"adam.m:{name}", arr) for name, arr in adam.m.items()]
        tensors += [(f"adam.v:{name}", arr) for name, arr in adam.v.items()]
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(fh, name, arr)


def load_checkpoint(path):
    """Returns (model, adam_state, rng, step) rebuilt from the file."""
    from .model import ModelConfig, build_model
    from .train import AdamState

    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise DataError(f"{path} is not a rope-kit checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        (step,) = struct.unpack("<Q", _read_exact(fh, 8))
        (seed,) = struct.unpack("<Q", _read_exact(fh, 8))
        (state,) = struct.unpack("<Q", _read_exact(fh, 8))
        (config_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config = ModelConfig.from_text(_read_exact(fh, config_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        stored = dict(_read_tensor(fh) for _ in range(count))

    model = build_model(config, Rng(0))  # throwaway stream; weights come from the file
    adam = AdamState(model, step=step)
    for p in model.params:
        for prefix, target in (("", None), ("adam.m:", adam.m), ("adam.v:", adam.v)):
            key = prefix + p.name
            if key not in stored:
                raise DataError(f"checkpoint is missing tensor {key!r}")
            arr = stored[key]
            if arr.shape != p.data.shape:
                raise DataError(
                    f"tensor {key!r} has shape {arr.shape}, expected {p.data.shape}"
                )
            if target is None:
                p.tensor.data[...] = arr
            else:
                target[p.name][...] = arr
    rng = Rng(seed)
    rng.state = state
    return model, adam, rng, step

"""Binary checkpoints: model config, parameters, optimizer state.

Layout (all integers little-endian):

  magic    4 bytes  b"PSK1"
  hlen     u64      length of the header JSON
  header   utf-8 JSON: model config, seed, step, extra metadata
  blocks   repeated named arrays:
             u32 name length, name utf-8,
             u32 dtype-string length, dtype string (numpy form, e.g. "<f8"),
             u32 ndim, u64 per dimension,
             raw array bytes (C order)
  end      4 bytes  b"KEND"

Files are written to a temp path and renamed into place, so a crash
leaves no half-written file under the target name; a file missing the
end marker is rejected as incomplete.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct

import numpy as np

from .encoder import EncoderConfig
from .errors import DataError
from .model import Model, ModelConfig

MAGIC = b"PSK1"
END = b"KEND"


def model_config_to_dict(cfg: ModelConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["encoder"]["conv_channels"] = list(cfg.encoder.conv_channels)
    return d


def model_config_from_dict(d: dict) -> ModelConfig:
    enc = dict(d["encoder"])
    enc["conv_channels"] = tuple(enc["conv_channels"])
    rest = {k: v for k, v in d.items() if k != "encoder"}
    return ModelConfig(encoder=EncoderConfig(**enc), **rest)


def _write_block(f, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    dt = arr.dtype.str.encode("ascii")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(struct.pack("<I", len(dt)))
    f.write(dt)
    f.write(struct.pack("<I", arr.ndim))
    for s in arr.shape:
        f.write(struct.pack("<Q", s))
    f.write(np.ascontiguousarray(arr).tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise DataError(f"checkpoint truncated while reading {what}")
    return b


def _read_block(f, peek: bytes) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<I", peek)
    name = _read_exact(f, nlen, "block name").decode("utf-8")
    (dlen,) = struct.unpack("<I", _read_exact(f, 4, "dtype length"))
    dtype = np.dtype(_read_exact(f, dlen, "dtype").decode("ascii"))
    (ndim,) = struct.unpack("<I", _read_exact(f, 4, "ndim"))
    shape = tuple(
        struct.unpack("<Q", _read_exact(f, 8, "shape"))[0] for _ in range(ndim)
    )
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    raw = _read_exact(f, count * dtype.itemsize, f"payload of {name}")
    return name, np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def save_checkpoint(
    path: str,
    model: Model,
    step: int,
    optimizer_state: dict[str, np.ndarray] | None = None,
    extra: dict | None = None,
) -> None:
    header = {
        "model_config": model_config_to_dict(model.cfg),
        "seed": model.seed,
        "step": int(step),
        "extra": extra or {},
    }
    hjson = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(hjson)))
        f.write(hjson)
        for name in sorted(model.params()):
            _write_block(f, "param/" + name, model.params()[name].data)
        if optimizer_state:
            for name in sorted(optimizer_state):
                _write_block(f, "opt/" + name, np.asarray(optimizer_state[name]))
        f.write(END)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    """Returns {model_config, seed, step, extra, params, opt}."""
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic)")
        (hlen,) = struct.unpack("<Q", _read_exact(f, 8, "header length"))
        header = json.loads(_read_exact(f, hlen, "header").decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        opt: dict[str, np.ndarray] = {}
        while True:
            peek = f.read(4)
            if len(peek) != 4:
                raise DataError(f"{path} is incomplete (no end marker)")
            if peek == END:
                break
            name, arr = _read_block(f, peek)
            if name.startswith("param/"):
                params[name[len("param/"):]] = arr
            elif name.startswith("opt/"):
                opt[name[len("opt/"):]] = arr
            else:
                raise DataError(f"unknown block kind in {path}: {name}")
    return {
        "model_config": model_config_from_dict(header["model_config"]),
        "seed": int(header["seed"]),
        "step": int(header["step"]),
        "extra": header["extra"],
        "params": params,
        "opt": opt,
    }


def restore_model(path: str) -> tuple[Model, dict]:
    """Rebuild the model a checkpoint describes and load its weights."""
    ckpt = load_checkpoint(path)
    model = Model(ckpt["model_config"], seed=ckpt["seed"])
    current = model.params()
    saved = ckpt["params"]
    missing = sorted(set(current) - set(saved))
    surplus = sorted(set(saved) - set(current))
    if missing or surplus:
        raise DataError(
            f"checkpoint/model parameter mismatch: missing={missing[:5]} "
            f"surplus={surplus[:5]}"
        )
    for name, arr in saved.items():
        if current[name].data.shape != arr.shape:
            raise DataError(
                f"shape mismatch for {name}: model {current[name].data.shape}, "
                f"checkpoint {arr.shape}"
            )
        current[name].data = arr.astype(np.float64, copy=True)
    return model, ckpt

"""PVTC checkpoint files.

Layout (all integers little-endian)::

    b"PVTC"                       magic
    u32  version                  currently 1
    u32  header length, then that many bytes of UTF-8 JSON
         {"model_config": {...}, "trainable": {name: bool}, "optimizer": {...} | null}
    u32  tensor count
    per tensor:
        u32 name length, UTF-8 name
        u8  dtype code (0 = float32, 1 = float64)
        u32 rank, then rank x u64 dims
        raw little-endian data

Optimizer moments, when saved, are stored as extra tensors named
``optim.m.<param>`` and ``optim.v.<param>``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, TruncatedFileError
from .optim import Adam
from .tensor import Tensor
from .vit import ModelConfig, ViTModel, parameter_shapes

MAGIC = b"PVTC"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def _tensor_record(name: str, array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array)
    try:
        code = CODES[array.dtype]
    except KeyError:
        raise FormatError(f"tensor {name}: unsupported dtype {array.dtype}") from None
    raw_name = name.encode("utf-8")
    head = struct.pack("<I", len(raw_name)) + raw_name + struct.pack("<BI", code, array.ndim)
    head += struct.pack(f"<{array.ndim}Q", *array.shape)
    return head + array.astype(DTYPES[code], copy=False).tobytes()


def save_checkpoint(model: ViTModel, path, optimizer: Adam | None = None) -> None:
    tensors = [(n, p.data) for n, p in model.params.items()]
    opt_meta = None
    if optimizer is not None:
        opt_meta = {"step": optimizer.step_count, "lr": optimizer.lr, "beta1": optimizer.beta1,
                    "beta2": optimizer.beta2, "eps": optimizer.eps, "weight_decay": optimizer.weight_decay}
        tensors += [(f"optim.m.{n}", a) for n, a in optimizer.m.items()]
        tensors += [(f"optim.v.{n}", a) for n, a in optimizer.v.items()]
    header = json.dumps({"model_config": model.config.to_dict(), "trainable": model.trainable_flags(),
                         "optimizer": opt_meta}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header, struct.pack("<I", len(tensors))]
    parts += [_tensor_record(n, a) for n, a in tensors]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"{self.path}: file truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Raw header dict and ordered tensors."""
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a PVTC checkpoint")
    version, header_len = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    try:
        header = json.loads(r.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BI")
        if code not in DTYPES:
            raise FormatError(f"{path}: tensor {name} has unknown dtype code {code}")
        dims = r.unpack(f"<{rank}Q")
        dtype = DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        tensors[name] = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    return header, tensors


def load_checkpoint(path, config: ModelConfig | None = None,
                    with_optimizer: bool = False):
    """Rebuild the model; with ``config`` given, shapes are checked against it first.

    Returns the model, or ``(model, Adam | None)`` when ``with_optimizer``.
    """
    header, tensors = read_checkpoint(path)
    stored = ModelConfig.from_dict(header["model_config"])
    target = config or stored
    for name, shape in parameter_shapes(target).items():
        if name not in tensors:
            raise DimensionError(f"checkpoint lacks tensor {name}")
        if tensors[name].shape != shape:
            raise DimensionError(f"tensor {name}: checkpoint shape {tensors[name].shape} != expected {shape}")
    flags = header.get("trainable", {})
    params = {n: Tensor(tensors[n].copy(), requires_grad=bool(flags.get(n, True)))
              for n in parameter_shapes(target)}
    model = ViTModel(target, params)
    if not with_optimizer:
        return model
    meta = header.get("optimizer")
    if meta is None:
        return model, None
    opt = Adam(model.params, lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"],
               weight_decay=meta["weight_decay"])
    opt.step_count = int(meta["step"])
    for name, arr in tensors.items():
        if name.startswith("optim.m."):
            opt.m[name[len("optim.m."):]] = arr.copy()
        elif name.startswith("optim.v."):
            opt.v[name[len("optim.v."):]] = arr.copy()
    return model, opt

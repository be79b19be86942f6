"""Binary checkpoint format.

Layout (little-endian)::

    b"ROTA" | u16 version | u8 len + variant tag | u16 n_dims + (u16 len + name, i64 value)*
    | u64 seed | u64 adam step | u32 n_tensors
    | per tensor: u16 len + name, u8 ndim, u32 shape*, float32 values

Optimizer moments, when present, are stored as extra tensors named
``adam.m/<param>`` and ``adam.v/<param>``.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .model import Dims, ModelParams

MAGIC = b"ROTA"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.tensors.items()},
                   {k: np.zeros_like(p) for k, p in params.tensors.items()}, 0)

    def copy(self) -> "AdamState":
        return AdamState({k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()}, self.t)


def _str(fh, s: str, fmt="<H"):
    b = s.encode("utf-8")
    fh.write(struct.pack(fmt, len(b)))
    fh.write(b)


def _read(fh, fmt):
    size = struct.calcsize(fmt)
    data = fh.read(size)
    if len(data) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, data)


def _read_str(fh, fmt="<H") -> str:
    (n,) = _read(fh, fmt)
    return fh.read(n).decode("utf-8")


def dumps(params: ModelParams, adam: AdamState | None = None) -> bytes:
    fh = io.BytesIO()
    fh.write(MAGIC)
    fh.write(struct.pack("<H", VERSION))
    _str(fh, params.variant, "<B")
    dims = params.dims.to_dict()
    fh.write(struct.pack("<H", len(dims)))
    for name, value in dims.items():
        _str(fh, name)
        fh.write(struct.pack("<q", int(value)))
    fh.write(struct.pack("<Q", params.seed))
    fh.write(struct.pack("<Q", adam.t if adam is not None else 0))
    tensors = list(params.tensors.items())
    if adam is not None:
        tensors += [(f"adam.m/{k}", a) for k, a in adam.m.items()]
        tensors += [(f"adam.v/{k}", a) for k, a in adam.v.items()]
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _str(fh, name)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return fh.getvalue()


def loads(data: bytes) -> tuple[ModelParams, AdamState | None]:
    fh = io.BytesIO(data)
    if fh.read(4) != MAGIC:
        raise CheckpointError("not a ROTA checkpoint")
    (version,) = _read(fh, "<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    variant = _read_str(fh, "<B")
    (n_dims,) = _read(fh, "<H")
    dims = {}
    for _ in range(n_dims):
        name = _read_str(fh)
        (dims[name],) = _read(fh, "<q")
    known = {f.name for f in fields(Dims)}
    if set(dims) - known:
        raise CheckpointError(f"unknown dims {sorted(set(dims) - known)}")
    (seed,) = _read(fh, "<Q")
    (t,) = _read(fh, "<Q")
    (n,) = _read(fh, "<I")
    tensors, m, v = {}, {}, {}
    for _ in range(n):
        name = _read_str(fh)
        (ndim,) = _read(fh, "<B")
        shape = _read(fh, f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        raw = fh.read(4 * count)
        if len(raw) != 4 * count:
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
        if name.startswith("adam.m/"):
            m[name[7:]] = arr
        elif name.startswith("adam.v/"):
            v[name[7:]] = arr
        else:
            tensors[name] = arr
    params = ModelParams(variant, Dims(**dims), seed, tensors)
    adam = AdamState(m, v, t) if m else None
    return params, adam


def save_checkpoint(path, params: ModelParams, adam: AdamState | None = None) -> None:
    Path(path).write_bytes(dumps(params, adam))


def load_checkpoint(path) -> tuple[ModelParams, AdamState | None]:
    return loads(Path(path).read_bytes())

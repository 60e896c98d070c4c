"""Binary checkpoint format.

Layout::

    b"MHELAB01"                      8-byte magic, last two bytes = version
    uint32 little-endian             header length in bytes
    header                           UTF-8 key=value lines
    payload                          little-endian float tensors, manifest order

Header lines are ``config.<field>=<value>`` for every ModelConfig field,
``dtype=<f4|f8>``, and one ``param=<name> <d0,d1,...> <offset>`` line per
tensor, where ``offset`` counts bytes from the start of the payload.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import (CheckpointFormatError, CheckpointShapeError, CheckpointTruncatedError,
                     CheckpointVersionError, ConfigError)
from .model import Model, ModelConfig, parameter_shapes
from .tensor import Tensor

MAGIC_PREFIX = b"MHELAB"
VERSION = b"01"
MAGIC = MAGIC_PREFIX + VERSION
_LEN = struct.Struct("<I")


def _header(model: Model, dtype: np.dtype) -> tuple[bytes, list[np.ndarray]]:
    lines = [f"config.{k}={v}" for k, v in model.cfg.to_items()]
    lines.append(f"dtype={dtype.str[1:]}")
    offset = 0
    arrays = []
    for name, t in model.named_parameters():
        arr = np.ascontiguousarray(t.data, dtype=dtype.newbyteorder("<"))
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"param={name} {shape} {offset}")
        offset += arr.nbytes
        arrays.append(arr)
    return ("\n".join(lines) + "\n").encode("utf-8"), arrays


def to_bytes(model: Model) -> bytes:
    dtype = np.dtype(model.cfg.dtype)
    header, arrays = _header(model, dtype)
    return MAGIC + _LEN.pack(len(header)) + header + b"".join(a.tobytes() for a in arrays)


def save_checkpoint(model: Model, path) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(model))
    os.replace(tmp, path)
    return path


def _parse_header(text: str):
    config, manifest, dtype = {}, [], None
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointFormatError(f"malformed header line {line!r}")
        if key.startswith("config."):
            config[key[len("config."):]] = value
        elif key == "dtype":
            dtype = value
        elif key == "param":
            try:
                name, shape, offset = value.split(" ")
                dims = tuple(int(s) for s in shape.split(",")) if shape else ()
                manifest.append((name, dims, int(offset)))
            except ValueError:
                raise CheckpointFormatError(f"malformed manifest line {line!r}") from None
        else:
            raise CheckpointFormatError(f"unknown header key {key!r}")
    if dtype not in ("f4", "f8"):
        raise CheckpointFormatError(f"unsupported payload dtype {dtype!r}")
    return config, manifest, np.dtype("<" + dtype)


def from_bytes(blob: bytes) -> Model:
    if len(blob) < len(MAGIC):
        if MAGIC.startswith(blob[:len(MAGIC)]) and blob:
            raise CheckpointTruncatedError("file ends inside the magic bytes")
        raise CheckpointFormatError("not a checkpoint: missing magic bytes")
    magic = blob[:len(MAGIC)]
    if not magic.startswith(MAGIC_PREFIX):
        raise CheckpointFormatError(f"not a checkpoint: bad magic {magic!r}")
    if magic != MAGIC:
        raise CheckpointVersionError(f"checkpoint version {magic[len(MAGIC_PREFIX):]!r}, "
                                     f"this build reads {VERSION!r}")
    pos = len(MAGIC)
    if len(blob) < pos + _LEN.size:
        raise CheckpointTruncatedError("file ends before the header length")
    (hlen,) = _LEN.unpack_from(blob, pos)
    pos += _LEN.size
    if len(blob) < pos + hlen:
        raise CheckpointTruncatedError(f"header declares {hlen} bytes, only {len(blob) - pos} present")
    try:
        text = blob[pos:pos + hlen].decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointFormatError("header is not valid UTF-8") from None
    pos += hlen
    config, manifest, dtype = _parse_header(text)
    try:
        cfg = ModelConfig.from_items(config)
    except (ConfigError, ValueError) as exc:
        raise CheckpointFormatError(f"invalid stored config: {exc}") from None
    expected = parameter_shapes(cfg)
    stored = {name: shape for name, shape, _ in manifest}
    if list(stored) != list(expected):
        raise CheckpointShapeError(f"stored tensors {sorted(set(stored) ^ set(expected))} "
                                   "do not match the configuration")
    payload = memoryview(blob)[pos:]
    params = {}
    for name, shape, offset in manifest:
        if shape != expected[name]:
            raise CheckpointShapeError(f"{name}: stored shape {shape}, config expects {expected[name]}")
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointTruncatedError(f"{name}: payload ends before byte {offset + nbytes}")
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=offset).reshape(shape)
        params[name] = Tensor(arr.astype(cfg.dtype), requires_grad=True)
    return Model(cfg, params)


def load_checkpoint(path) -> Model:
    return from_bytes(Path(path).read_bytes())

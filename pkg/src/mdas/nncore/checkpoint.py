"""Binary checkpoint format, portable across machines.

Layout (all integers little-endian):

    magic   4 bytes  b"MDAS"
    version u16      currently 1
    config  u32 length + UTF-8 JSON of ModelConfig
    count   u32      number of named tensors, then per tensor:
      name  u16 length + UTF-8 bytes
      dtype u8       0 = float32, 1 = float64
      rank  u8
      dims  rank * u32
      data  row-major little-endian values
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import (
    CheckpointConfigMismatch,
    CheckpointCorruptError,
    CheckpointFormatError,
)
from .config import ModelConfig
from .model import Params

MAGIC = b"MDAS"
VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(params: Params, path: str | Path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(params.tensors)))
    for name, tensor in params.tensors.items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", _DTYPE_TAGS[tensor.dtype]))
        buf.write(struct.pack("<B", tensor.ndim))
        for dim in tensor.shape:
            buf.write(struct.pack("<I", dim))
        le = tensor.astype(tensor.dtype.newbyteorder("<"), copy=False)
        buf.write(np.ascontiguousarray(le).tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read(buf: io.BytesIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointCorruptError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def load_checkpoint(
    path: str | Path, expect_config: ModelConfig | None = None
) -> tuple[Params, ModelConfig]:
    """Read params back; optionally verify they match `expect_config`."""
    buf = io.BytesIO(Path(path).read_bytes())
    if _read(buf, 4) != MAGIC:
        raise CheckpointFormatError(f"bad magic bytes in {path}")
    (version,) = struct.unpack("<H", _read(buf, 2))
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", _read(buf, 4))
    try:
        config = ModelConfig.from_dict(json.loads(_read(buf, cfg_len)))
    except (json.JSONDecodeError, TypeError) as e:
        raise CheckpointCorruptError(f"unreadable config block: {e}") from e
    if expect_config is not None and config != expect_config:
        raise CheckpointConfigMismatch(
            f"checkpoint config {config} != requested {expect_config}"
        )
    (count,) = struct.unpack("<I", _read(buf, 4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read(buf, 2))
        name = _read(buf, name_len).decode("utf-8")
        (tag,) = struct.unpack("<B", _read(buf, 1))
        if tag not in _TAG_DTYPES:
            raise CheckpointFormatError(f"unknown dtype tag {tag} for tensor {name!r}")
        (rank,) = struct.unpack("<B", _read(buf, 1))
        dims = struct.unpack(f"<{rank}I", _read(buf, 4 * rank))
        dtype = _TAG_DTYPES[tag]
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = _read(buf, n_items * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims)
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="))
    return Params(config, tensors), config

"""Shared checkpoint container for the two trainable models.

Layout (integers little-endian): magic "SDCK", format version byte, a kind
tag ("denoiser" or "refiner"), a JSON blob holding the model config and the
beta schedule, then named tensors as (name, dtype, shape, raw bytes).
Tensor bytes are stored verbatim, so save -> load round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sde import BetaSchedule

MAGIC = b"SDCK"
FORMAT_VERSION = 1


class CorruptCheckpoint(ValueError):
    """The file is not a readable checkpoint."""


@dataclass
class Checkpoint:
    kind: str
    config: dict
    schedule: BetaSchedule
    params: dict[str, np.ndarray] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def save(ckpt: Checkpoint, path) -> None:
    blob = json.dumps({
        "config": ckpt.config,
        "schedule": {
            "beta_start": ckpt.schedule.beta_start,
            "beta_end": ckpt.schedule.beta_end,
            "num_steps": ckpt.schedule.num_steps,
        },
    }).encode()
    kind = ckpt.kind.encode()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<BB", ckpt.format_version, len(kind))
    out += kind
    out += struct.pack("<I", len(blob))
    out += blob
    out += struct.pack("<I", len(ckpt.params))
    for name, array in ckpt.params.items():
        array = np.asarray(array)
        # ascontiguousarray promotes 0-d to 1-d, so keep the true shape
        shape = array.shape
        array = np.ascontiguousarray(array)
        name_b = name.encode()
        dtype_b = array.dtype.str.encode()
        out += struct.pack("<H", len(name_b)) + name_b
        out += struct.pack("<B", len(dtype_b)) + dtype_b
        out += struct.pack("<B", len(shape))
        out += struct.pack(f"<{len(shape)}I", *shape)
        raw = array.tobytes()
        out += struct.pack("<Q", len(raw))
        out += raw
    Path(path).write_bytes(bytes(out))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path) -> Checkpoint:
    cur = _Cursor(Path(path).read_bytes())
    if cur.take(4) != MAGIC:
        raise CorruptCheckpoint("bad magic")
    version, kind_len = cur.unpack("<BB")
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"unsupported format version {version}")
    kind = cur.take(kind_len).decode()
    (blob_len,) = cur.unpack("<I")
    try:
        blob = json.loads(cur.take(blob_len).decode())
        sched = BetaSchedule(**blob["schedule"])
        config = blob["config"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"bad config blob: {exc}") from exc
    (count,) = cur.unpack("<I")
    params = {}
    for _ in range(count):
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode()
        (dtype_len,) = cur.unpack("<B")
        dtype = np.dtype(cur.take(dtype_len).decode())
        (ndim,) = cur.unpack("<B")
        shape = cur.unpack(f"<{ndim}I") if ndim else ()
        (nbytes,) = cur.unpack("<Q")
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if nbytes != expected:
            raise CorruptCheckpoint(
                f"tensor {name}: payload {nbytes} bytes, shape implies {expected}"
            )
        params[name] = np.frombuffer(cur.take(nbytes), dtype=dtype).reshape(shape).copy()
    if cur.pos != len(cur.data):
        raise CorruptCheckpoint(f"{len(cur.data) - cur.pos} trailing bytes")
    return Checkpoint(kind=kind, config=config, schedule=sched, params=params,
                      format_version=version)

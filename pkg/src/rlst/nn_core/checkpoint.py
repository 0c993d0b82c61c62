"""Binary checkpoint container shared by every model.

Layout (all integers little-endian)::

    b"RLST1"
    repeated per tensor:
        u32 name length, name bytes (UTF-8)
        u32 rank, u64 dim x rank
        f64 values, row-major
    u64 BLAKE2b-64 digest over all value bytes, in record order
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

from rlst.nn_core.params import ParameterSet

MAGIC = b"RLST1"


class CheckpointError(IOError):
    pass


def _checksum(value_blobs: list[bytes]) -> int:
    h = hashlib.blake2b(digest_size=8)
    for blob in value_blobs:
        h.update(blob)
    return int.from_bytes(h.digest(), "little")


def encode(params: ParameterSet) -> bytes:
    parts = [MAGIC]
    blobs = []
    for name, t in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", t.values.ndim))
        parts.append(struct.pack(f"<{t.values.ndim}Q", *t.values.shape))
        blob = np.ascontiguousarray(t.values, dtype="<f8").tobytes()
        blobs.append(blob)
        parts.append(blob)
    parts.append(struct.pack("<Q", _checksum(blobs)))
    return b"".join(parts)


def decode(data: bytes) -> ParameterSet:
    if not data.startswith(MAGIC):
        raise CheckpointError("bad magic; not an RLST1 checkpoint")
    pos = len(MAGIC)
    end = len(data) - 8
    params = ParameterSet()
    blobs = []
    try:
        while pos < end:
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            blob = data[pos:pos + 8 * count]
            if len(blob) != 8 * count or pos + 8 * count > end:
                raise CheckpointError(f"truncated values for {name!r}")
            pos += 8 * count
            blobs.append(blob)
            params.add(name, np.frombuffer(blob, dtype="<f8").reshape(dims).astype(np.float64))
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != end:
        raise CheckpointError("record stream does not end at the checksum")
    (stored,) = struct.unpack_from("<Q", data, end)
    if stored != _checksum(blobs):
        raise CheckpointError("checksum mismatch")
    return params


def save(params: ParameterSet, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(params))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> ParameterSet:
    return decode(Path(path).read_bytes())

"""Versioned binary container for named tensors.

Byte layout (all integers little-endian)::

    offset  size         field
    0       8            magic  b"RTRRLSNP"
    8       2  (u16)     format version (currently 1)
    10      4  (u32)     metadata length M
    14      M            metadata, UTF-8 JSON object
    14+M    4  (u32)     tensor count K
            K records:
              2  (u16)   name length L
              L          name, UTF-8
              1  (u8)    dtype code: 1 float64, 2 complex128, 3 int64, 4 bool
              1  (u8)    ndim D
              8*D (u64)  shape
              ...        data, C order, little-endian, prod(shape) * itemsize bytes
    end-4   4  (u32)     CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import SnapshotError

__all__ = ["FORMAT_VERSION", "MAGIC", "load_snapshot", "save_snapshot"]

MAGIC = b"RTRRLSNP"
FORMAT_VERSION = 1

_DTYPES = {
    1: np.dtype("<f8"),
    2: np.dtype("<c16"),
    3: np.dtype("<i8"),
    4: np.dtype("?"),
}
_CODES = {v.kind + str(v.itemsize): k for k, v in _DTYPES.items()}


def _code_for(arr: np.ndarray) -> int:
    if arr.dtype.kind == "b":
        return 4
    if arr.dtype.kind in "iu":
        return 3
    if arr.dtype.kind == "c":
        return 2
    if arr.dtype.kind == "f":
        return 1
    raise SnapshotError(f"unsupported dtype {arr.dtype}")


def dumps(tensors: dict, metadata: dict | None = None) -> bytes:
    meta = json.dumps(metadata or {}, sort_keys=True, default=str).encode()
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = _code_for(arr)
        arr = np.asarray(arr, dtype=_DTYPES[code], order="C")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(blob: bytes):
    """Parse a container; returns ``(tensors, metadata)``."""
    if len(blob) < 22 or blob[:8] != MAGIC:
        raise SnapshotError("not a snapshot file (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise SnapshotError("snapshot checksum mismatch (file corrupted)")
    try:
        version, mlen = struct.unpack_from("<HI", body, 8)
        if version != FORMAT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {version}")
        pos = 14
        metadata = json.loads(body[pos:pos + mlen].decode())
        pos += mlen
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            dtype = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + size > len(body):
                raise SnapshotError(f"tensor {name!r} runs past the end of the file")
            tensors[name] = np.frombuffer(body, dtype=dtype, count=size // dtype.itemsize,
                                          offset=pos).reshape(shape).copy()
            pos += size
        if pos != len(body):
            raise SnapshotError("trailing bytes after the last tensor")
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"malformed snapshot: {exc}") from None
    return tensors, metadata


def save_snapshot(path, tensors: dict, metadata: dict | None = None):
    Path(path).write_bytes(dumps(tensors, metadata))


def load_snapshot(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc}") from None
    return loads(blob)

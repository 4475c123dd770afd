"""HGCK checkpoint files.

Layout (all integers little-endian)::

    b"HGCK" | u32 version | u32 count
    count x ( u16 name_len | name (utf-8) | u8 rank | rank x u32 extent | float32 data )
"""
from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

MAGIC = b"HGCK"
VERSION = 1


def dumps(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    def need(off, n, what):
        if off + n > len(buf):
            raise FormatError(f"truncated checkpoint reading {what} at byte {off} (need {n}, have {len(buf) - off})")

    need(0, 12, "header")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r} at byte 0")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at byte 4")
    off = 12
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        need(off, 2, "name length")
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        need(off, nlen + 1, "name")
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        rank = buf[off]
        off += 1
        need(off, 4 * rank, "extents")
        shape = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        need(off, nbytes, f"data of {name!r}")
        state[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape).astype(np.float32)
        off += nbytes
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after last parameter at byte {off}")
    return state


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory so failures leave no partial file."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(state: dict[str, np.ndarray], path) -> None:
    atomic_write(path, dumps(state))


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())

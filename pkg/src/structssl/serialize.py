"""Flat binary container for named float64 arrays.

Layout, all integers 64-bit little-endian:

    magic "SSLW" | version byte | array count
    per array: name length | UTF-8 name | rank | dims... | raw float64 LE values

Arrays are written in sorted name order so identical contents produce
identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSLW"
VERSION = 1


class WeightFormatError(ValueError):
    """File is not a valid weight container."""


def dump_weights(arrays: dict[str, np.ndarray]) -> bytes:
    out = bytearray()
    out += MAGIC
    out += bytes([VERSION])
    out += struct.pack("<Q", len(arrays))
    for name in sorted(arrays):
        # asarray keeps rank-0 arrays rank-0; ascontiguousarray would not
        arr = np.asarray(arrays[name], dtype=np.float64, order="C")
        encoded = name.encode("utf-8")
        out += struct.pack("<Q", len(encoded))
        out += encoded
        out += struct.pack("<Q", arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<Q", dim)
        out += arr.astype("<f8").tobytes()
    return bytes(out)


def parse_weights(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    if len(view) < len(MAGIC) + 1 + 8:
        raise WeightFormatError(f"file too short ({len(view)} bytes)")
    if bytes(view[:len(MAGIC)]) != MAGIC:
        raise WeightFormatError("bad magic string")
    offset = len(MAGIC)
    version = view[offset]
    offset += 1
    if version != VERSION:
        raise WeightFormatError(f"unsupported version {version}")

    def read_u64() -> int:
        nonlocal offset
        if offset + 8 > len(view):
            raise WeightFormatError("truncated file (expected 64-bit integer)")
        value = struct.unpack_from("<Q", view, offset)[0]
        offset += 8
        return value

    count = read_u64()
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = read_u64()
        if offset + name_len > len(view):
            raise WeightFormatError("truncated file (array name)")
        try:
            name = bytes(view[offset:offset + name_len]).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(f"array name is not valid UTF-8: {exc}") from exc
        offset += name_len
        rank = read_u64()
        if rank > 32:
            raise WeightFormatError(f"implausible rank {rank} for array '{name}'")
        shape = tuple(read_u64() for _ in range(rank))
        size = 1
        for dim in shape:
            size *= dim
        nbytes = size * 8
        if offset + nbytes > len(view):
            raise WeightFormatError(f"truncated file (values of array '{name}')")
        values = np.frombuffer(view, dtype="<f8", count=size, offset=offset)
        offset += nbytes
        arrays[name] = values.astype(np.float64).reshape(shape)
    if offset != len(view):
        raise WeightFormatError(f"{len(view) - offset} trailing bytes after last array")
    return arrays


def save_weights(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dump_weights(arrays))


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    return parse_weights(Path(path).read_bytes())

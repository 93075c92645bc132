"""RTNS: a minimal raw-tensor file format for CLI input and output.

Layout, all little-endian: magic ``b"RTNS"``, version u8 = 1, dtype code
u8 (1 = 32-bit float), u32 ndim, u64 dimensions, then the raw row-major
payload.  Read/write round-trips are bit-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, MalformedHeader, TruncatedStream, UnsupportedVersion

MAGIC = b"RTNS"
VERSION = 1
DTYPE_F32 = 1

_FIXED = struct.Struct("<4sBBI")


def write_rtns(path, tensor) -> None:
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    header = _FIXED.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + dims + arr.tobytes())


def read_rtns(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _FIXED.size:
        raise TruncatedStream(f"{path}: no full header in {len(data)} bytes")
    magic, version, dtype_code, ndim = _FIXED.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, supported: {VERSION}")
    if dtype_code != DTYPE_F32:
        raise MalformedHeader(f"{path}: unknown dtype code {dtype_code}")
    offset = _FIXED.size + 8 * ndim
    if len(data) < offset:
        raise TruncatedStream(f"{path}: header declares {ndim} dims but stream ends")
    shape = struct.unpack_from(f"<{ndim}Q", data, _FIXED.size)
    count = 1
    for d in shape:
        count *= d
    if len(data) != offset + 4 * count:
        raise TruncatedStream(
            f"{path}: payload is {len(data) - offset} bytes, expected {4 * count}"
        )
    values = np.frombuffer(data, "<f4", count=count, offset=offset)
    return values.reshape(shape).copy()

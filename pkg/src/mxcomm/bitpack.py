"""Fixed-width bit packing for code streams.

Layout contract: values are packed in order, each occupying ``width`` bits,
little-endian within the byte -- the first value sits in the lowest-order
bits of the first byte.  A stream is padded with zero bits to a whole byte
only at its end.  Widths 4 and 8 take fast paths since they dominate real
schemes; any width in [1, 8] is supported.
"""

from __future__ import annotations

import numpy as np

from .errors import TruncatedStream


def packed_nbytes(count: int, width: int) -> int:
    """Bytes needed to hold ``count`` values of ``width`` bits each."""
    return (count * width + 7) // 8


def pack_bits(codes: np.ndarray, width: int) -> bytes:
    """Pack unsigned integer codes into a contiguous little-endian bit stream."""
    if not 1 <= width <= 8:
        raise ValueError(f"width {width} outside supported range [1, 8]")
    codes = np.ascontiguousarray(codes, dtype=np.uint8).ravel()
    if width == 8:
        return codes.tobytes()
    if width == 4:
        if codes.size % 2:
            codes = np.append(codes, np.uint8(0))
        return (codes[0::2] | (codes[1::2] << 4)).tobytes()
    bits = np.unpackbits(codes[:, None], axis=1, count=width, bitorder="little")
    return np.packbits(bits.ravel(), bitorder="little").tobytes()


def unpack_bits(data: bytes, count: int, width: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns ``count`` uint8 codes.

    Raises TruncatedStream if ``data`` holds fewer than ``count`` values.
    """
    if not 1 <= width <= 8:
        raise ValueError(f"width {width} outside supported range [1, 8]")
    need = packed_nbytes(count, width)
    if len(data) < need:
        raise TruncatedStream(
            f"need {need} bytes for {count} codes of {width} bits, got {len(data)}"
        )
    raw = np.frombuffer(data, dtype=np.uint8, count=need)
    if width == 8:
        return raw.copy()
    if width == 4:
        codes = np.empty(raw.size * 2, dtype=np.uint8)
        codes[0::2] = raw & 0x0F
        codes[1::2] = raw >> 4
        return codes[:count]
    bits = np.unpackbits(raw, bitorder="little")[: count * width]
    return np.packbits(bits.reshape(count, width), axis=1, bitorder="little").ravel()

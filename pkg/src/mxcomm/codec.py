"""Block-wise quantization of activation tensors and the MXC1 wire format.

Encoding pipeline
-----------------
A tensor is flattened in row-major order and cut into consecutive blocks of
``block_size`` values (the final block may be short; no padding values are
ever encoded).  Each block is quantized independently:

1. The shared exponent starts at ``floor(log2(max_abs)) - emax(element)``
   and is incremented once if the scaled maximum would still exceed the
   grid's top value.  This keeps every scaled magnitude inside the grid, so
   an unclamped block's error is bounded by
   ``2^shared_exp * largest_grid_gap / 2``.
2. The exponent is then clamped to the scale format's representable range;
   clamping trades accuracy for a finite scale rather than failing
   mid-collective.
3. Every value is divided by ``2^shared_exp`` and rounded to the nearest
   grid magnitude.  Exact midpoints round to the even grid index.  Values
   beyond the grid maximum (possible only after clamping) saturate.
4. An all-zero block stores scale code 0 -- reserved for exactly this
   purpose -- and all-zero element codes.

Element codes are sign-magnitude: ``sign << (total_bits - 1) | grid_index``.
A set sign bit with magnitude 0 is a legal code and decodes to (negative)
zero.

Wire format "MXC1" (all little-endian)
--------------------------------------
========  =====  =======================================
offset    size   field
========  =====  =======================================
0         4      magic ``b"MXC1"``
4         1      version, currently 1
5         1      element format code (registry order)
6         1      scale format code (registry order)
7         1      flags, must be 0
8         4      u32 block size
12        4      u32 ndim
16        4      u32 reserved, must be 0
20        8*n    u64 dimensions
--        --     scale stream, one k-bit code per block, byte-aligned
--        --     element stream, total_bits per value, byte-aligned
========  =====  =======================================

Baseline codecs reuse this container with format codes >= 0xF0 (see
``baselines``); those payloads are rejected here.  There is no checksum in
version 1.  Compression and decompression are pure functions and every
output is deterministic for identical input bytes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import bitpack
from .errors import (
    BadMagic,
    MalformedCode,
    MalformedHeader,
    NonFiniteInput,
    TruncatedStream,
    UnsupportedVersion,
)
from .formats import (
    ELEMENT_CODES,
    ELEMENT_FORMATS,
    SCALE_CODES,
    SCALE_FORMATS,
    ElementFormat,
    SchemeDescriptor,
    emax,
    enumerate_grid,
)

MAGIC = b"MXC1"
VERSION = 1

_HEADER = struct.Struct("<4sBBBBIII")

# Container format codes claimed by non-block codecs; kept out of the
# element registry so a stray baseline payload cannot decode as blocks.
FORMAT_CODE_TOPK = 0xF0
FORMAT_CODE_CHANNEL_INT = 0xF1
FORMAT_CODE_RAW_F32 = 0xFE
FORMAT_CODE_RAW_F16 = 0xFD


@dataclass(frozen=True)
class CompressedTensor:
    """Packed scales and element codes for one tensor; the wire object."""

    scheme: SchemeDescriptor
    shape: tuple[int, ...]
    scale_stream: bytes
    element_stream: bytes

    @property
    def total_elements(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    @property
    def num_blocks(self) -> int:
        return -(-self.total_elements // self.scheme.block_size)

    @property
    def nbytes(self) -> int:
        """Size after :func:`serialize`, header included."""
        return header_nbytes(len(self.shape)) + len(self.scale_stream) + len(
            self.element_stream
        )


@lru_cache(maxsize=None)
def _element_tables(fmt: ElementFormat):
    """Per-format lookup tables: grid, rounding midpoints, signed decode LUT."""
    grid = enumerate_grid(fmt).values
    midpoints = (grid[:-1] + grid[1:]) / 2.0
    decode_lut = np.concatenate([grid, -grid])
    return grid, midpoints, decode_lut


def _round_to_grid(magnitudes: np.ndarray, fmt: ElementFormat) -> np.ndarray:
    """Nearest grid index for each non-negative magnitude, midpoint ties to even."""
    grid, midpoints, _ = _element_tables(fmt)
    clipped = np.minimum(magnitudes, grid[-1])
    idx = np.searchsorted(midpoints, clipped, side="right")
    # searchsorted(side="right") rounds exact midpoints up; pull odd indices
    # back down so ties land on the even grid index.
    tie = (idx > 0) & (idx & 1 == 1)
    tie[tie] = clipped[tie] == midpoints[idx[tie] - 1]
    idx[tie] -= 1
    return idx


def _quantize_block_matrix(values: np.ndarray, scheme: SchemeDescriptor):
    """Quantize a (num_blocks, block_size) matrix of finite float64 values.

    Returns (stored scale codes as uint8, element codes as uint8 of the same
    shape).  Rows may be zero-padded; padding encodes as zero codes which
    the callers slice away.
    """
    fmt = scheme.element
    scale = scheme.scale
    grid, _, _ = _element_tables(fmt)
    grid_max = grid[-1]

    abs_max = np.abs(values).max(axis=1)
    zero_block = abs_max == 0

    _, exp = np.frexp(abs_max)
    shared = exp.astype(np.int64) - 1 - emax(fmt)
    # One extra halving whenever the scaled maximum would overshoot the top
    # grid value; floor(log2) alone lands the maximum in [2^emax, 2^emax+1).
    overshoot = np.ldexp(abs_max, -shared) > grid_max
    shared = np.where(overshoot, shared + 1, shared)
    clamped = np.clip(shared, scale.min_exponent, scale.max_exponent)

    scaled = np.ldexp(values, -clamped[:, None])
    idx = _round_to_grid(np.abs(scaled).ravel(), fmt)
    sign = np.signbit(scaled).ravel()
    codes = (
        sign.astype(np.uint8) << (fmt.total_bits - 1) | idx.astype(np.uint8)
    ).reshape(values.shape)

    stored = np.where(zero_block, 0, clamped + scale.bias).astype(np.uint8)
    codes[zero_block] = 0
    return stored, codes


def _dequantize_block_matrix(
    stored: np.ndarray,
    codes: np.ndarray,
    scheme: SchemeDescriptor,
    dtype=np.float64,
) -> np.ndarray:
    """Inverse of :func:`_quantize_block_matrix`."""
    _, _, decode_lut = _element_tables(scheme.element)
    values = decode_lut[codes]
    exponents = stored.astype(np.int64) - scheme.scale.bias
    factors = np.ldexp(np.float64(1.0), exponents)
    factors[stored == 0] = 0.0
    out = values * factors[:, None]
    return out.astype(dtype, copy=False)


def _check_finite(flat: np.ndarray, block_size: int) -> None:
    if np.isfinite(flat).all():
        return
    bad = int(np.flatnonzero(~np.isfinite(flat))[0])
    block = bad // block_size
    raise NonFiniteInput(
        f"non-finite value {flat[bad]!r} at flat index {bad} (block {block})",
        block_index=block,
    )


def quantize_block(values, scheme: SchemeDescriptor):
    """Quantize one block of up to ``block_size`` finite values.

    Returns ``(stored_scale_code, element_codes)`` where the codes are uint8
    sign-magnitude values, one per input element.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size > scheme.block_size:
        raise ValueError(
            f"block of {vals.size} values exceeds block size {scheme.block_size}"
        )
    _check_finite(vals, scheme.block_size)
    padded = np.zeros((1, scheme.block_size))
    padded[0, : vals.size] = vals
    stored, codes = _quantize_block_matrix(padded, scheme)
    return int(stored[0]), codes[0, : vals.size].copy()


def dequantize_block(stored_scale_code: int, element_codes, scheme: SchemeDescriptor):
    """Decode one block back to float64 values."""
    codes = np.asarray(element_codes, dtype=np.int64).ravel()
    limit = 2**scheme.element.total_bits
    if codes.size and (codes.min() < 0 or codes.max() >= limit):
        raise MalformedCode(
            f"element code outside [0, {limit}) for {scheme.element.name}"
        )
    if not 0 <= stored_scale_code < 2**scheme.scale.exponent_bits:
        raise MalformedCode(
            f"scale code {stored_scale_code} outside {scheme.scale.name} range"
        )
    stored = np.array([stored_scale_code], dtype=np.uint8)
    return _dequantize_block_matrix(
        stored, codes.astype(np.uint8)[None, :], scheme
    )[0]


def compress_tensor(tensor, scheme: SchemeDescriptor) -> CompressedTensor:
    """Block-quantize a tensor into packed scale and element streams.

    The tensor is flattened row-major, so blocks run along the trailing
    (channel) dimension for contiguous inputs.  The final block may be
    short; only real values are encoded.
    """
    arr = np.asarray(tensor)
    flat = np.ascontiguousarray(arr, dtype=np.float64).ravel()
    n = flat.size
    block = scheme.block_size
    _check_finite(flat, block)

    num_blocks = -(-n // block)
    padded = np.zeros(num_blocks * block)
    padded[:n] = flat
    stored, codes = _quantize_block_matrix(padded.reshape(num_blocks, block), scheme)

    return CompressedTensor(
        scheme=scheme,
        shape=tuple(int(d) for d in arr.shape),
        scale_stream=bitpack.pack_bits(stored, scheme.scale.exponent_bits),
        element_stream=bitpack.pack_bits(
            codes.ravel()[:n], scheme.element.total_bits
        ),
    )


def decompress_tensor(ct: CompressedTensor, dtype=np.float64) -> np.ndarray:
    """Reconstruct the quantized tensor; exact inverse of the code streams."""
    scheme = ct.scheme
    n = ct.total_elements
    block = scheme.block_size
    num_blocks = ct.num_blocks

    stored = bitpack.unpack_bits(
        ct.scale_stream, num_blocks, scheme.scale.exponent_bits
    )
    codes = bitpack.unpack_bits(ct.element_stream, n, scheme.element.total_bits)
    if n != num_blocks * block:
        full = np.zeros(num_blocks * block, dtype=np.uint8)
        full[:n] = codes
        codes = full
    values = _dequantize_block_matrix(
        stored, codes.reshape(num_blocks, block), scheme, dtype=dtype
    )
    return values.ravel()[:n].reshape(ct.shape)


def header_nbytes(ndim: int) -> int:
    return _HEADER.size + 8 * ndim


def serialized_nbytes(scheme: SchemeDescriptor, shape: tuple[int, ...]) -> int:
    """Exact :func:`serialize` output size for a tensor of ``shape``."""
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    num_blocks = -(-n // scheme.block_size)
    return (
        header_nbytes(len(shape))
        + bitpack.packed_nbytes(num_blocks, scheme.scale.exponent_bits)
        + bitpack.packed_nbytes(n, scheme.element.total_bits)
    )


def pack_header(
    format_code: int, scale_code: int, block_field: int, shape: tuple[int, ...]
) -> bytes:
    """Build an MXC1 container header; shared with the baseline codecs."""
    return _HEADER.pack(
        MAGIC, VERSION, format_code, scale_code, 0, block_field, len(shape), 0
    ) + struct.pack(f"<{len(shape)}Q", *shape)


def unpack_header(data: bytes):
    """Parse and validate a container header.

    Returns ``(format_code, scale_code, block_field, shape, payload_offset)``.
    """
    if len(data) < _HEADER.size:
        raise TruncatedStream(f"container of {len(data)} bytes has no full header")
    magic, version, format_code, scale_code, flags, block_field, ndim, reserved = (
        _HEADER.unpack_from(data)
    )
    if magic != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"container version {version}, supported: {VERSION}")
    if flags != 0 or reserved != 0:
        raise MalformedHeader("flags and reserved fields must be zero in version 1")
    end = _HEADER.size + 8 * ndim
    if len(data) < end:
        raise TruncatedStream(f"header declares {ndim} dimensions but stream ends")
    shape = struct.unpack_from(f"<{ndim}Q", data, _HEADER.size)
    return format_code, scale_code, block_field, tuple(int(d) for d in shape), end


def serialize(ct: CompressedTensor) -> bytes:
    """Encode a CompressedTensor into self-contained MXC1 bytes."""
    header = pack_header(
        ELEMENT_CODES[ct.scheme.element.name],
        SCALE_CODES[ct.scheme.scale.name],
        ct.scheme.block_size,
        ct.shape,
    )
    return header + ct.scale_stream + ct.element_stream


def deserialize(data: bytes) -> CompressedTensor:
    """Decode MXC1 bytes; structurally inverse to :func:`serialize`."""
    format_code, scale_code, block_size, shape, offset = unpack_header(data)
    element_names = list(ELEMENT_FORMATS)
    scale_names = list(SCALE_FORMATS)
    if format_code >= len(element_names):
        raise MalformedHeader(
            f"format code {format_code:#x} is not a block-quantized payload"
        )
    if scale_code >= len(scale_names):
        raise MalformedHeader(f"unknown scale format code {scale_code}")
    if block_size < 1:
        raise MalformedHeader("block size must be positive")
    scheme = SchemeDescriptor(
        ELEMENT_FORMATS[element_names[format_code]],
        block_size,
        SCALE_FORMATS[scale_names[scale_code]],
    )

    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    num_blocks = -(-n // block_size)
    scale_bytes = bitpack.packed_nbytes(num_blocks, scheme.scale.exponent_bits)
    element_bytes = bitpack.packed_nbytes(n, scheme.element.total_bits)
    expected = offset + scale_bytes + element_bytes
    if len(data) < expected:
        raise TruncatedStream(
            f"payload needs {expected - offset} bytes, stream holds {len(data) - offset}"
        )
    if len(data) > expected:
        raise MalformedHeader(f"{len(data) - expected} trailing bytes after payload")
    return CompressedTensor(
        scheme=scheme,
        shape=shape,
        scale_stream=data[offset : offset + scale_bytes],
        element_stream=data[offset + scale_bytes : expected],
    )


def block_error_bound(stored_scale_code: int, scheme: SchemeDescriptor) -> float:
    """Worst-case absolute error for an unclamped block with this scale code.

    Rounding lands each scaled value within half the widest grid gap, so the
    bound is ``2^shared_exp * largest_gap / 2``.  Not valid for blocks whose
    shared exponent was clamped.
    """
    if stored_scale_code == 0:
        return 0.0
    gap = enumerate_grid(scheme.element).largest_gap
    return math.ldexp(gap / 2.0, stored_scale_code - scheme.scale.bias)

"""Comparison codecs: TopK sparsification and channel-wise INT quantization.

Both are non-learned baselines for the block-scaled codec.  They share the
MXC1 container with dedicated format codes (0xF0 TopK, 0xF1 channel INT).

TopK keeps the K largest-magnitude entries as (u32 index, f16 value) pairs
and zeroes everything else; K is chosen per tensor so the whole packet fits
the requested fraction of the 16-bit original.  Channel-wise INT stores one
f16 scale per trailing-dimension channel plus sign-magnitude codes rounded
against that scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bitpack
from .codec import (
    FORMAT_CODE_CHANNEL_INT,
    FORMAT_CODE_TOPK,
    header_nbytes,
    pack_header,
    unpack_header,
)
from .errors import (
    CompressionFactorTooHigh,
    MalformedHeader,
    NonFiniteInput,
    TruncatedStream,
)

TOPK_INDEX_BYTES = 4
TOPK_VALUE_BYTES = 2
ORIGINAL_VALUE_BYTES = 2  # baselines compete against 16-bit uncompressed tensors


@dataclass(frozen=True)
class TopKPacket:
    """K kept entries of a tensor: strictly increasing positions plus f16 payloads."""

    shape: tuple[int, ...]
    indices: np.ndarray  # uint32, sorted ascending
    values: np.ndarray  # float16

    def __post_init__(self):
        if self.indices.shape != self.values.shape:
            raise ValueError("indices and values must pair up one to one")

    @property
    def k_per_tensor(self) -> int:
        return int(self.indices.size)

    @property
    def nbytes(self) -> int:
        return header_nbytes(len(self.shape)) + self.k_per_tensor * (
            TOPK_INDEX_BYTES + TOPK_VALUE_BYTES
        )


@dataclass(frozen=True)
class ChannelIntPacket:
    """Per-channel f16 scales plus bit-packed sign-magnitude codes."""

    shape: tuple[int, ...]
    bits: int
    scales: np.ndarray  # float16, one per trailing-dimension channel
    code_stream: bytes

    @property
    def nbytes(self) -> int:
        return (
            header_nbytes(len(self.shape))
            + 2 * self.scales.size
            + len(self.code_stream)
        )


def _require_finite(arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        raise NonFiniteInput(f"non-finite value at flat index {bad}")


def topk_budget(total_elements: int, ndim: int, compression_factor: float) -> int:
    """Largest K whose packet fits ``original_bytes / compression_factor``."""
    original = total_elements * ORIGINAL_VALUE_BYTES
    budget = original / compression_factor - header_nbytes(ndim)
    return int(budget // (TOPK_INDEX_BYTES + TOPK_VALUE_BYTES))


def topk_compress(
    tensor, compression_factor: float | None = None, *, k: int | None = None
) -> TopKPacket:
    """Keep the K largest magnitudes; ties broken toward the lower index.

    Either ``compression_factor`` (> 1, sizes the packet against the 16-bit
    original) or an explicit ``k`` must be given.
    """
    arr = np.asarray(tensor, dtype=np.float64)
    _require_finite(arr)
    flat = arr.ravel()
    if k is None:
        if compression_factor is None:
            raise ValueError("pass compression_factor or k")
        if compression_factor <= 1:
            raise CompressionFactorTooHigh(
                f"compression factor must exceed 1, got {compression_factor}"
            )
        k = topk_budget(flat.size, arr.ndim, compression_factor)
    if k < 1:
        raise CompressionFactorTooHigh(
            f"factor {compression_factor} leaves room for {k} values"
        )
    k = min(k, flat.size)
    # Stable sort on descending magnitude keeps equal-magnitude candidates in
    # index order, which is exactly the tie rule.
    keep = np.argsort(-np.abs(flat), kind="stable")[:k]
    keep.sort()
    return TopKPacket(
        shape=tuple(int(d) for d in arr.shape),
        indices=keep.astype(np.uint32),
        values=flat[keep].astype(np.float16),
    )


def topk_decompress(packet: TopKPacket) -> np.ndarray:
    """Scatter the kept values into zeros; kept f16 payloads survive bit-exactly."""
    out = np.zeros(
        int(np.prod(packet.shape, dtype=np.int64)) if packet.shape else 1
    )
    out[packet.indices.astype(np.int64)] = packet.values.astype(np.float64)
    return out.reshape(packet.shape)


def channelwise_int_compress(tensor, bits: int = 4) -> ChannelIntPacket:
    """Symmetric per-channel integer quantization along the trailing dimension.

    Each channel's scale is ``max_abs / (2^(bits-1) - 1)`` stored as f16; the
    stored scale is also the one used for rounding so the roundtrip error
    stays within half a scale step.  All-zero channels store scale 0.
    """
    if not 2 <= bits <= 8:
        raise ValueError(f"bits must be in [2, 8], got {bits}")
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.ndim < 1:
        arr = arr.reshape(1)
    _require_finite(arr)

    qmax = 2 ** (bits - 1) - 1
    columns = arr.reshape(-1, arr.shape[-1])
    scales16 = (np.abs(columns).max(axis=0) / qmax).astype(np.float16)
    scales = scales16.astype(np.float64)

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(scales > 0, columns / scales, 0.0)
    levels = np.clip(np.rint(ratio), -qmax, qmax)
    magnitudes = np.abs(levels).astype(np.uint8)
    sign_bit = np.uint8(1 << (bits - 1))
    codes = np.where(levels < 0, magnitudes | sign_bit, magnitudes)

    return ChannelIntPacket(
        shape=tuple(int(d) for d in np.asarray(tensor).shape) or (1,),
        bits=bits,
        scales=scales16,
        code_stream=bitpack.pack_bits(codes.ravel(), bits),
    )


def channelwise_int_decompress(packet: ChannelIntPacket) -> np.ndarray:
    n = int(np.prod(packet.shape, dtype=np.int64))
    codes = bitpack.unpack_bits(packet.code_stream, n, packet.bits)
    magnitude_mask = (1 << (packet.bits - 1)) - 1
    magnitudes = (codes & magnitude_mask).astype(np.float64)
    signs = np.where(codes >> (packet.bits - 1), -1.0, 1.0)
    levels = (signs * magnitudes).reshape(-1, packet.shape[-1])
    return (levels * packet.scales.astype(np.float64)).reshape(packet.shape)


def serialize_topk(packet: TopKPacket) -> bytes:
    header = pack_header(FORMAT_CODE_TOPK, 0, packet.k_per_tensor, packet.shape)
    return (
        header
        + packet.indices.astype("<u4").tobytes()
        + packet.values.astype("<f2").tobytes()
    )


def deserialize_topk(data: bytes) -> TopKPacket:
    format_code, _, k, shape, offset = unpack_header(data)
    if format_code != FORMAT_CODE_TOPK:
        raise MalformedHeader(f"format code {format_code:#x} is not TopK")
    idx_end = offset + k * TOPK_INDEX_BYTES
    val_end = idx_end + k * TOPK_VALUE_BYTES
    if len(data) < val_end:
        raise TruncatedStream(f"TopK payload needs {val_end} bytes, got {len(data)}")
    return TopKPacket(
        shape=shape,
        indices=np.frombuffer(data, "<u4", count=k, offset=offset).copy(),
        values=np.frombuffer(data, "<f2", count=k, offset=idx_end).copy(),
    )


def serialize_channel_int(packet: ChannelIntPacket) -> bytes:
    header = pack_header(FORMAT_CODE_CHANNEL_INT, packet.bits, 0, packet.shape)
    return header + packet.scales.astype("<f2").tobytes() + packet.code_stream


def deserialize_channel_int(data: bytes) -> ChannelIntPacket:
    format_code, bits, _, shape, offset = unpack_header(data)
    if format_code != FORMAT_CODE_CHANNEL_INT:
        raise MalformedHeader(f"format code {format_code:#x} is not channel INT")
    if not 2 <= bits <= 8:
        raise MalformedHeader(f"channel INT bit width {bits} outside [2, 8]")
    channels = shape[-1]
    n = int(np.prod(shape, dtype=np.int64))
    scale_end = offset + 2 * channels
    code_bytes = bitpack.packed_nbytes(n, bits)
    if len(data) < scale_end + code_bytes:
        raise TruncatedStream("channel INT payload shorter than declared shape")
    return ChannelIntPacket(
        shape=shape,
        bits=bits,
        scales=np.frombuffer(data, "<f2", count=channels, offset=offset).copy(),
        code_stream=data[scale_end : scale_end + code_bytes],
    )

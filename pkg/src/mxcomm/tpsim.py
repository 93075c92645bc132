"""Simulated row-wise tensor-parallel reduction with compressed exchange.

N logical workers each hold a row shard of a weight matrix.  For an
activation batch X, worker i computes the partial product
``Y_i = X[..., rows_i] @ W[rows_i, :]`` in float32, compresses it, and in a
real deployment would all-gather the payloads so every worker can decompress
and sum all N partials.  Here the exchange is simulated in-process; what is
measured is the numerical damage of the compression step, isolated from
everything else:

* the reference result is the float64 sum of the exact float32 partials in
  rank order;
* every worker's own partial also passes through the codec by default, so
  all N contributions are treated symmetrically (set ``quantize_own=False``
  to keep the local partial exact);
* the reduction of decompressed values is computed in float64, also in rank
  order, so a lossless codec reproduces the reference bit for bit.

Workers are logical: computations per worker are independent and the
exchange carries immutable byte payloads, so results cannot depend on
scheduling.  Reports use a 16-bit baseline for the uncompressed byte count,
matching the uncompressed deployment the codecs compete against.

Codec ids
---------
``scheme`` may be a :class:`SchemeDescriptor` or one of the string ids:

* ``passthrough`` (alias ``none``): float32 identity, for harness checks
* ``fp16``: round-trip through IEEE half precision (the 16-bit baseline)
* ``topk:<factor>``: TopK sparsification, e.g. ``topk:3``
* ``chanint:<bits>``: channel-wise integer quantization, e.g. ``chanint:4``
* any ``element:block:scale`` spelling, e.g. ``fp4_e2m1:32:e8m0``
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import baselines, codec
from .errors import MinimumDegreeTwo, ShapeMismatch, UnknownScheme
from .formats import SchemeDescriptor, parse_scheme
from .synth import gaussian_with_outliers

UNCOMPRESSED_VALUE_BYTES = 2  # 16-bit activations are the uncompressed baseline


class _MxCodec:
    def __init__(self, scheme: SchemeDescriptor):
        self.scheme = scheme
        self.name = scheme.name

    def encode(self, arr: np.ndarray) -> bytes:
        return codec.serialize(codec.compress_tensor(arr, self.scheme))

    def decode(self, data: bytes, shape) -> np.ndarray:
        out = codec.decompress_tensor(codec.deserialize(data))
        if out.shape != tuple(shape):
            raise ShapeMismatch(f"payload shape {out.shape} != expected {shape}")
        return out


class _PassthroughCodec:
    """Raw float32 bytes; numerically the identity."""

    name = "passthrough"

    def encode(self, arr: np.ndarray) -> bytes:
        return codec.pack_header(
            codec.FORMAT_CODE_RAW_F32, 0, 0, tuple(arr.shape)
        ) + np.ascontiguousarray(arr, dtype="<f4").tobytes()

    def decode(self, data: bytes, shape) -> np.ndarray:
        _, _, _, wire_shape, offset = codec.unpack_header(data)
        n = int(np.prod(wire_shape, dtype=np.int64))
        vals = np.frombuffer(data, "<f4", count=n, offset=offset)
        return vals.astype(np.float64).reshape(wire_shape)


class _Fp16Codec:
    """Round-trip through IEEE half precision; the 16-bit wire baseline."""

    name = "fp16"

    def encode(self, arr: np.ndarray) -> bytes:
        return codec.pack_header(
            codec.FORMAT_CODE_RAW_F16, 0, 0, tuple(arr.shape)
        ) + np.ascontiguousarray(arr, dtype="<f2").tobytes()

    def decode(self, data: bytes, shape) -> np.ndarray:
        _, _, _, wire_shape, offset = codec.unpack_header(data)
        n = int(np.prod(wire_shape, dtype=np.int64))
        vals = np.frombuffer(data, "<f2", count=n, offset=offset)
        return vals.astype(np.float64).reshape(wire_shape)


class _TopKCodec:
    def __init__(self, factor: float):
        self.factor = factor
        self.name = f"topk:{factor:g}"

    def encode(self, arr: np.ndarray) -> bytes:
        return baselines.serialize_topk(baselines.topk_compress(arr, self.factor))

    def decode(self, data: bytes, shape) -> np.ndarray:
        return baselines.topk_decompress(baselines.deserialize_topk(data))


class _ChannelIntCodec:
    def __init__(self, bits: int):
        self.bits = bits
        self.name = f"chanint:{bits}"

    def encode(self, arr: np.ndarray) -> bytes:
        return baselines.serialize_channel_int(
            baselines.channelwise_int_compress(arr, self.bits)
        )

    def decode(self, data: bytes, shape) -> np.ndarray:
        return baselines.channelwise_int_decompress(
            baselines.deserialize_channel_int(data)
        )


def resolve_codec(scheme):
    """Map a SchemeDescriptor or codec id string to a codec object."""
    if isinstance(scheme, SchemeDescriptor):
        return _MxCodec(scheme)
    if not isinstance(scheme, str):
        raise UnknownScheme(f"cannot interpret {scheme!r} as a codec")
    name = scheme.strip().lower()
    if name in ("passthrough", "none"):
        return _PassthroughCodec()
    if name == "fp16":
        return _Fp16Codec()
    if name.startswith("topk:"):
        return _TopKCodec(float(name.split(":", 1)[1]))
    if name.startswith("chanint:"):
        return _ChannelIntCodec(int(name.split(":", 1)[1]))
    return _MxCodec(parse_scheme(name))


@dataclass(frozen=True)
class TPConfig:
    """One simulated reduction: parallelism degree, codec, data dimensions."""

    degree: int
    scheme: SchemeDescriptor | str
    seed: int = 0
    input_shape: tuple[int, int, int] = (1, 64, 1024)  # (batch, tokens, d_in)
    weight_shape: tuple[int, int] = (1024, 1024)  # (d_in, d_out)
    quantize_own: bool = True

    def __post_init__(self):
        if self.degree < 2:
            raise MinimumDegreeTwo(f"degree {self.degree} < 2")
        if len(self.input_shape) != 3 or len(self.weight_shape) != 2:
            raise ShapeMismatch("expected (batch, tokens, d_in) and (d_in, d_out)")
        if self.input_shape[2] != self.weight_shape[0]:
            raise ShapeMismatch(
                f"d_in mismatch: input {self.input_shape[2]}, "
                f"weight {self.weight_shape[0]}"
            )


@dataclass(frozen=True)
class ReductionReport:
    """Error and traffic accounting for one simulated reduction."""

    degree: int
    scheme: str
    rel_frob_err: float
    max_abs_err: float
    sqnr_db: float
    bytes_compressed: int
    bytes_uncompressed: int
    padding: int = 0

    CSV_COLUMNS = (
        "degree",
        "scheme",
        "rel_frob_err",
        "max_abs_err",
        "sqnr_db",
        "bytes_compressed",
        "bytes_uncompressed",
    )


def shard_rowwise(weight: np.ndarray, degree: int):
    """Split a (d_in, d_out) weight into ``degree`` row shards.

    If d_in is not divisible by ``degree`` the matrix is zero-padded; returns
    ``(shards, padding_rows)``.  Concatenating the shards reconstructs the
    (padded) weight exactly.
    """
    if weight.ndim != 2:
        raise ShapeMismatch(f"weight must be 2-D, got shape {weight.shape}")
    if degree < 1:
        raise ShapeMismatch("degree must be positive")
    d_in = weight.shape[0]
    padded_rows = -(-d_in // degree) * degree
    padding = padded_rows - d_in
    if padding:
        weight = np.concatenate(
            [weight, np.zeros((padding, weight.shape[1]), dtype=weight.dtype)]
        )
    rows_per_shard = padded_rows // degree
    shards = [
        weight[i * rows_per_shard : (i + 1) * rows_per_shard] for i in range(degree)
    ]
    return shards, padding


def generate_inputs(cfg: TPConfig):
    """Deterministic activations (with outliers) and weights for a config."""
    rng = np.random.default_rng(cfg.seed)
    x = gaussian_with_outliers(rng, cfg.input_shape)
    w = rng.standard_normal(cfg.weight_shape).astype(np.float32)
    return x, w


def _sqnr_db(reference: np.ndarray, error: np.ndarray) -> float:
    err_power = float(np.sum(np.square(error)))
    if err_power == 0.0:
        return float("inf")
    sig_power = float(np.sum(np.square(reference)))
    return 10.0 * np.log10(sig_power / err_power)


def simulate_reduction(
    cfg: TPConfig, x: np.ndarray | None = None, w: np.ndarray | None = None
) -> ReductionReport:
    """Run one compress/exchange/decompress/reduce cycle and score it.

    ``x`` and ``w`` default to seeded synthetic data; pass real activation
    dumps to evaluate a codec on production traces.
    """
    if x is None or w is None:
        gen_x, gen_w = generate_inputs(cfg)
        x = gen_x if x is None else x
        w = gen_w if w is None else w
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"d_in mismatch: {x.shape[-1]} vs {w.shape[0]}")

    shards, padding = shard_rowwise(w, cfg.degree)
    if padding:
        pad_width = [(0, 0)] * (x.ndim - 1) + [(0, padding)]
        x = np.pad(x, pad_width)
    rows = shards[0].shape[0]

    wire = resolve_codec(cfg.scheme)
    partials = []
    decoded = []
    payload_bytes = None
    for rank in range(cfg.degree):
        x_shard = x[..., rank * rows : (rank + 1) * rows]
        partial = x_shard @ shards[rank]  # float32, like the deployed matmul
        partials.append(partial)
        payload = wire.encode(partial)
        if payload_bytes is None:
            payload_bytes = len(payload)
        if cfg.quantize_own or rank != 0:
            decoded.append(wire.decode(payload, partial.shape))
        else:
            decoded.append(partial.astype(np.float64))

    # Both sums run in float64 over the same fixed rank order, so an identity
    # codec reproduces the reference bit for bit.
    reference = np.zeros(partials[0].shape, dtype=np.float64)
    reduced = np.zeros_like(reference)
    per_worker_err = np.zeros_like(reference)
    for rank in range(cfg.degree):
        reference += partials[rank].astype(np.float64)
        reduced += decoded[rank]
        per_worker_err += np.abs(decoded[rank] - partials[rank].astype(np.float64))

    error = reduced - reference
    # Triangle inequality, elementwise, on every run: the reduced error can
    # never exceed the summed per-worker quantization errors.
    tolerance = 1e-9 * (np.abs(reference) + 1.0)
    if not (np.abs(error) <= per_worker_err + tolerance).all():
        raise AssertionError("summed error exceeded per-worker error budget")

    err_norm = float(np.linalg.norm(error.ravel()))
    ref_norm = float(np.linalg.norm(reference.ravel()))
    numel = reference.size
    return ReductionReport(
        degree=cfg.degree,
        scheme=wire.name,
        rel_frob_err=0.0 if err_norm == 0.0 else err_norm / ref_norm,
        max_abs_err=float(np.max(np.abs(error))),
        sqnr_db=_sqnr_db(reference, error),
        bytes_compressed=(cfg.degree - 1) * int(payload_bytes),
        bytes_uncompressed=(cfg.degree - 1) * numel * UNCOMPRESSED_VALUE_BYTES,
        padding=padding,
    )


def parallelism_sweep(cfg: TPConfig, degrees) -> list[ReductionReport]:
    """One simulate_reduction per degree, sharing the config's seed and data."""
    degrees = list(degrees)
    if not degrees:
        raise MinimumDegreeTwo("no degrees requested")
    for d in degrees:
        if d < 2:
            raise MinimumDegreeTwo(f"degree {d} < 2")
    reports = []
    for d in degrees:
        run_cfg = TPConfig(
            degree=d,
            scheme=cfg.scheme,
            seed=cfg.seed,
            input_shape=cfg.input_shape,
            weight_shape=cfg.weight_shape,
            quantize_own=cfg.quantize_own,
        )
        reports.append(simulate_reduction(run_cfg))
    return reports


def reports_to_csv(reports) -> str:
    """Render reports as CSV with a header row and '.' decimal separator."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ReductionReport.CSV_COLUMNS)
    for r in reports:
        writer.writerow(
            [
                r.degree,
                r.scheme,
                repr(r.rel_frob_err),
                repr(r.max_abs_err),
                repr(r.sqnr_db),
                r.bytes_compressed,
                r.bytes_uncompressed,
            ]
        )
    return buf.getvalue()

"""Desk-scale all-gather benchmark over a bandwidth-throttled transport.

The point being demonstrated: shrinking the bytes each worker ships to its
peers shortens the wall time of the gather whenever the link, not the
codec, is the bottleneck -- and inverts once the link is fast enough that
codec time dominates.  Absolute timings from multi-GPU deployments are not
reproducible here; the mechanism and the crossover are.

Harness layout
--------------
``run_allgather_bench`` spawns N worker threads connected by either
in-process mailboxes (default) or local TCP sockets.  Every worker owns a
token bucket that meters its send path to the configured bandwidth with
1 ms refill granularity.  One repetition, per worker:

1. compress the local 16-bit tensor (also reconstructing the quantized
   values locally -- the reduction must use the same values everywhere),
2. send the payload to all N-1 peers, metered by the worker's bucket,
3. decode the N-1 received payloads,
4. sum all N contributions in rank order (float32).

Workers synchronize on a barrier before and after each repetition; the
reported wall time spans the whole collective.  Every worker must finish
with a bit-identical reduced tensor or the run fails with ResultMismatch.

``predict_comm_time`` is the matching analytic model.  Its codec-throughput
inputs come from ``calibrate_codec_throughput``, which times the same two
operations the workers run: compress-with-reconstruction, and
decode-plus-accumulate.  Calibrating with ``concurrency`` equal to the
worker count reproduces the contention the benchmark will see.
"""

from __future__ import annotations

import hashlib
import math
import queue
import socket
import statistics
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .codec import compress_tensor, decompress_tensor, deserialize, serialize, serialized_nbytes
from .errors import MinimumDegreeTwo, ResultMismatch, TransportFailure
from .formats import SchemeDescriptor

UNCOMPRESSED_VALUE_BYTES = 2
SEND_CHUNK = 64 * 1024
RECV_TIMEOUT_S = 120.0


@dataclass(frozen=True)
class LinkModel:
    """A point-to-point link plus the codec rates available at its endpoints."""

    bandwidth: float  # bytes per second
    latency: float = 0.0  # seconds per message
    compress_throughput: float = math.inf  # values per second
    decompress_throughput: float = math.inf  # values per second

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.latency < 0:
            raise ValueError("latency cannot be negative")
        if not (self.compress_throughput > 0 and self.decompress_throughput > 0):
            raise ValueError("codec throughputs must be positive")


@dataclass(frozen=True)
class BenchResult:
    scheme: str
    n_workers: int
    repetitions: int
    median_s: float
    stddev_s: float
    wire_bytes_per_worker: int
    speedup_vs_uncompressed: float
    baseline_median_s: float | None = None


class TokenBucket:
    """Byte-rate limiter: capacity worth 1 ms of credit, refilled on demand."""

    def __init__(self, rate_bytes_per_s: float):
        if not rate_bytes_per_s > 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate_bytes_per_s)
        self.capacity = max(self.rate * 1e-3, 1.0)
        self._tokens = self.capacity
        self._last = time.perf_counter()
        self._lock = threading.Lock()

    def consume(self, nbytes: int) -> None:
        remaining = float(nbytes)
        while remaining > 0:
            with self._lock:
                now = time.perf_counter()
                self._tokens = min(
                    self.capacity, self._tokens + (now - self._last) * self.rate
                )
                self._last = now
                take = min(remaining, self._tokens)
                self._tokens -= take
                remaining -= take
                if remaining <= 0:
                    return
                wait = min(remaining, self.capacity) / self.rate
            time.sleep(max(wait, 1e-3))


class _NullBucket:
    def consume(self, nbytes: int) -> None:
        return


# ---------------------------------------------------------------------------
# Wire codecs
# ---------------------------------------------------------------------------


class _RawF16Wire:
    """scheme=None: ship the 16-bit tensor bytes unchanged."""

    name = "none"

    def __init__(self, shape: tuple[int, ...]):
        self.shape = shape

    def payload_nbytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) * UNCOMPRESSED_VALUE_BYTES

    def encode_with_reconstruction(self, arr: np.ndarray):
        return arr.tobytes(), arr.astype(np.float32)

    def decode(self, data: bytes) -> np.ndarray:
        vals = np.frombuffer(data, "<f2")
        return vals.astype(np.float32).reshape(self.shape)


class _BlockWire:
    """Block-quantized exchange through the MXC1 container."""

    def __init__(self, scheme: SchemeDescriptor, shape: tuple[int, ...]):
        self.scheme = scheme
        self.shape = shape
        self.name = scheme.name

    def payload_nbytes(self) -> int:
        return serialized_nbytes(self.scheme, self.shape)

    def encode_with_reconstruction(self, arr: np.ndarray):
        ct = compress_tensor(arr, self.scheme)
        return serialize(ct), decompress_tensor(ct, dtype=np.float32)

    def decode(self, data: bytes) -> np.ndarray:
        return decompress_tensor(deserialize(data), dtype=np.float32)


def _make_wire(scheme: SchemeDescriptor | None, shape: tuple[int, ...]):
    if scheme is None:
        return _RawF16Wire(shape)
    return _BlockWire(scheme, shape)


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


class _MailboxTransport:
    """In-process queues; senders are throttled, receivers just drain."""

    def __init__(self, n_workers: int):
        self._inboxes = [queue.Queue() for _ in range(n_workers)]

    def send(self, src: int, dst: int, payload: bytes) -> None:
        self._inboxes[dst].put((src, payload))

    def recv(self, rank: int):
        try:
            return self._inboxes[rank].get(timeout=RECV_TIMEOUT_S)
        except queue.Empty:
            raise TransportFailure(f"worker {rank} timed out waiting for a peer")

    def close(self) -> None:
        pass


class _TcpMeshTransport:
    """Full mesh of loopback TCP connections with length-prefixed frames.

    Each worker gets a drainer thread moving frames from its sockets into a
    local queue, so a worker blocked in sendall can never deadlock a peer.
    """

    _FRAME = struct.Struct("<IB")  # payload length, source rank

    def __init__(self, n_workers: int):
        self.n = n_workers
        self._conns = [[None] * n_workers for _ in range(n_workers)]
        self._inboxes = [queue.Queue() for _ in range(n_workers)]
        self._drainers = []
        self._connect_mesh()
        self._start_drainers()

    def _connect_mesh(self) -> None:
        listeners = []
        for _ in range(self.n):
            srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            srv.bind(("127.0.0.1", 0))
            srv.listen(self.n)
            listeners.append(srv)
        try:
            for i in range(self.n):
                for j in range(i + 1, self.n):
                    out = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
                    out.connect(listeners[j].getsockname())
                    out.sendall(struct.pack("<B", i))
                    inc, _ = listeners[j].accept()
                    src = struct.unpack("<B", _recv_exact(inc, 1))[0]
                    assert src == i
                    for s in (out, inc):
                        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                    self._conns[i][j] = out
                    self._conns[j][i] = inc
        except OSError as exc:
            raise TransportFailure(f"loopback mesh setup failed: {exc}") from exc
        finally:
            for srv in listeners:
                srv.close()

    def _start_drainers(self) -> None:
        for rank in range(self.n):
            for peer in range(self.n):
                if peer == rank:
                    continue
                t = threading.Thread(
                    target=self._drain,
                    args=(rank, self._conns[rank][peer]),
                    daemon=True,
                )
                t.start()
                self._drainers.append(t)

    def _drain(self, rank: int, conn: socket.socket) -> None:
        try:
            while True:
                header = _recv_exact(conn, self._FRAME.size)
                length, src = self._FRAME.unpack(header)
                self._inboxes[rank].put((src, _recv_exact(conn, length)))
        except (OSError, TransportFailure):
            return  # socket closed at shutdown

    def send(self, src: int, dst: int, payload: bytes) -> None:
        try:
            conn = self._conns[src][dst]
            conn.sendall(self._FRAME.pack(len(payload), src))
            conn.sendall(payload)
        except OSError as exc:
            raise TransportFailure(f"send {src}->{dst} failed: {exc}") from exc

    def recv(self, rank: int):
        try:
            return self._inboxes[rank].get(timeout=RECV_TIMEOUT_S)
        except queue.Empty:
            raise TransportFailure(f"worker {rank} timed out waiting for a peer")

    def close(self) -> None:
        for row in self._conns:
            for conn in row:
                if conn is not None:
                    try:
                        conn.close()
                    except OSError:
                        pass


def _recv_exact(conn: socket.socket, nbytes: int) -> bytes:
    buf = bytearray()
    while len(buf) < nbytes:
        chunk = conn.recv(nbytes - len(buf))
        if not chunk:
            raise TransportFailure("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


def _throttled_send(transport, bucket, latency, src, dst, payload):
    if latency > 0:
        time.sleep(latency)
    for offset in range(0, len(payload), SEND_CHUNK):
        bucket.consume(min(SEND_CHUNK, len(payload) - offset))
    transport.send(src, dst, payload)


def _worker_loop(
    rank,
    tensor,
    wire,
    transport,
    bucket,
    latency,
    n_workers,
    total_reps,
    barrier,
    digests,
    failures,
):
    try:
        for rep in range(total_reps):
            barrier.wait()
            payload, own = wire.encode_with_reconstruction(tensor)
            for step in range(1, n_workers):
                _throttled_send(
                    transport, bucket, latency, rank, (rank + step) % n_workers, payload
                )
            contributions: dict[int, np.ndarray] = {rank: own}
            for _ in range(n_workers - 1):
                src, data = transport.recv(rank)
                contributions[src] = wire.decode(data)
            reduced = np.zeros(own.shape, dtype=np.float32)
            for src in range(n_workers):  # fixed order: fp addition is not associative
                reduced += contributions[src]
            digests[rep][rank] = hashlib.sha1(reduced.tobytes()).hexdigest()
            barrier.wait()
    except Exception as exc:  # propagate to the orchestrator
        failures.append((rank, exc))
        barrier.abort()


def _run_configuration(
    n_workers: int,
    tensors,
    scheme: SchemeDescriptor | None,
    link: LinkModel,
    repetitions: int,
    transport_kind: str,
):
    shape = tuple(tensors[0].shape)
    wire = _make_wire(scheme, shape)
    if transport_kind == "memory":
        transport = _MailboxTransport(n_workers)
    elif transport_kind == "tcp":
        transport = _TcpMeshTransport(n_workers)
    else:
        raise ValueError(f"unknown transport {transport_kind!r}")

    buckets = [
        TokenBucket(link.bandwidth) if math.isfinite(link.bandwidth) else _NullBucket()
        for _ in range(n_workers)
    ]
    total_reps = repetitions + 1  # first repetition is an untimed warmup
    barrier = threading.Barrier(n_workers + 1)
    digests = [[None] * n_workers for _ in range(total_reps)]
    failures: list[tuple[int, Exception]] = []

    threads = [
        threading.Thread(
            target=_worker_loop,
            args=(
                rank,
                tensors[rank],
                wire,
                transport,
                buckets[rank],
                link.latency,
                n_workers,
                total_reps,
                barrier,
                digests,
                failures,
            ),
            daemon=True,
        )
        for rank in range(n_workers)
    ]
    for t in threads:
        t.start()

    times = []
    try:
        for _ in range(total_reps):
            barrier.wait()
            started = time.perf_counter()
            barrier.wait()
            times.append(time.perf_counter() - started)
    except threading.BrokenBarrierError:
        pass
    for t in threads:
        t.join(timeout=5.0)
    transport.close()

    if failures:
        # Prefer the root cause over barrier fallout in sibling workers.
        rank, exc = next(
            (
                (r, e)
                for r, e in failures
                if not isinstance(e, threading.BrokenBarrierError)
            ),
            failures[0],
        )
        raise TransportFailure(f"worker {rank} failed: {exc}") from exc
    for rep, rep_digests in enumerate(digests):
        if len(set(rep_digests)) != 1:
            raise ResultMismatch(
                f"repetition {rep}: workers disagree on the reduced tensor"
            )
    timed = times[1:]  # drop warmup
    return timed, (n_workers - 1) * wire.payload_nbytes(), wire.name


def run_allgather_bench(
    n_workers: int,
    shape: tuple[int, ...],
    scheme: SchemeDescriptor | None,
    link: LinkModel,
    repetitions: int = 5,
    transport: str = "memory",
    seed: int = 0,
    compare_uncompressed: bool = True,
) -> BenchResult:
    """Measure the compress/exchange/decompress/reduce collective.

    When ``scheme`` is given and ``compare_uncompressed`` is true, the same
    configuration also runs uncompressed to report the wall-time speedup.
    """
    if n_workers < 2:
        raise MinimumDegreeTwo(f"need at least 2 workers, got {n_workers}")
    if repetitions < 3:
        raise ValueError("need at least 3 repetitions for a stable median")

    rng = np.random.default_rng(seed)
    tensors = [
        rng.standard_normal(shape).astype(np.float16) for _ in range(n_workers)
    ]

    timed, wire_bytes, name = _run_configuration(
        n_workers, tensors, scheme, link, repetitions, transport
    )
    median = statistics.median(timed)

    baseline_median = None
    speedup = 1.0
    if scheme is not None and compare_uncompressed:
        base_times, _, _ = _run_configuration(
            n_workers, tensors, None, link, repetitions, transport
        )
        baseline_median = statistics.median(base_times)
        speedup = baseline_median / median

    return BenchResult(
        scheme=name,
        n_workers=n_workers,
        repetitions=repetitions,
        median_s=median,
        stddev_s=statistics.stdev(timed),
        wire_bytes_per_worker=wire_bytes,
        speedup_vs_uncompressed=speedup,
        baseline_median_s=baseline_median,
    )


# ---------------------------------------------------------------------------
# Analytic model and calibration
# ---------------------------------------------------------------------------


def predict_comm_time(
    tensor_bytes: int,
    scheme: SchemeDescriptor | None,
    n_workers: int,
    link: LinkModel,
) -> float:
    """Model the collective's wall time for one worker.

    Uncompressed: ``(N-1) * (latency + bytes/bandwidth)``.  Compressed: the
    bytes shrink to the container size and two codec terms are added -- one
    local compression pass and N-1 decompression passes.
    """
    if n_workers < 2:
        raise MinimumDegreeTwo(f"need at least 2 workers, got {n_workers}")
    peers = n_workers - 1
    base = peers * link.latency
    if scheme is None:
        return base + peers * tensor_bytes / link.bandwidth
    elements = tensor_bytes // UNCOMPRESSED_VALUE_BYTES
    wire_bytes = serialized_nbytes(scheme, (elements,))
    return (
        base
        + peers * wire_bytes / link.bandwidth
        + elements / link.compress_throughput
        + peers * elements / link.decompress_throughput
    )


def predicted_speedup(
    tensor_bytes: int,
    scheme: SchemeDescriptor,
    n_workers: int,
    link: LinkModel,
) -> float:
    return predict_comm_time(tensor_bytes, None, n_workers, link) / predict_comm_time(
        tensor_bytes, scheme, n_workers, link
    )


def _median_seconds(op, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        op()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def calibrate_codec_throughput(
    scheme: SchemeDescriptor | None,
    sample_sizes=(1 << 22,),
    repeats: int = 5,
    concurrency: int = 1,
    seed: int = 0,
) -> tuple[float, float]:
    """Measure (compress, decompress) throughput in values/second.

    Times exactly what a benchmark worker runs per tensor: compression with
    local reconstruction, and decode-plus-accumulate.  ``concurrency`` > 1
    runs that many measurement threads at once so the numbers reflect the
    contention of a multi-worker benchmark on shared hardware.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    rng = np.random.default_rng(seed)

    def measure(size: int):
        data = rng.standard_normal(size).astype(np.float16)
        wire = _make_wire(scheme, (size,))
        payload, _ = wire.encode_with_reconstruction(data)

        def thread_rates():
            accumulator = np.zeros(size, dtype=np.float32)

            def compress_op():
                wire.encode_with_reconstruction(data)

            def decompress_op():
                accumulator.__iadd__(wire.decode(payload))

            return (
                size / _median_seconds(compress_op, repeats),
                size / _median_seconds(decompress_op, repeats),
            )

        if concurrency == 1:
            return thread_rates()
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            rates = list(pool.map(lambda _: thread_rates(), range(concurrency)))
        return (
            statistics.median(r[0] for r in rates),
            statistics.median(r[1] for r in rates),
        )

    per_size = [measure(size) for size in sample_sizes]
    return (
        statistics.median(r[0] for r in per_size),
        statistics.median(r[1] for r in per_size),
    )

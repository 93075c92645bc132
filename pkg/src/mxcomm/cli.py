"""Command-line entry point binding the codecs, search, simulator and bench.

Exit codes: 0 success, 2 validation problem (bad flags, unknown scheme,
unreadable input), 3 runtime failure inside an otherwise valid run.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from . import codec, netbench, rtns, search, tpsim
from .errors import (
    CompressionFactorTooHigh,
    EmptyGrid,
    MalformedHeader,
    MinimumDegreeTwo,
    MxcommError,
    ShapeMismatch,
    TruncatedStream,
    UnknownScheme,
    UnsupportedVersion,
)
from .formats import SchemeDescriptor, element_format, parse_scheme, scale_format

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

_VALIDATION_ERRORS = (
    UnknownScheme,
    MalformedHeader,  # covers BadMagic
    UnsupportedVersion,
    TruncatedStream,
    MinimumDegreeTwo,
    EmptyGrid,
    ShapeMismatch,
    CompressionFactorTooHigh,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
    ValueError,
)


def _write_output(text: str, out_path: str | None) -> None:
    if out_path is None or out_path == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        with open(out_path, "w") as fh:
            fh.write(text)


def _roundtrip_metrics(tensor: np.ndarray, scheme_name: str) -> dict:
    """Quantization quality of one scheme on one tensor."""
    wire = tpsim.resolve_codec(scheme_name)
    reference = np.asarray(tensor, dtype=np.float64)
    decoded = wire.decode(wire.encode(tensor.astype(np.float32)), tensor.shape)
    error = decoded - reference
    err_power = float(np.sum(np.square(error)))
    if err_power == 0.0:
        sqnr = float("inf")
    else:
        sqnr = 10.0 * np.log10(float(np.sum(np.square(reference))) / err_power)
    if hasattr(wire, "scheme"):
        eff_bits = float(wire.scheme.effective_bits)
    elif wire.name == "fp16":
        eff_bits = 16.0
    else:
        eff_bits = 32.0
    return {
        "scheme": wire.name,
        "effective_bits": eff_bits,
        "sqnr_db": sqnr,
        "max_abs_err": float(np.max(np.abs(error))) if error.size else 0.0,
    }


def cmd_compress(args) -> int:
    scheme = parse_scheme(args.scheme)
    tensor = rtns.read_rtns(args.input)
    payload = codec.serialize(codec.compress_tensor(tensor, scheme))
    with open(args.output, "wb") as fh:
        fh.write(payload)
    return EXIT_OK


def cmd_decompress(args) -> int:
    with open(args.input, "rb") as fh:
        data = fh.read()
    tensor = codec.decompress_tensor(codec.deserialize(data))
    rtns.write_rtns(args.output, tensor)
    return EXIT_OK


def cmd_analyze(args) -> int:
    tensor = rtns.read_rtns(args.input)
    rows = [_roundtrip_metrics(tensor, name) for name in args.schemes.split(",")]
    if args.format == "json":
        _write_output(json.dumps(rows, indent=2), args.out)
    else:
        lines = ["scheme,effective_bits,sqnr_db,max_abs_err"]
        lines += [
            f"{r['scheme']},{r['effective_bits']},{r['sqnr_db']!r},{r['max_abs_err']!r}"
            for r in rows
        ]
        _write_output("\n".join(lines), args.out)
    return EXIT_OK


def cmd_search(args) -> int:
    if args.metric_table:
        table = search.load_metric_table(args.metric_table)
        evaluator = search.table_evaluator(table)
        candidates = tuple(
            SchemeDescriptor(element_format(dtype), block, scale_format(args.scale))
            for dtype, block in sorted(table, key=lambda k: (k[0], k[1]))
        )
    else:
        evaluator = search.make_simulation_evaluator(seed=args.seed)
        candidates = search.table1_grid(args.scale)
    cfg = search.SearchConfig(candidates, threshold_pct=args.threshold)
    results = search.run_grid(cfg, evaluator)
    selection = search.select_scheme(results, args.threshold)
    chosen = selection.chosen
    if args.format == "json":
        payload = {
            "selected": {
                "scheme": chosen.scheme.name,
                "element": chosen.scheme.element.name,
                "block": chosen.scheme.block_size,
                "eff_bits": float(chosen.effective_bits),
                "metric_increase_pct": chosen.metric_increase_pct,
            },
            "below_threshold_empty": selection.below_threshold_empty,
            "candidates": [
                {
                    "scheme": r.scheme.name,
                    "eff_bits": float(r.effective_bits),
                    "metric_increase_pct": r.metric_increase_pct,
                }
                for r in results
            ],
        }
        _write_output(json.dumps(payload, indent=2), args.out)
    else:
        line = (
            f"{chosen.scheme.element.name} block={chosen.scheme.block_size} "
            f"eff_bits={float(chosen.effective_bits)}"
        )
        if selection.below_threshold_empty:
            line += "  (no candidate below threshold; least degradation returned)"
        _write_output(line, args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = parse_scheme(args.base)
    if args.dimension == "parallelism":
        cfg = tpsim.TPConfig(
            degree=2,
            scheme=base,
            seed=args.seed,
            input_shape=(args.batch, args.tokens, args.d_in),
            weight_shape=(args.d_in, args.d_out),
        )
        degrees = [int(d) for d in args.degrees.split(",")]
        reports = search.ablate(
            "parallelism", base, tp_config=cfg, degrees=degrees
        )
        _write_output(tpsim.reports_to_csv(reports), args.out)
        return EXIT_OK
    evaluator = search.make_simulation_evaluator(seed=args.seed)
    rows = search.ablate(args.dimension, base, evaluator)
    _write_output(search.candidates_to_csv(rows), args.out)
    return EXIT_OK


def cmd_tpsim(args) -> int:
    degrees = [int(d) for d in args.degrees.split(",")]
    cfg = tpsim.TPConfig(
        degree=max(degrees),
        scheme=args.scheme,
        seed=args.seed,
        input_shape=(args.batch, args.tokens, args.d_in),
        weight_shape=(args.d_in, args.d_out),
        quantize_own=not args.exact_own,
    )
    reports = tpsim.parallelism_sweep(cfg, degrees)
    if args.format == "json":
        _write_output(json.dumps([asdict(r) for r in reports], indent=2), args.out)
    else:
        _write_output(tpsim.reports_to_csv(reports), args.out)
    return EXIT_OK


def cmd_netbench(args) -> int:
    scheme = None if args.scheme.lower() == "none" else parse_scheme(args.scheme)
    shape = (int(args.mib * 1024 * 1024) // netbench.UNCOMPRESSED_VALUE_BYTES,)
    link = netbench.LinkModel(bandwidth=args.bandwidth, latency=args.latency)
    result = netbench.run_allgather_bench(
        n_workers=args.workers,
        shape=shape,
        scheme=scheme,
        link=link,
        repetitions=args.reps,
        transport=args.transport,
        seed=args.seed,
    )
    _write_output(json.dumps(asdict(result), indent=2), args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    scheme = None if args.scheme.lower() == "none" else parse_scheme(args.scheme)
    sizes = tuple(int(s) for s in args.sizes.split(","))
    compress_vps, decompress_vps = netbench.calibrate_codec_throughput(
        scheme,
        sample_sizes=sizes,
        repeats=args.repeats,
        concurrency=args.concurrency,
        seed=args.seed,
    )
    name = "none" if scheme is None else scheme.name
    _write_output(
        json.dumps(
            {
                "scheme": name,
                "compress_values_per_s": compress_vps,
                "decompress_values_per_s": decompress_vps,
            },
            indent=2,
        ),
        args.out,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mxcomm",
        description="Block-scaled quantization codecs and communication benchmarks",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed")
    common.add_argument("--out", default=None, help="output path ('-' = stdout)")
    common.add_argument(
        "--format", choices=("csv", "json"), default="csv", help="report format"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", parents=[common], help="RTNS file -> MXC1 file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--scheme", required=True, help="element:block:scale")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", parents=[common], help="MXC1 file -> RTNS file")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("analyze", parents=[common], help="per-scheme quality on a tensor")
    p.add_argument("input")
    p.add_argument(
        "--schemes",
        required=True,
        help="comma-separated codec ids (schemes, passthrough, fp16, topk:F, chanint:B)",
    )
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("search", parents=[common], help="grid search + selection rule")
    p.add_argument("--metric-table", default=None, help="CSV of dtype,block,metric_pct")
    p.add_argument("--threshold", type=float, default=search.DEFAULT_THRESHOLD_PCT)
    p.add_argument("--scale", default=search.TABLE1_SCALE, help="scale format name")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("ablate", parents=[common], help="vary one scheme dimension")
    p.add_argument("--dimension", required=True, choices=search.ABLATION_DIMENSIONS)
    p.add_argument("--base", required=True, help="base scheme, element:block:scale")
    p.add_argument("--degrees", default="2,4,8,16,32")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--tokens", type=int, default=64)
    p.add_argument("--d-in", type=int, default=512)
    p.add_argument("--d-out", type=int, default=512)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("tpsim", parents=[common], help="simulated TP reduction sweep")
    p.add_argument("--degrees", default="2,4,8,16,32")
    p.add_argument("--scheme", required=True, help="codec id")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--tokens", type=int, default=64)
    p.add_argument("--d-in", type=int, default=1024)
    p.add_argument("--d-out", type=int, default=1024)
    p.add_argument(
        "--exact-own",
        action="store_true",
        help="keep each worker's own partial exact instead of quantizing it",
    )
    p.set_defaults(func=cmd_tpsim)

    p = sub.add_parser("netbench", parents=[common], help="throttled all-gather benchmark")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--mib", type=float, default=16.0, help="16-bit tensor size in MiB")
    p.add_argument("--bandwidth", type=float, default=1e9, help="bytes per second")
    p.add_argument("--latency", type=float, default=0.0, help="seconds per message")
    p.add_argument("--scheme", default="none", help="'none' or element:block:scale")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--transport", choices=("memory", "tcp"), default="memory")
    p.set_defaults(func=cmd_netbench)

    p = sub.add_parser("calibrate", parents=[common], help="measure codec throughput")
    p.add_argument("--scheme", default="fp4_e2m1:32:e8m0")
    p.add_argument("--sizes", default=str(1 << 22), help="comma-separated value counts")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--concurrency", type=int, default=1)
    p.set_defaults(func=cmd_calibrate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MxcommError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

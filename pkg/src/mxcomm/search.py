"""Compression-scheme grid search and the threshold/min-bits selection rule.

A candidate is one (element format, block size, scale format) scheme.  An
*evaluator* maps a candidate to a scalar quality degradation in percent
relative to the uncompressed 16-bit reference (negative values mean the
metric improved).  Two evaluator families ship here:

* metric tables -- CSV files with columns ``dtype,block,metric_pct`` carrying
  externally measured quality numbers (e.g. language-model perplexity runs);
  the ``fixtures`` directory holds such tables for seven published models,
  together with the schemes the selection rule must reproduce from them;
* the built-in simulation evaluator, which scores a candidate by the
  relative Frobenius error of a seeded tensor-parallel reduction.

Selection rule: drop candidates whose degradation is not strictly below the
threshold (default 3%); among the survivors take the fewest effective bits,
breaking ties by lower degradation, then larger block.  If nothing survives,
the least-degrading candidate is returned with ``below_threshold_empty``
set, so callers can distinguish a confident pick from a fallback.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import EmptyGrid, EvaluatorFailure, UnknownScheme
from .formats import (
    ELEMENT_CODES,
    SchemeDescriptor,
    effective_bits,
    element_format,
    scale_format,
)
from . import tpsim

Evaluator = Callable[[SchemeDescriptor], float]

DEFAULT_THRESHOLD_PCT = 3.0

#: (dtype, block) grid behind the published per-model quality tables.
TABLE1_DTYPES = ("fp3_e1m1", "fp4_e2m1", "fp5_e2m2")
TABLE1_BLOCKS = (8, 16, 32)
TABLE1_SCALE = "e5m0"

#: The nine element formats covered by the value-dtype ablation.
ABLATION_DTYPES = (
    "fp3_e1m1",
    "fp4_e1m2",
    "fp4_e2m1",
    "fp5_e1m3",
    "fp5_e2m2",
    "fp5_e3m1",
    "int3",
    "int4",
    "int5",
)

FIXTURE_MODELS = (
    "llama31_8b",
    "llama31_70b",
    "gemma2_2b",
    "gemma2_9b",
    "mistral_7b",
    "mistral_22b",
    "mistral_123b",
)


@dataclass(frozen=True)
class CandidateResult:
    scheme: SchemeDescriptor
    effective_bits: Fraction
    metric_increase_pct: float


@dataclass(frozen=True)
class SearchConfig:
    candidates: tuple[SchemeDescriptor, ...]
    threshold_pct: float = DEFAULT_THRESHOLD_PCT

    def __post_init__(self):
        if self.threshold_pct <= 0:
            raise ValueError("threshold must be positive")


@dataclass(frozen=True)
class SelectionResult:
    chosen: CandidateResult
    below_threshold_empty: bool

    @property
    def scheme(self) -> SchemeDescriptor:
        return self.chosen.scheme


def table1_grid(scale: str = TABLE1_SCALE) -> tuple[SchemeDescriptor, ...]:
    """The nine (dtype, block) candidates of the published search grid."""
    return tuple(
        SchemeDescriptor(element_format(d), b, scale_format(scale))
        for d in TABLE1_DTYPES
        for b in TABLE1_BLOCKS
    )


def run_grid(cfg: SearchConfig, evaluator: Evaluator) -> list[CandidateResult]:
    """Score every candidate once; rows sorted by (effective bits, degradation)."""
    if not cfg.candidates:
        raise EmptyGrid("search grid has no candidates")
    results = []
    for candidate in cfg.candidates:
        try:
            metric = float(evaluator(candidate))
        except Exception as exc:
            raise EvaluatorFailure(
                f"evaluator failed on {candidate.name}: {exc}", candidate=candidate
            ) from exc
        results.append(
            CandidateResult(candidate, effective_bits(candidate), metric)
        )
    results.sort(key=lambda r: (r.effective_bits, r.metric_increase_pct))
    return results


def _selection_key(r: CandidateResult):
    # Fewest bits, then least degradation, then larger block; the trailing
    # registry/scale components only break exact ties deterministically.
    return (
        r.effective_bits,
        r.metric_increase_pct,
        -r.scheme.block_size,
        ELEMENT_CODES[r.scheme.element.name],
        r.scheme.scale.exponent_bits,
    )


def select_scheme(
    results: Iterable[CandidateResult],
    threshold_pct: float = DEFAULT_THRESHOLD_PCT,
) -> SelectionResult:
    """Filter strictly below the threshold, then take the fewest effective bits.

    Never fails on a non-empty input: with no survivors the least-degrading
    candidate is returned, flagged with ``below_threshold_empty``.
    """
    results = list(results)
    if not results:
        raise EmptyGrid("cannot select from zero results")
    survivors = [r for r in results if r.metric_increase_pct < threshold_pct]
    if survivors:
        return SelectionResult(min(survivors, key=_selection_key), False)
    fallback = min(results, key=lambda r: (r.metric_increase_pct, _selection_key(r)))
    return SelectionResult(fallback, True)


# ---------------------------------------------------------------------------
# Metric tables
# ---------------------------------------------------------------------------


def load_metric_table(source) -> dict[tuple[str, int], float]:
    """Read a ``dtype,block,metric_pct`` CSV into a lookup table."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text()
    table = {}
    reader = csv.DictReader(io.StringIO(text))
    required = {"dtype", "block", "metric_pct"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise UnknownScheme(
            f"metric table needs columns {sorted(required)}, got {reader.fieldnames}"
        )
    for row in reader:
        table[(row["dtype"], int(row["block"]))] = float(row["metric_pct"])
    return table


def table_evaluator(table: dict[tuple[str, int], float]) -> Evaluator:
    """Evaluator that looks candidates up in a loaded metric table."""

    def evaluate(scheme: SchemeDescriptor) -> float:
        key = (scheme.element.name, scheme.block_size)
        if key not in table:
            raise KeyError(f"metric table has no entry for {key}")
        return table[key]

    return evaluate


def fixture_table(model: str) -> dict[tuple[str, int], float]:
    """Shipped quality table for one of the seven reference models."""
    if model not in FIXTURE_MODELS:
        raise UnknownScheme(
            f"unknown fixture model {model!r}; known: {', '.join(FIXTURE_MODELS)}"
        )
    ref = resources.files("mxcomm.fixtures").joinpath(f"table1_{model}.csv")
    return load_metric_table(io.StringIO(ref.read_text()))


def fixture_expected_selections() -> dict[str, tuple[str, int, float]]:
    """Shipped (dtype, block, displayed bits) selections per reference model."""
    ref = resources.files("mxcomm.fixtures").joinpath("table2_selected_schemes.csv")
    out = {}
    for row in csv.DictReader(io.StringIO(ref.read_text())):
        out[row["model"]] = (row["dtype"], int(row["block"]), float(row["eff_bits"]))
    return out


def fixture_scale_bits_ablation() -> dict[int, dict[str, float]]:
    """Shipped scale-width ablation rows: scale bits -> model -> degradation %."""
    ref = resources.files("mxcomm.fixtures").joinpath("ablation_scale_bits.csv")
    out = {}
    for row in csv.DictReader(io.StringIO(ref.read_text())):
        bits = int(row.pop("scale_bits"))
        out[bits] = {model: float(v) for model, v in row.items()}
    return out


# ---------------------------------------------------------------------------
# Built-in evaluator and ablations
# ---------------------------------------------------------------------------


def make_simulation_evaluator(
    degree: int = 2,
    seed: int = 0,
    input_shape: tuple[int, int, int] = (1, 64, 512),
    weight_shape: tuple[int, int] = (512, 512),
) -> Evaluator:
    """Score candidates by relative reduction error (%) on seeded data."""

    def evaluate(scheme: SchemeDescriptor) -> float:
        cfg = tpsim.TPConfig(
            degree=degree,
            scheme=scheme,
            seed=seed,
            input_shape=input_shape,
            weight_shape=weight_shape,
        )
        return tpsim.simulate_reduction(cfg).rel_frob_err * 100.0

    return evaluate


ABLATION_DIMENSIONS = ("scale_bits", "value_dtype", "block_size", "parallelism")


def ablate(
    dimension: str,
    base: SchemeDescriptor,
    evaluator: Evaluator | None = None,
    *,
    tp_config: "tpsim.TPConfig | None" = None,
    degrees: Sequence[int] = (2, 4, 8, 16, 32),
):
    """Vary exactly one dimension of ``base`` and score every setting.

    For scheme dimensions returns CandidateResult rows (evaluator required);
    ``parallelism`` instead delegates to the reduction simulator and returns
    its reports (tp_config required, its scheme replaced by ``base``).
    """
    if dimension not in ABLATION_DIMENSIONS:
        raise ValueError(
            f"dimension must be one of {ABLATION_DIMENSIONS}, got {dimension!r}"
        )
    if dimension == "parallelism":
        if tp_config is None:
            raise ValueError("parallelism ablation needs a tp_config")
        cfg = replace(tp_config, scheme=base)
        return tpsim.parallelism_sweep(cfg, degrees)

    if evaluator is None:
        raise ValueError(f"{dimension} ablation needs an evaluator")
    if dimension == "scale_bits":
        candidates = [
            replace(base, scale=scale_format(f"e{k}m0")) for k in range(4, 9)
        ]
    elif dimension == "value_dtype":
        candidates = [
            replace(base, element=element_format(name)) for name in ABLATION_DTYPES
        ]
    else:  # block_size
        candidates = [replace(base, block_size=b) for b in TABLE1_BLOCKS]
    return run_grid(SearchConfig(tuple(candidates)), evaluator)


def candidates_to_csv(rows: Sequence[CandidateResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scheme", "effective_bits", "metric_increase_pct"])
    for r in rows:
        writer.writerow(
            [r.scheme.name, float(r.effective_bits), repr(r.metric_increase_pct)]
        )
    return buf.getvalue()

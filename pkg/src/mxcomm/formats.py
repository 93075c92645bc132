"""Low-bit value formats and block-scaling scheme descriptors.

Element formats
---------------
Two families of 2-5 bit element encodings are supported (wider ones up to
8 bits are accepted for experiments):

* ``FloatMicro`` -- sign / exponent / mantissa micro-floats written as
  ``ExMy``.  Decoding follows the usual subnormal/normal rule with bias
  ``2^(x-1) - 1`` and **no Inf or NaN code points**: every one of the
  ``2^total_bits`` codes is a finite value.

      exponent field 0:   (-1)^S * (0.M) * 2^(1 - bias)
      exponent field E>0: (-1)^S * (1.M) * 2^(E - bias)

  For ``E1My`` the bias is 0, so the non-negative magnitudes form the
  uniform ladder ``{0, 1, ..., 2^(y+1)-1} * 2^(-y+1)``.  That makes the
  ``INTn`` grid identical to the ``E1M(n-2)`` grid up to one global
  power-of-two factor, so block quantization results coincide exactly.

* ``IntSymmetric`` -- sign-magnitude integers.  ``INTn`` stores one sign
  bit plus ``n-1`` magnitude bits; magnitudes are ``0 ... 2^(n-1)-1``.
  Sign-magnitude (rather than two's complement) keeps the range symmetric
  and the INT/FP grid equivalence exact.

Scale formats
-------------
Block scales are exponent-only codes ``EkM0`` with ``k`` in [4, 8] and
bias ``2^(k-1) - 1``.  Stored code 0 is reserved to mean "all-zero block",
so representable unbiased exponents are ``[1 - bias, 2^k - 1 - bias]``.

A :class:`SchemeDescriptor` bundles (element format, block size, scale
format); its cost is measured in *effective bits*:

    effective_bits = element_bits + scale_bits / block_size

e.g. 4-bit elements with an 8-bit scale shared by 32 values cost exactly
4.25 bits per value.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import UnknownScheme


class FormatKind(enum.Enum):
    FLOAT_MICRO = "float_micro"
    INT_SYMMETRIC = "int_symmetric"


@dataclass(frozen=True)
class ElementFormat:
    """A low-bit element encoding (see module docstring for semantics)."""

    kind: FormatKind
    exponent_bits: int
    mantissa_bits: int
    sign_bits: int = 1

    def __post_init__(self):
        if self.sign_bits != 1:
            raise ValueError("element formats always carry exactly one sign bit")
        if self.exponent_bits < 0 or self.mantissa_bits < 0:
            raise ValueError("bit counts must be non-negative")
        if self.kind is FormatKind.FLOAT_MICRO and self.exponent_bits < 1:
            raise ValueError("FloatMicro needs at least one exponent bit")
        if self.kind is FormatKind.INT_SYMMETRIC:
            if self.exponent_bits != 0:
                raise ValueError("IntSymmetric has no exponent field")
            if self.mantissa_bits < 1:
                raise ValueError("IntSymmetric needs at least one magnitude bit")
        if not 2 <= self.total_bits <= 8:
            raise ValueError(
                f"total width {self.total_bits} outside the supported [2, 8] range"
            )

    @property
    def total_bits(self) -> int:
        return self.sign_bits + self.exponent_bits + self.mantissa_bits

    @property
    def bias(self) -> int:
        """Exponent bias; 0 for one-bit exponents and integer formats."""
        if self.kind is FormatKind.INT_SYMMETRIC:
            return 0
        return 2 ** (self.exponent_bits - 1) - 1

    @property
    def name(self) -> str:
        canonical = _ELEMENT_NAMES.get(self)
        if canonical is not None:
            return canonical
        if self.kind is FormatKind.INT_SYMMETRIC:
            return f"int{self.total_bits}"
        return f"fp{self.total_bits}_e{self.exponent_bits}m{self.mantissa_bits}"


@dataclass(frozen=True)
class ScaleFormat:
    """Exponent-only per-block scale code ``EkM0``."""

    exponent_bits: int

    def __post_init__(self):
        if not 4 <= self.exponent_bits <= 8:
            raise ValueError("scale exponent width must be in [4, 8]")

    @property
    def bias(self) -> int:
        return 2 ** (self.exponent_bits - 1) - 1

    @property
    def min_exponent(self) -> int:
        """Smallest representable unbiased exponent (stored code 1)."""
        return 1 - self.bias

    @property
    def max_exponent(self) -> int:
        """Largest representable unbiased exponent (stored code 2^k - 1)."""
        return 2**self.exponent_bits - 1 - self.bias

    @property
    def name(self) -> str:
        return f"e{self.exponent_bits}m0"


@dataclass(frozen=True)
class ValueGrid:
    """All non-negative representable magnitudes of an element format, ascending."""

    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def max_value(self) -> float:
        return float(self.values[-1])

    @property
    def largest_gap(self) -> float:
        """Widest spacing between adjacent magnitudes; bounds rounding error."""
        return float(np.diff(self.values).max())


@dataclass(frozen=True)
class SchemeDescriptor:
    """(element format, block size, scale format): the unit of scheme search."""

    element: ElementFormat
    block_size: int
    scale: ScaleFormat

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block size must be positive")

    @property
    def name(self) -> str:
        return f"{self.element.name}:{self.block_size}:{self.scale.name}"

    @property
    def effective_bits(self) -> Fraction:
        return effective_bits(self)


def effective_bits(scheme: SchemeDescriptor) -> Fraction:
    """Average stored bits per value, as an exact rational.

    One k-bit scale is shared by ``block_size`` elements, so the cost is
    ``element_bits + k / block_size``.
    """
    return Fraction(scheme.element.total_bits) + Fraction(
        scheme.scale.exponent_bits, scheme.block_size
    )


@lru_cache(maxsize=None)
def enumerate_grid(fmt: ElementFormat) -> ValueGrid:
    """Materialize the ascending magnitude grid of an element format.

    The grid has ``2^(total_bits - 1)`` entries starting at 0; the code for
    a magnitude is its index here, with the sign carried in the top bit.
    """
    if fmt.kind is FormatKind.INT_SYMMETRIC:
        values = np.arange(2**fmt.mantissa_bits, dtype=np.float64)
    else:
        mants = np.arange(2**fmt.mantissa_bits, dtype=np.float64)
        fractions = mants / 2**fmt.mantissa_bits
        parts = [fractions * 2.0 ** (1 - fmt.bias)]  # subnormals: (0.M) * 2^(1-bias)
        for e_field in range(1, 2**fmt.exponent_bits):
            parts.append((1.0 + fractions) * 2.0 ** (e_field - fmt.bias))
        values = np.concatenate(parts)
    return ValueGrid(values)


def emax(fmt: ElementFormat) -> int:
    """Exponent of the largest representable magnitude: floor(log2(max))."""
    top = enumerate_grid(fmt).max_value
    mantissa, exponent = math.frexp(top)  # top = mantissa * 2^exponent, mantissa in [0.5, 1)
    return exponent - 1


# Registries.  Insertion order is load-bearing: the wire format identifies
# element and scale formats by their position here.

ELEMENT_FORMATS: dict[str, ElementFormat] = {
    "fp4_e2m1": ElementFormat(FormatKind.FLOAT_MICRO, 2, 1),
    "fp5_e2m2": ElementFormat(FormatKind.FLOAT_MICRO, 2, 2),
    "fp5_e3m1": ElementFormat(FormatKind.FLOAT_MICRO, 3, 1),
    "fp5_e1m3": ElementFormat(FormatKind.FLOAT_MICRO, 1, 3),
    "fp4_e1m2": ElementFormat(FormatKind.FLOAT_MICRO, 1, 2),
    "fp3_e1m1": ElementFormat(FormatKind.FLOAT_MICRO, 1, 1),
    "fp2_e1m0": ElementFormat(FormatKind.FLOAT_MICRO, 1, 0),
    "int3": ElementFormat(FormatKind.INT_SYMMETRIC, 0, 2),
    "int4": ElementFormat(FormatKind.INT_SYMMETRIC, 0, 3),
    "int5": ElementFormat(FormatKind.INT_SYMMETRIC, 0, 4),
}

SCALE_FORMATS: dict[str, ScaleFormat] = {
    f"e{k}m0": ScaleFormat(k) for k in range(4, 9)
}

_ELEMENT_NAMES = {fmt: name for name, fmt in ELEMENT_FORMATS.items()}

ELEMENT_CODES = {name: code for code, name in enumerate(ELEMENT_FORMATS)}
SCALE_CODES = {name: code for code, name in enumerate(SCALE_FORMATS)}


def element_format(name: str) -> ElementFormat:
    try:
        return ELEMENT_FORMATS[name]
    except KeyError:
        raise UnknownScheme(
            f"unknown element format {name!r}; known: {', '.join(ELEMENT_FORMATS)}"
        ) from None


def scale_format(name: str) -> ScaleFormat:
    try:
        return SCALE_FORMATS[name]
    except KeyError:
        raise UnknownScheme(
            f"unknown scale format {name!r}; known: {', '.join(SCALE_FORMATS)}"
        ) from None


def parse_scheme(spec: str) -> SchemeDescriptor:
    """Parse the ``element:block:scale`` spelling, e.g. ``fp4_e2m1:32:e8m0``."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise UnknownScheme(
            f"scheme {spec!r} is not of the form element:block:scale"
        )
    element = element_format(parts[0])
    try:
        block = int(parts[1])
    except ValueError:
        raise UnknownScheme(f"block size {parts[1]!r} is not an integer") from None
    if block < 1:
        raise UnknownScheme(f"block size {block} must be positive")
    return SchemeDescriptor(element, block, scale_format(parts[2]))

"""Synthetic activation generators.

Real transformer activations are roughly Gaussian with a sparse population
of large-magnitude outliers, which is what makes coarse absolute-maximum
scaling lossy.  The generator here reproduces that shape: i.i.d. standard
normal entries with a random fraction scaled up by a constant factor.
"""

from __future__ import annotations

import numpy as np

OUTLIER_FRACTION = 0.01
OUTLIER_MAGNIFICATION = 100.0


def gaussian_with_outliers(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    fraction: float = OUTLIER_FRACTION,
    magnification: float = OUTLIER_MAGNIFICATION,
    dtype=np.float32,
) -> np.ndarray:
    """Standard normal tensor with ``fraction`` of entries scaled up."""
    x = rng.standard_normal(shape)
    if fraction > 0:
        mask = rng.random(shape) < fraction
        x = np.where(mask, x * magnification, x)
    return x.astype(dtype)

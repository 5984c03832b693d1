"""Randomness certification: chi-square uniformity and a monobit sanity check.

The chi-square p-value is computed from a self-contained regularized upper
incomplete gamma: series expansion for x < a + 1, Lentz continued fraction
otherwise, iteration-capped and accurate to well under 1e-10 absolute error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

ArrayLike = Union[Sequence[float], np.ndarray]

_GAMMA_MAX_ITER = 10_000
_GAMMA_EPS = 1e-16
_FPMIN = 1e-300

MONOBIT_Z_LIMIT = 3.89
_BITS_PER_SAMPLE = 52
_MIN_MONOBIT_BITS = 10_000


def _lower_gamma_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by power series (x < a + 1)."""
    term = 1.0 / a
    total = term
    denom = a
    for _ in range(_GAMMA_MAX_ITER):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ArithmeticError(f"incomplete gamma series did not converge for a={a}, x={x}")


def _upper_gamma_cf(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by Lentz continued fraction (x >= a + 1)."""
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            return h * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ArithmeticError(f"incomplete gamma continued fraction did not converge for a={a}, x={x}")


def regularized_gamma_q(a: float, x: float) -> float:
    """Upper-tail regularized incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a)."""
    if a <= 0:
        raise ValueError(f"shape parameter must be positive, got {a}")
    if x < 0:
        raise ValueError(f"argument must be non-negative, got {x}")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return min(max(1.0 - _lower_gamma_series(a, x), 0.0), 1.0)
    return min(max(_upper_gamma_cf(a, x), 0.0), 1.0)


def chi_square_p_value(statistic: float, degrees_of_freedom: int) -> float:
    """Upper-tail probability of a chi-square variate."""
    if degrees_of_freedom < 1:
        raise ValueError("degrees of freedom must be >= 1")
    return regularized_gamma_q(degrees_of_freedom / 2.0, statistic / 2.0)


@dataclass(frozen=True)
class ChiSquareReport:
    bins: int
    observed: np.ndarray
    statistic: float
    degrees_of_freedom: int
    p_value: float

    @property
    def sample_count(self) -> int:
        return int(self.observed.sum())

    def rejects(self, alpha: float = 0.01) -> bool:
        return self.p_value < alpha


def chi_square_uniformity(samples: ArrayLike, bins: int = 100) -> ChiSquareReport:
    """Pearson goodness-of-fit of unit-interval samples against uniform bins."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    values = np.asarray(samples, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("samples must be a 1-d vector")
    n = values.shape[0]
    if n < 10 * bins:
        raise ValueError(f"need at least {10 * bins} samples for {bins} bins, got {n}")
    if np.any(values < 0.0) or np.any(values >= 1.0) or not np.all(np.isfinite(values)):
        raise ValueError("samples must lie in [0, 1)")
    indices = np.minimum((values * bins).astype(np.int64), bins - 1)
    observed = np.bincount(indices, minlength=bins).astype(np.int64)
    expected = n / bins
    statistic = float(((observed - expected) ** 2 / expected).sum())
    dof = bins - 1
    return ChiSquareReport(
        bins=bins,
        observed=observed,
        statistic=statistic,
        degrees_of_freedom=dof,
        p_value=chi_square_p_value(statistic, dof),
    )


@dataclass(frozen=True)
class MonobitReport:
    bit_count: int
    ones_fraction: float
    z_score: float

    @property
    def passed(self) -> bool:
        return abs(self.z_score) < MONOBIT_Z_LIMIT


def extract_mantissa_bits(samples: ArrayLike) -> np.ndarray:
    """Top 52 binary fraction digits of each unit-interval value, as uint64 words."""
    values = np.asarray(samples, dtype=np.float64)
    if np.any(values < 0.0) or np.any(values >= 1.0) or not np.all(np.isfinite(values)):
        raise ValueError("samples must lie in [0, 1)")
    # Scaling by 2^52 is an exact exponent shift, so truncation gives the digits.
    return (values * 4503599627370496.0).astype(np.uint64)


def monobit(samples: ArrayLike) -> MonobitReport:
    """Ones/zeros balance over the concatenated fraction bits of the samples."""
    words = extract_mantissa_bits(samples)
    n = words.shape[0] * _BITS_PER_SAMPLE
    if n < _MIN_MONOBIT_BITS:
        raise ValueError(f"need at least {_MIN_MONOBIT_BITS} bits, got {n}")
    ones = int(np.bitwise_count(words).sum())
    z = (2.0 * ones - n) / math.sqrt(n)
    return MonobitReport(bit_count=n, ones_fraction=ones / n, z_score=z)

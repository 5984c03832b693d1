"""Logits-to-token pipeline: temperature, top-k, softmax, nucleus filter, CDF selection.

The pipeline order is fixed: temperature -> top-k -> softmax -> top-p -> CDF.
All distribution arithmetic runs in a selectable precision; single-precision
mode rounds every intermediate result to IEEE-754 binary32 so that
narrow-interval failure modes are reproducible on double-precision hardware.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from hijacklab.mt19937 import UniformConvention

ArrayLike = Union[Sequence[float], np.ndarray]


class Precision(Enum):
    """Arithmetic width used for probabilities, CDF, and crafted draws."""

    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32) if self is Precision.SINGLE else np.dtype(np.float64)

    @property
    def eps(self) -> float:
        """Machine epsilon of the active precision (~1.19e-7 single, ~2.22e-16 double)."""
        return float(np.finfo(self.dtype).eps)


@dataclass(frozen=True)
class SamplingConfig:
    """Sampler hyperparameters plus arithmetic precision and draw convention."""

    temperature: float = 1.0
    top_k: Optional[int] = None
    top_p: float = 1.0
    precision: Precision = Precision.SINGLE
    convention: UniformConvention = UniformConvention.DOUBLE53

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")


class TokenDistribution:
    """Post-filter probability vector with its CDF, in a fixed precision.

    The CDF is accumulated in vocabulary-index order and its final entry is
    clamped to exactly 1, so every unit-interval draw lands in some interval.
    """

    __slots__ = ("probs", "cdf", "precision")

    def __init__(self, probs: np.ndarray, cdf: np.ndarray, precision: Precision):
        self.probs = probs
        self.cdf = cdf
        self.precision = precision

    @classmethod
    def from_probs(cls, probs: ArrayLike, precision: Precision) -> "TokenDistribution":
        p = np.ascontiguousarray(probs, dtype=precision.dtype)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty 1-d vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probs must be finite and non-negative")
        cdf = np.cumsum(p, dtype=precision.dtype)
        np.minimum(cdf, precision.dtype.type(1.0), out=cdf)
        cdf[-1] = 1.0
        return cls(p, cdf, precision)

    @property
    def vocab_size(self) -> int:
        return int(self.probs.shape[0])

    def total_mass_error(self) -> float:
        """|sum(probs) - 1| in the distribution's own precision."""
        return abs(float(self.probs.sum(dtype=self.precision.dtype)) - 1.0)


def apply_temperature(logits: ArrayLike, temperature: float) -> np.ndarray:
    """Divide logits by a positive temperature; masked (-inf) entries stay masked."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    values = np.asarray(logits, dtype=np.float64)
    return values / temperature


def top_k_filter(logits: ArrayLike, k: int) -> np.ndarray:
    """Mask everything but the k largest logits to -inf.

    Boundary ties resolve toward lower token ids (stable order); k >= vocab
    size leaves the vector untouched.
    """
    if k < 1:
        raise ValueError(f"top_k must be >= 1, got {k}")
    values = np.asarray(logits, dtype=np.float64)
    if k >= values.shape[0]:
        return values.copy()
    keep = np.argsort(-values, kind="stable")[:k]
    out = np.full_like(values, -np.inf)
    out[keep] = values[keep]
    return out


def softmax(logits: ArrayLike, precision: Precision) -> TokenDistribution:
    """Max-subtracted softmax in the requested precision; -inf maps to exactly 0."""
    values = np.asarray(logits, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("logits must be a non-empty 1-d vector")
    if np.any(np.isnan(values)) or np.any(values == np.inf):
        raise ValueError("logits must be free of NaN and +inf")
    unmasked = values > -np.inf
    if not np.any(unmasked):
        raise ValueError("softmax needs at least one unmasked logit")
    x = values.astype(precision.dtype)
    x = x - x[unmasked].max()
    exp = np.exp(x)
    probs = exp / exp.sum(dtype=precision.dtype)
    return TokenDistribution.from_probs(probs, precision)


def top_p_filter(dist: TokenDistribution, p: float) -> TokenDistribution:
    """Keep the minimal descending-probability prefix with cumulative mass >= p.

    The rest is masked and the survivors are renormalized in the
    distribution's precision, keeping vocabulary-index order. A full nucleus
    (nothing masked) returns the distribution unchanged.
    """
    if not 0 < p <= 1:
        raise ValueError(f"top_p must be in (0, 1], got {p}")
    if p == 1.0:
        return dist
    probs = dist.probs
    order = np.argsort(-probs, kind="stable")
    sorted_mass = np.cumsum(probs[order], dtype=dist.precision.dtype)
    boundary = int(np.searchsorted(sorted_mass, p, side="left"))
    if boundary >= probs.shape[0] - 1:
        return dist  # rounding may leave total mass a hair under p: keep all
    kept = order[: boundary + 1]
    kept_mass = sorted_mass[boundary]
    out = np.zeros_like(probs)
    out[kept] = probs[kept] / kept_mass
    return TokenDistribution.from_probs(out, dist.precision)


def sample(dist: TokenDistribution, u: float) -> int:
    """Inverse-transform selection: the unique t with cdf[t-1] <= u < cdf[t].

    Zero-probability tokens have empty intervals and are never returned.
    """
    if not 0 <= u < 1:
        raise ValueError(f"u must be in [0, 1), got {u}")
    # Compare in float64 so a single-precision CDF is embedded exactly rather
    # than the draw being rounded down to it.
    return int(np.searchsorted(dist.cdf, np.float64(u), side="right"))


def build_distribution(logits: ArrayLike, config: SamplingConfig) -> TokenDistribution:
    """Run the full fixed-order pipeline for one step."""
    values = np.asarray(logits, dtype=np.float64)
    if config.top_k is not None and config.top_k > values.shape[0]:
        raise ValueError(f"top_k={config.top_k} exceeds vocabulary size {values.shape[0]}")
    values = apply_temperature(values, config.temperature)
    if config.top_k is not None:
        values = top_k_filter(values, config.top_k)
    dist = softmax(values, config.precision)
    if config.top_p < 1.0:
        dist = top_p_filter(dist, config.top_p)
    return dist

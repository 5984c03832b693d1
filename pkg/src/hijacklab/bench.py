"""Per-token latency benchmarking of the sampling pipeline under each entropy source."""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from hijacklab.entropy import EntropySource, PoolReader
from hijacklab.sampling import SamplingConfig, build_distribution, sample


@dataclass(frozen=True)
class BenchReport:
    iterations: int
    warmup: int
    latencies_ns: Tuple[int, ...]
    median_ns: float
    mean_ns: float
    p95_ns: float
    source_kind: str
    pool_resident_bytes: Optional[int] = None

    def format_summary(self) -> str:
        lines = [
            f"source={self.source_kind} iterations={self.iterations} warmup={self.warmup}",
            f"median={self.median_ns / 1e3:.2f} us  mean={self.mean_ns / 1e3:.2f} us  "
            f"p95={self.p95_ns / 1e3:.2f} us",
        ]
        if self.pool_resident_bytes is not None:
            lines.append(f"pool resident bytes={self.pool_resident_bytes}")
        return "\n".join(lines)


def percentile_95(values: Sequence[float]) -> float:
    """Order-statistic P95: the ceil(0.95 * n)-th smallest value."""
    if not values:
        raise ValueError("need at least one value")
    ordered = sorted(values)
    k = math.ceil(0.95 * len(ordered))
    return float(ordered[k - 1])


def bench_latency(
    model,
    config: SamplingConfig,
    source: EntropySource,
    context: Sequence[int],
    *,
    iterations: int = 1000,
    warmup: int = 50,
) -> BenchReport:
    """Time one full token step (logits -> pipeline -> draw -> select) per iteration.

    The first ``warmup`` iterations run but never contribute to any statistic.
    The context is held fixed so every iteration does identical work.
    """
    if iterations <= warmup:
        raise ValueError(f"iterations ({iterations}) must exceed warmup ({warmup})")
    ctx = list(context)
    latencies = []
    for _ in range(iterations):
        start = time.perf_counter_ns()
        logits = model.next_logits(ctx)
        dist = build_distribution(logits, config)
        u = source.next_unit(dist)
        sample(dist, u)
        latencies.append(time.perf_counter_ns() - start)
    timed = latencies[warmup:]
    return BenchReport(
        iterations=iterations,
        warmup=warmup,
        latencies_ns=tuple(latencies),
        median_ns=float(statistics.median(timed)),
        mean_ns=float(statistics.fmean(timed)),
        p95_ns=percentile_95(timed),
        source_kind=source.kind.value,
        pool_resident_bytes=source.resident_bytes if isinstance(source, PoolReader) else None,
    )

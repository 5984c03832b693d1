"""Deterministic synthetic logit source plus recorded logit-trace ingestion.

The synthetic model is a counter-based mixing hash over (seed, context) that
feeds per-token pseudo-logits: a stateless, bitwise-reproducible stand-in for
an autoregressive network. Distributions recorded from real models can be
replayed through the same pipeline via line-delimited trace files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Laplace-shaped logits: heavy enough tails that concentration 1.0 with a
# 1000-token vocabulary spreads token probabilities over roughly 1e-1..1e-6,
# and sharper temperatures push the deepest ranks below single-precision eps.
_LOGIT_SCALE = 1.1


def _mix64(value: int) -> int:
    z = value & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _mix64_array(values: np.ndarray) -> np.ndarray:
    z = values.astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class TraceError(Exception):
    """Base class for trace ingestion failures."""


class TraceFormatError(TraceError):
    """Malformed header or step record, or inconsistent vocabulary size."""


class EndOfTraceError(TraceError):
    """A step beyond the recorded trace length was requested."""


@dataclass(frozen=True)
class SyntheticModel:
    """Stateless autoregressive distribution source.

    Identical (model_seed, context) pairs always produce bitwise-identical
    logits; changing any context token reshuffles the whole vector.
    """

    model_seed: int
    vocab_size: int = 1000
    concentration: float = 1.0

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if not self.concentration > 0:
            raise ValueError("concentration must be positive")

    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        state = self.model_seed & _MASK64
        for token in context:
            if not 0 <= token < self.vocab_size:
                raise ValueError(f"context token {token} outside vocabulary of size {self.vocab_size}")
            state = _mix64(state ^ ((token + 1) * _GAMMA))
        counters = np.arange(self.vocab_size, dtype=np.uint64)
        hashed = _mix64_array(counters * np.uint64(_GAMMA) + np.uint64(state))
        # 52-bit uniform strictly inside (0, 1), then the Laplace inverse CDF.
        u = ((hashed >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52
        shaped = np.where(u < 0.5, np.log(2.0 * u), -np.log(2.0 * (1.0 - u)))
        return self.concentration * _LOGIT_SCALE * shaped


def synthetic_contexts(count: int, length: int, vocab_size: int, seed: int = 0) -> List[List[int]]:
    """Fixed roster of token contexts standing in for natural-language prompts."""
    if count < 1 or length < 1:
        raise ValueError("count and length must be positive")
    contexts = []
    for i in range(count):
        base = _mix64(seed ^ ((i + 1) * _GAMMA))
        contexts.append([_mix64(base + j) % vocab_size for j in range(length)])
    return contexts


@dataclass
class LogitTrace:
    """Per-step logit vectors recorded from an external model run."""

    steps: List[np.ndarray]
    vocab_size: int
    precision: str = "double"
    source: str = "unknown"

    def __len__(self) -> int:
        return len(self.steps)


def trace_next_logits(trace: LogitTrace, step: int) -> np.ndarray:
    if not 0 <= step < len(trace.steps):
        raise EndOfTraceError(f"trace has {len(trace.steps)} steps, step {step} requested")
    return trace.steps[step]


class TracePlayer:
    """Adapter that replays a trace through the model interface, one step per call."""

    def __init__(self, trace: LogitTrace):
        self.trace = trace
        self.vocab_size = trace.vocab_size
        self.position = 0

    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        logits = trace_next_logits(self.trace, self.position)
        self.position += 1
        return logits

    def rewind(self) -> None:
        self.position = 0


def save_trace(trace: LogitTrace, path) -> None:
    """Write a trace: one JSON header line, then one JSON logit array per step."""
    header = {"vocab_size": trace.vocab_size, "precision": trace.precision, "source": trace.source}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for step in trace.steps:
            values = np.asarray(step, dtype=np.float64)
            if values.shape != (trace.vocab_size,):
                raise TraceFormatError(f"step has {values.shape} entries, expected ({trace.vocab_size},)")
            fh.write(json.dumps([float(v) for v in values]) + "\n")


def load_trace(path) -> LogitTrace:
    """Read a trace file, validating header fields and per-step vocabulary size."""
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise TraceFormatError("empty trace file")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"malformed trace header: {exc}") from exc
        if not isinstance(header, dict):
            raise TraceFormatError("trace header must be a JSON object")
        try:
            vocab_size = int(header["vocab_size"])
            precision = header["precision"]
            source = str(header["source"])
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(f"trace header missing or invalid field: {exc}") from exc
        if precision not in ("single", "double"):
            raise TraceFormatError(f"trace precision must be 'single' or 'double', got {precision!r}")
        if vocab_size < 1:
            raise TraceFormatError(f"trace vocab_size must be positive, got {vocab_size}")

        steps: List[np.ndarray] = []
        for lineno, line in enumerate(fh, start=2):
            if line.strip() == "":
                continue
            try:
                values = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"malformed step record at line {lineno}: {exc}") from exc
            if not isinstance(values, list) or len(values) != vocab_size:
                raise TraceFormatError(
                    f"step record at line {lineno} has {len(values) if isinstance(values, list) else 'non-array'} "
                    f"entries, expected {vocab_size}"
                )
            try:
                array = np.asarray(values, dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise TraceFormatError(f"non-numeric logit at line {lineno}: {exc}") from exc
            if np.any(np.isnan(array)):
                raise TraceFormatError(f"NaN logit at line {lineno}")
            steps.append(array)
    return LogitTrace(steps=steps, vocab_size=vocab_size, precision=precision, source=source)

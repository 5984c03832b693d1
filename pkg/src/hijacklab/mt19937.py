"""MT19937 generator with invertible tempering, full state recovery, and prediction.

The generator is implemented from scratch (vectorized block twist) so that its
internal 624-word state can be inspected, injected, and reconstructed from
observed outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

N = 624
M = 397
MATRIX_A = 0x9908B0DF
UPPER_MASK = 0x80000000
LOWER_MASK = 0x7FFFFFFF
INIT_MULTIPLIER = 1812433253

_U32_MAX = 0xFFFFFFFF
_SHIFT_U, _SHIFT_S, _SHIFT_T, _SHIFT_L = 11, 7, 15, 18
_MASK_B = 0x9D2C5680
_MASK_C = 0xEFC60000

IntOrArray = Union[int, np.ndarray]


class UniformConvention(Enum):
    """How raw 32-bit outputs are reduced to a unit-interval value.

    SINGLE24 consumes one output (top 24 bits / 2^24); DOUBLE53 consumes two
    (53-bit mantissa / 2^53, the common double-precision convention).
    """

    SINGLE24 = "single24"
    DOUBLE53 = "double53"

    @property
    def draws_per_value(self) -> int:
        return 1 if self is UniformConvention.SINGLE24 else 2


@dataclass(eq=False)
class PrngState:
    """624-word generator state plus the index of the next word to emit.

    ``cursor == 624`` means a fresh block must be twisted before the next
    output. The state is a plain mutable value: copy it before sharing.
    """

    words: np.ndarray
    cursor: int
    _outputs: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        words = np.ascontiguousarray(self.words, dtype=np.uint32)
        if words.shape != (N,):
            raise ValueError(f"state needs exactly {N} words, got shape {words.shape}")
        if not 0 <= self.cursor <= N:
            raise ValueError(f"cursor must be in [0, {N}], got {self.cursor}")
        self.words = words

    def clone(self) -> "PrngState":
        return PrngState(self.words.copy(), self.cursor, self._outputs)


def seed_init(seed: int) -> PrngState:
    """Build the canonical state for a 32-bit seed (Knuth-style initializer)."""
    if not 0 <= seed <= _U32_MAX:
        raise ValueError(f"seed must be an unsigned 32-bit integer, got {seed}")
    words = np.empty(N, dtype=np.uint32)
    prev = seed & _U32_MAX
    words[0] = prev
    for i in range(1, N):
        prev = (INIT_MULTIPLIER * (prev ^ (prev >> 30)) + i) & _U32_MAX
        words[i] = prev
    return PrngState(words, N)


def _twist(words: np.ndarray) -> None:
    """Advance the state one full block in place.

    The scalar recurrence reads a mix of old and already-updated words; the
    three slabs below reproduce those data dependencies with vector ops.
    """
    x = (words[:-1] & np.uint32(UPPER_MASK)) | (words[1:] & np.uint32(LOWER_MASK))
    xa = (x >> 1) ^ (x & np.uint32(1)) * np.uint32(MATRIX_A)
    new = np.empty_like(words)
    new[0 : N - M] = words[M:] ^ xa[0 : N - M]
    new[N - M : 2 * (N - M)] = new[0 : N - M] ^ xa[N - M : 2 * (N - M)]
    new[2 * (N - M) : N - 1] = new[N - M : M - 1] ^ xa[2 * (N - M) : N - 1]
    tail = (int(words[N - 1]) & UPPER_MASK) | (int(new[0]) & LOWER_MASK)
    tail_a = (tail >> 1) ^ (MATRIX_A if tail & 1 else 0)
    new[N - 1] = np.uint32(int(new[M - 1]) ^ tail_a)
    words[:] = new


def temper(word: IntOrArray) -> IntOrArray:
    """Apply the output tempering transform (works on ints and uint32 arrays)."""
    y = word & _U32_MAX
    y = y ^ (y >> _SHIFT_U)
    y = y ^ ((y << _SHIFT_S) & _MASK_B)
    y = y ^ ((y << _SHIFT_T) & _MASK_C)
    y = y ^ (y >> _SHIFT_L)
    return y


def _invert_xor_rshift(value: IntOrArray, shift: int) -> IntOrArray:
    result = value
    for _ in range(0, 32, shift):
        result = value ^ (result >> shift)
    return result


def _invert_xor_lshift_mask(value: IntOrArray, shift: int, mask: int) -> IntOrArray:
    result = value
    for _ in range(0, 32, shift):
        result = value ^ ((result << shift) & mask)
    return result


def untemper(output: IntOrArray) -> IntOrArray:
    """Exactly invert :func:`temper`; ``untemper(temper(x)) == x`` for all x."""
    y = output & _U32_MAX
    y = _invert_xor_rshift(y, _SHIFT_L)
    y = _invert_xor_lshift_mask(y, _SHIFT_T, _MASK_C)
    y = _invert_xor_lshift_mask(y, _SHIFT_S, _MASK_B)
    y = _invert_xor_rshift(y, _SHIFT_U)
    return y


def _refresh_outputs(state: PrngState) -> np.ndarray:
    outputs = state._outputs
    if outputs is None:
        outputs = np.asarray(temper(state.words), dtype=np.uint32)
        state._outputs = outputs
    return outputs


def next_u32(state: PrngState) -> int:
    """Emit one tempered 32-bit output, twisting when the block is exhausted."""
    if state.cursor >= N:
        _twist(state.words)
        state.cursor = 0
        state._outputs = None
    value = int(_refresh_outputs(state)[state.cursor])
    state.cursor += 1
    return value


def generate_u32(state: PrngState, count: int) -> np.ndarray:
    """Emit ``count`` consecutive outputs as a uint32 array (bulk fast path)."""
    if count < 0:
        raise ValueError("count must be non-negative")
    out = np.empty(count, dtype=np.uint32)
    filled = 0
    while filled < count:
        if state.cursor >= N:
            _twist(state.words)
            state.cursor = 0
            state._outputs = None
        block = _refresh_outputs(state)
        take = min(count - filled, N - state.cursor)
        out[filled : filled + take] = block[state.cursor : state.cursor + take]
        state.cursor += take
        filled += take
    return out


def next_uniform(state: PrngState, convention: UniformConvention = UniformConvention.DOUBLE53) -> float:
    """Draw one unit-interval value, consuming 1 (SINGLE24) or 2 (DOUBLE53) outputs."""
    if convention is UniformConvention.SINGLE24:
        return (next_u32(state) >> 8) * (1.0 / 16777216.0)
    a = next_u32(state) >> 5
    b = next_u32(state) >> 6
    return (a * 67108864.0 + b) * (1.0 / 9007199254740992.0)


def recover_state(outputs: Sequence[int], offset: int = 0) -> PrngState:
    """Reconstruct the generator state from 624 consecutive tempered outputs.

    ``offset`` is the block phase at which the first observation was emitted
    (0 for a just-twisted generator). The recovered state reproduces the true
    generator's future exactly: its next output equals the 625th output of the
    observed stream.
    """
    observed = np.asarray(outputs, dtype=np.uint64)
    if observed.shape != (N,):
        raise ValueError(f"recovery needs exactly {N} outputs, got {observed.shape[0] if observed.ndim == 1 else observed.shape}")
    if np.any(observed > _U32_MAX):
        raise ValueError("observed outputs must be unsigned 32-bit integers")
    if not 0 <= offset < N:
        raise ValueError(f"offset must be in [0, {N}), got {offset}")

    raw = np.asarray(untemper(observed.astype(np.uint32)), dtype=np.uint32)
    if offset == 0:
        return PrngState(raw.copy(), N)

    # The observation window straddles a twist: the first 624-offset values are
    # the tail of one block, the rest the head of the next. Lay them out at
    # their in-block positions, then run the remainder of the twist so the
    # array becomes the complete newer block.
    words = np.empty(N, dtype=np.uint32)
    words[offset:] = raw[: N - offset]
    words[:offset] = raw[N - offset :]
    for i in range(offset, N):
        x = (int(words[i]) & UPPER_MASK) | (int(words[(i + 1) % N]) & LOWER_MASK)
        xa = (x >> 1) ^ (MATRIX_A if x & 1 else 0)
        words[i] = np.uint32(int(words[(i + M) % N]) ^ xa)
    return PrngState(words, offset)

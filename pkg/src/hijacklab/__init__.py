"""Desk-scale lab for sampling-layer PRNG hijacking and buffered-entropy defenses."""

__version__ = "0.1.0"

from hijacklab.mt19937 import (
    PrngState,
    UniformConvention,
    generate_u32,
    next_u32,
    next_uniform,
    recover_state,
    seed_init,
    temper,
    untemper,
)
from hijacklab.sampling import (
    Precision,
    SamplingConfig,
    TokenDistribution,
    apply_temperature,
    build_distribution,
    sample,
    softmax,
    top_k_filter,
    top_p_filter,
)

__all__ = [
    "PrngState",
    "UniformConvention",
    "Precision",
    "SamplingConfig",
    "TokenDistribution",
    "apply_temperature",
    "build_distribution",
    "generate_u32",
    "next_u32",
    "next_uniform",
    "recover_state",
    "sample",
    "seed_init",
    "softmax",
    "temper",
    "top_k_filter",
    "top_p_filter",
    "untemper",
    "__version__",
]

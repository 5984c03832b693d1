"""CDF-interval injection: craft draws that force chosen tokens, run scored trials.

The attack substitutes the sampler's uniform draw with the midpoint of the
target token's CDF interval, which deterministically selects that token
whenever the interval is wider than the active precision's machine epsilon.
Trials are scored all-or-nothing on exact token-id match.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from hijacklab.entropy import EntropySource, MtInlineSource, SourceKind
from hijacklab.mt19937 import seed_init
from hijacklab.sampling import SamplingConfig, TokenDistribution, build_distribution, sample


class AttackError(Exception):
    """Base class for crafting failures."""


class TargetUnreachableError(AttackError):
    """The target token was masked by filtering (zero post-filter probability)."""


class EpsilonUnderflowError(AttackError):
    """The target's CDF interval is narrower than the precision's epsilon."""


def craft_u(dist: TokenDistribution, target: int) -> float:
    """Midpoint of the target token's CDF interval, in the distribution's precision.

    Guaranteed to select ``target`` via inverse-transform sampling whenever the
    target's probability exceeds machine epsilon; the midpoint maximizes
    distance to both rounding boundaries.
    """
    if not 0 <= target < dist.vocab_size:
        raise ValueError(f"target {target} outside vocabulary of size {dist.vocab_size}")
    dtype = dist.precision.dtype
    prob = dist.probs[target]
    if prob == 0:
        raise TargetUnreachableError(f"token {target} has zero post-filter probability")
    if float(prob) <= dist.precision.eps:
        raise EpsilonUnderflowError(
            f"token {target} probability {float(prob):.3e} is at or below machine epsilon "
            f"{dist.precision.eps:.3e}"
        )
    left = dist.cdf[target - 1] if target > 0 else dtype.type(0.0)
    return float(left + prob / dtype.type(2.0))


class HijackedSource(EntropySource):
    """Wraps an honest source; armed steps return crafted draws instead.

    The inner source's value is always consumed so the honest stream keeps its
    phase whether or not a step was hijacked. Crafting failures fall through to
    the honest draw and are recorded, not raised.
    """

    kind = SourceKind.HIJACKED

    def __init__(self, inner: EntropySource, enabled: bool = True):
        self.inner = inner
        self.enabled = enabled
        self._target: Optional[int] = None
        self.last_cause: Optional[str] = None
        self.last_crafted: bool = False

    def arm(self, target: int) -> None:
        """Set the token to force on the next draw."""
        self._target = target

    def disarm(self) -> None:
        self._target = None

    def next_unit(self, dist: Optional[TokenDistribution] = None) -> float:
        inner_u = self.inner.next_unit()
        self.last_cause = None
        self.last_crafted = False
        if not self.enabled or self._target is None or dist is None:
            return inner_u
        target, self._target = self._target, None
        try:
            crafted = craft_u(dist, target)
        except EpsilonUnderflowError:
            self.last_cause = "epsilon_underflow"
            return inner_u
        except TargetUnreachableError:
            self.last_cause = "target_unreachable"
            return inner_u
        self.last_crafted = True
        return crafted


class FailureCause(Enum):
    MISMATCH = "mismatch"
    EPSILON_UNDERFLOW = "epsilon_underflow"


@dataclass(frozen=True)
class AttackPayload:
    """Token-id sequence the attacker wants emitted verbatim."""

    target_tokens: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.target_tokens) < 1:
            raise ValueError("payload needs at least one target token")
        if any(t < 0 for t in self.target_tokens):
            raise ValueError("target tokens must be non-negative")

    def __len__(self) -> int:
        return len(self.target_tokens)


@dataclass(frozen=True)
class TrialStep:
    target: int
    emitted: int
    target_prob: float
    u: float
    matched: bool
    crafted: bool = False
    hijack_cause: Optional[str] = None


@dataclass(frozen=True)
class TrialResult:
    steps: Tuple[TrialStep, ...]
    success: bool
    failure_cause: Optional[FailureCause]

    @staticmethod
    def from_steps(steps: Sequence[TrialStep]) -> "TrialResult":
        steps = tuple(steps)
        success = all(s.matched for s in steps)
        if success:
            cause = None
        elif any(s.hijack_cause == "epsilon_underflow" for s in steps):
            cause = FailureCause.EPSILON_UNDERFLOW
        else:
            cause = FailureCause.MISMATCH
        return TrialResult(steps, success, cause)


TargetSelector = Callable[[int, TokenDistribution], int]


def token_at_rank(dist: TokenDistribution, rank: int) -> int:
    """Token at the given descending-probability rank of the surviving support.

    Ranks past the end of the support clamp to its least-probable member, so a
    "deep" rank stays reachable under tight filtering. Ties break toward lower
    token ids.
    """
    order = np.argsort(-dist.probs, kind="stable")
    support = int(np.count_nonzero(dist.probs))
    clamped = min(rank, support - 1)
    return int(order[clamped])


def rank_selector(ranks: Sequence[int]) -> TargetSelector:
    """Per-step selector walking a fixed rank schedule (cycled past its end)."""
    schedule = tuple(ranks)
    if not schedule:
        raise ValueError("rank schedule must not be empty")
    return lambda step, dist: token_at_rank(dist, schedule[step % len(schedule)])


def run_trial(
    model,
    context: Sequence[int],
    config: SamplingConfig,
    source: EntropySource,
    *,
    payload: Optional[AttackPayload] = None,
    selector: Optional[TargetSelector] = None,
    steps: Optional[int] = None,
) -> TrialResult:
    """Run one scored trial: L autoregressive steps, all-or-nothing match.

    Targets come from a fixed ``payload`` or a per-step ``selector`` over the
    current distribution. A hijacked source is armed with each step's target;
    honest sources just draw. The emitted token (matched or not) extends the
    context.
    """
    if (payload is None) == (selector is None):
        raise ValueError("exactly one of payload or selector is required")
    if payload is not None:
        vocab = getattr(model, "vocab_size", None)
        if vocab is not None and any(t >= vocab for t in payload.target_tokens):
            raise ValueError("payload targets outside the model vocabulary")
        length = len(payload)
    else:
        if steps is None or steps < 1:
            raise ValueError("selector trials need a positive step count")
        length = steps

    hijacked = isinstance(source, HijackedSource)
    ctx = list(context)
    records: List[TrialStep] = []
    for i in range(length):
        logits = model.next_logits(ctx)
        dist = build_distribution(logits, config)
        target = payload.target_tokens[i] if payload is not None else selector(i, dist)
        if hijacked:
            source.arm(target)
        u = source.next_unit(dist)
        emitted = sample(dist, u)
        prob = float(dist.probs[target]) if target < dist.vocab_size else 0.0
        records.append(
            TrialStep(
                target=target,
                emitted=emitted,
                target_prob=prob,
                u=u,
                matched=emitted == target,
                crafted=hijacked and source.last_crafted,
                hijack_cause=source.last_cause if hijacked else None,
            )
        )
        ctx.append(emitted)
    return TrialResult.from_steps(records)


def replay_pipeline(model, context: Sequence[int], emitted: Sequence[int], config: SamplingConfig):
    """Recompute per-step logits and distributions for a given emitted sequence.

    Used to check that an attacked run leaves no trace in the distributions: a
    trial that emitted these tokens honestly computes bit-identical arrays.
    """
    ctx = list(context)
    steps = []
    for token in emitted:
        logits = model.next_logits(ctx)
        dist = build_distribution(logits, config)
        steps.append((logits, dist))
        ctx.append(token)
    return steps


# --- experiment grids --------------------------------------------------------

# Default grid geometry: 3 temperatures x 3 nucleus settings x 20 contexts x 3
# seeds = 540 trials. The rank ladder spans the distribution head to its mid
# tail; the trials listed in DEFAULT_DEEP_TRIALS swap the last step for the
# deepest surviving rank, which at the sharpest temperature (and an unfiltered
# nucleus) sits below single-precision machine epsilon.
DEFAULT_TEMPERATURES = (0.7, 1.0, 1.5)
DEFAULT_TOP_PS = (0.9, 0.95, 1.0)
DEFAULT_PROMPT_COUNT = 20
DEFAULT_SEEDS = (1, 2, 3)
DEFAULT_RANK_LADDER = (0, 10, 100, 500)
DEFAULT_DEEP_RANK = 999
DEFAULT_DEEP_TRIALS = ((4, 1), (16, 2))  # (prompt index, seed) pairs
DEFAULT_MODEL_SEED = 32
DEFAULT_VOCAB = 1000
DEFAULT_CONTEXT_LENGTH = 8


@dataclass(frozen=True)
class CellReport:
    temperature: float
    top_p: float
    trials: int
    successes: int

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


@dataclass(frozen=True)
class TrialRecord:
    temperature: float
    top_p: float
    prompt_index: int
    seed: int
    result: TrialResult


@dataclass
class GridReport:
    cells: List[CellReport]
    trials: List[TrialRecord] = field(repr=False, default_factory=list)

    @property
    def total_trials(self) -> int:
        return sum(c.trials for c in self.cells)

    @property
    def total_successes(self) -> int:
        return sum(c.successes for c in self.cells)

    @property
    def overall_rate(self) -> float:
        return self.total_successes / self.total_trials if self.total_trials else 0.0

    def failure_causes(self) -> List[FailureCause]:
        return [r.result.failure_cause for r in self.trials if not r.result.success]

    def format_table(self) -> str:
        lines = [f"{'Temperature':>11}  {'Top-p':>6}  {'Trials':>6}  {'Successes':>9}  {'Rate (%)':>8}"]
        for cell in self.cells:
            lines.append(
                f"{cell.temperature:>11.2f}  {cell.top_p:>6.2f}  {cell.trials:>6d}  "
                f"{cell.successes:>9d}  {100.0 * cell.rate:>8.1f}"
            )
        lines.append(
            f"{'Overall':>11}  {'':>6}  {self.total_trials:>6d}  {self.total_successes:>9d}  "
            f"{100.0 * self.overall_rate:>8.1f}"
        )
        return "\n".join(lines)


def grid_rank_schedule(
    prompt_index: int,
    seed: int,
    payload_len: int,
    *,
    ladder: Sequence[int] = DEFAULT_RANK_LADDER,
    deep_trials: Sequence[Tuple[int, int]] = DEFAULT_DEEP_TRIALS,
    deep_rank: int = DEFAULT_DEEP_RANK,
) -> Tuple[int, ...]:
    """Rank schedule for one (prompt, seed) trial; designated pairs end deep."""
    ranks = [ladder[i % len(ladder)] for i in range(payload_len)]
    if (prompt_index, seed) in set(deep_trials):
        ranks[-1] = deep_rank
    return tuple(ranks)


def run_grid(
    model,
    contexts: Sequence[Sequence[int]],
    *,
    temperatures: Sequence[float] = DEFAULT_TEMPERATURES,
    top_ps: Sequence[float] = DEFAULT_TOP_PS,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    payload_len: int = 4,
    config: Optional[SamplingConfig] = None,
    rank_ladder: Sequence[int] = DEFAULT_RANK_LADDER,
    deep_trials: Sequence[Tuple[int, int]] = DEFAULT_DEEP_TRIALS,
    deep_rank: int = DEFAULT_DEEP_RANK,
) -> GridReport:
    """Hijacked-trial sweep over every (temperature, top_p, context, seed) cell."""
    if not temperatures or not top_ps:
        raise ValueError("temperature and top_p sets must be non-empty")
    if not contexts:
        raise ValueError("prompt context list must be non-empty")
    if not seeds:
        raise ValueError("seed list must be non-empty")
    if payload_len < 1:
        raise ValueError("payload length must be >= 1")
    base = config or SamplingConfig()

    cells: List[CellReport] = []
    trials: List[TrialRecord] = []
    for temperature in temperatures:
        for top_p in top_ps:
            cell_config = SamplingConfig(
                temperature=temperature,
                top_k=base.top_k,
                top_p=top_p,
                precision=base.precision,
                convention=base.convention,
            )
            successes = 0
            count = 0
            for prompt_index, context in enumerate(contexts):
                for seed in seeds:
                    ranks = grid_rank_schedule(
                        prompt_index,
                        seed,
                        payload_len,
                        ladder=rank_ladder,
                        deep_trials=deep_trials,
                        deep_rank=deep_rank,
                    )
                    source = HijackedSource(MtInlineSource(seed_init(seed), cell_config.convention))
                    result = run_trial(
                        model,
                        context,
                        cell_config,
                        source,
                        selector=rank_selector(ranks),
                        steps=payload_len,
                    )
                    successes += result.success
                    count += 1
                    trials.append(TrialRecord(temperature, top_p, prompt_index, seed, result))
            cells.append(CellReport(temperature, top_p, count, successes))
    return GridReport(cells=cells, trials=trials)


@dataclass
class DefenseReport:
    """Side-by-side injection rates: attacked baseline vs. defended sampler."""

    trials: int
    hijacked_successes: int
    defended_successes: int
    hijacked_records: List[TrialResult] = field(repr=False, default_factory=list)
    defended_records: List[TrialResult] = field(repr=False, default_factory=list)
    defended_kind: str = "pool"

    def format_table(self) -> str:
        hij = f"{self.hijacked_successes}/{self.trials}"
        dfd = f"{self.defended_successes}/{self.trials}"
        return (
            f"{'Source':>10}  {'Injected':>9}  {'Rate (%)':>8}\n"
            f"{'hijacked':>10}  {hij:>9}  {100.0 * self.hijacked_successes / self.trials:>8.1f}\n"
            f"{self.defended_kind:>10}  {dfd:>9}  {100.0 * self.defended_successes / self.trials:>8.1f}"
        )


def low_probability_selector(p_cap: float, eps_floor: float) -> TargetSelector:
    """Select the most probable token whose probability is still below ``p_cap``.

    Keeps per-step target probabilities inside (eps_floor, p_cap) so that the
    attacked run can always craft its draw while an honest run succeeds with
    probability below p_cap per step.
    """

    def select(step: int, dist: TokenDistribution) -> int:
        order = np.argsort(-dist.probs, kind="stable")
        probs = dist.probs[order]
        eligible = np.nonzero((probs < p_cap) & (probs > eps_floor))[0]
        if eligible.size == 0:
            raise AttackError(f"no token with probability in ({eps_floor:g}, {p_cap:g})")
        return int(order[eligible[0]])

    return select


def run_defense_benchmark(
    model,
    contexts: Sequence[Sequence[int]],
    config: SamplingConfig,
    defended_source: EntropySource,
    *,
    trials: int = 100,
    payload_len: int = 3,
    p_cap: float = 0.01,
    seed_base: int = 1000,
) -> DefenseReport:
    """Paired benchmark: hijacked MT baseline vs. an unpredictable source.

    Every trial targets tokens with per-step probability below ``p_cap``; with
    payload_len >= 3 the chance of an honest run matching a whole payload is
    bounded by p_cap**payload_len.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if payload_len < 1:
        raise ValueError("payload_len must be >= 1")
    selector = low_probability_selector(p_cap, config.precision.eps)

    hijacked_records: List[TrialResult] = []
    defended_records: List[TrialResult] = []
    for t in range(trials):
        context = contexts[t % len(contexts)]
        hijack = HijackedSource(MtInlineSource(seed_init(seed_base + t), config.convention))
        hijacked_records.append(
            run_trial(model, context, config, hijack, selector=selector, steps=payload_len)
        )
        defended_records.append(
            run_trial(model, context, config, defended_source, selector=selector, steps=payload_len)
        )
    return DefenseReport(
        trials=trials,
        hijacked_successes=sum(r.success for r in hijacked_records),
        defended_successes=sum(r.success for r in defended_records),
        hijacked_records=hijacked_records,
        defended_records=defended_records,
        defended_kind=defended_source.kind.value,
    )


@dataclass(frozen=True)
class ModelSuiteEntry:
    label: str
    trials: int
    successes: int

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


def run_model_suite(
    models: Dict[str, object],
    contexts: Sequence[Sequence[int]],
    *,
    temperatures: Sequence[float] = DEFAULT_TEMPERATURES,
    top_p: float = 0.95,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    payload_len: int = 4,
    precision=None,
    rank_ladder: Sequence[int] = (0, 5, 25, 50),
) -> List[ModelSuiteEntry]:
    """Hijack rate per model over a fixed configuration subset.

    Each model runs len(temperatures) * len(contexts) * len(seeds) trials with
    a shallow rank ladder (every target comfortably above machine epsilon), so
    the injection rate isolates the mechanism from the distribution source.
    """
    from hijacklab.sampling import Precision

    precision = precision or Precision.SINGLE
    entries: List[ModelSuiteEntry] = []
    for label, model in models.items():
        successes = 0
        count = 0
        for temperature in temperatures:
            config = SamplingConfig(temperature=temperature, top_p=top_p, precision=precision)
            for context in contexts:
                for seed in seeds:
                    source = HijackedSource(MtInlineSource(seed_init(seed), config.convention))
                    result = run_trial(
                        model,
                        context,
                        config,
                        source,
                        selector=rank_selector(rank_ladder),
                        steps=payload_len,
                    )
                    successes += result.success
                    count += 1
        entries.append(ModelSuiteEntry(label=label, trials=count, successes=successes))
    return entries

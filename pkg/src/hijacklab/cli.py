"""Command-line front door wiring the lab's modules into reproducible experiments.

Exit codes: 0 success, 2 usage errors (bad flags or malformed inputs that make
the request unrunnable), 1 runtime failures.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from hijacklab import __version__
from hijacklab.attack import (
    DEFAULT_CONTEXT_LENGTH,
    DEFAULT_DEEP_TRIALS,
    DEFAULT_MODEL_SEED,
    DEFAULT_PROMPT_COUNT,
    DEFAULT_VOCAB,
    run_defense_benchmark,
    run_grid,
)
from hijacklab.bench import bench_latency
from hijacklab.entropy import (
    EntropyError,
    MtInlineSource,
    OsEntropySource,
    PoolFormatError,
    fill_tag_name,
    generate_pool,
    open_pool,
    read_pool_header,
)
from hijacklab.manifest import RunManifest, trial_record, write_records
from hijacklab.mt19937 import generate_u32, recover_state, seed_init
from hijacklab.model import SyntheticModel, synthetic_contexts
from hijacklab.sampling import Precision, SamplingConfig
from hijacklab.stats import chi_square_uniformity, monobit

POOL_DIR_ENV = "HIJACKLAB_POOL_DIR"

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    """Bad input that makes the request unrunnable (exit code 2)."""


def _resolve_pool_path(value: str) -> str:
    """Bare pool filenames resolve into $HIJACKLAB_POOL_DIR when it is set."""
    pool_dir = os.environ.get(POOL_DIR_ENV)
    if pool_dir and os.path.basename(value) == value:
        return os.path.join(pool_dir, value)
    return value


def _parse_floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part != ""]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _make_source(label: str, seed: int, convention):
    if label == "os":
        return OsEntropySource()
    if label == "mt":
        return MtInlineSource(seed_init(seed), convention)
    if label.startswith("pool:"):
        return open_pool(_resolve_pool_path(label.split(":", 1)[1]))
    raise UsageError(f"unknown source {label!r} (expected os, mt, or pool:PATH)")


# --- recover ------------------------------------------------------------------


def _cmd_recover(args) -> int:
    predict = args.predict
    if args.observe_file is not None:
        try:
            with open(args.observe_file, "r", encoding="utf-8") as fh:
                observed = [int(line.strip()) for line in fh if line.strip()]
        except (OSError, ValueError) as exc:
            raise UsageError(f"malformed observation file: {exc}") from exc
        if len(observed) != 624:
            raise UsageError(f"observation file must hold exactly 624 outputs, got {len(observed)}")
        state = recover_state(observed, offset=args.offset)
        predicted = generate_u32(state, predict)
        print(f"recovered state from 624 observed outputs (offset {args.offset})")
        preview = ", ".join(str(int(v)) for v in predicted[: min(8, predict)])
        print(f"next {predict} outputs begin: {preview}")
        return 0

    truth = seed_init(args.seed)
    observed = generate_u32(truth, 624)
    state = recover_state(observed, offset=0)
    predicted = generate_u32(state, predict)
    actual = generate_u32(truth, predict)
    matches = int(np.count_nonzero(predicted == actual))
    print(f"recovered state from 624 outputs of seed {args.seed}")
    print(f"{matches}/{predict} predicted")
    if predict:
        print(f"first predicted output: {int(predicted[0])}")
    return 0 if matches == predict else RUNTIME_ERROR


# --- attack-grid ----------------------------------------------------------------


def _cmd_attack_grid(args) -> int:
    taus = _parse_floats(args.taus)
    top_ps = _parse_floats(args.top_ps)
    seeds = [int(s) for s in _parse_floats(args.seeds)]
    if not taus or not top_ps or not seeds:
        raise UsageError("temperature, top-p, and seed lists must be non-empty")
    if args.prompts < 1:
        raise UsageError("need at least one prompt")
    if args.payload_len < 1:
        raise UsageError("payload length must be >= 1")
    precision = Precision.SINGLE if args.precision == "single" else Precision.DOUBLE

    model = SyntheticModel(model_seed=args.model_seed, vocab_size=args.vocab, concentration=args.concentration)
    contexts = synthetic_contexts(args.prompts, DEFAULT_CONTEXT_LENGTH, args.vocab)
    config = SamplingConfig(precision=precision)
    report = run_grid(
        model,
        contexts,
        temperatures=taus,
        top_ps=top_ps,
        seeds=seeds,
        payload_len=args.payload_len,
        config=config,
    )
    print(report.format_table())

    if args.out:
        records = [
            RunManifest(
                command="attack-grid",
                configuration={
                    "vocab": args.vocab,
                    "model_seed": args.model_seed,
                    "concentration": args.concentration,
                    "temperatures": taus,
                    "top_ps": top_ps,
                    "prompts": args.prompts,
                    "payload_len": args.payload_len,
                    "precision": precision.value,
                    "contexts": contexts,
                    "deep_trials": list(DEFAULT_DEEP_TRIALS),
                },
                seeds=seeds,
                output_paths=[args.out],
            ).to_record()
        ]
        for rec in sorted(report.trials, key=lambda r: (r.temperature, r.top_p, r.prompt_index, r.seed)):
            records.append(
                trial_record(
                    "trial",
                    rec.result,
                    temperature=rec.temperature,
                    top_p=rec.top_p,
                    prompt_index=rec.prompt_index,
                    seed=rec.seed,
                )
            )
        for cell in report.cells:
            records.append(
                {
                    "record": "cell",
                    "temperature": cell.temperature,
                    "top_p": cell.top_p,
                    "trials": cell.trials,
                    "successes": cell.successes,
                    "rate": cell.rate,
                }
            )
        records.append(
            {
                "record": "summary",
                "trials": report.total_trials,
                "successes": report.total_successes,
                "rate": report.overall_rate,
            }
        )
        write_records(args.out, records)
        print(f"manifest written to {args.out}")
    return 0


# --- defend ---------------------------------------------------------------------


def _cmd_defend(args) -> int:
    if args.trials < 1:
        raise UsageError("trials must be >= 1")
    if args.payload_len < 3:
        raise UsageError("defense benchmark needs payload length >= 3 for the chance bound")
    model = SyntheticModel(model_seed=args.model_seed, vocab_size=args.vocab)
    contexts = synthetic_contexts(DEFAULT_PROMPT_COUNT, DEFAULT_CONTEXT_LENGTH, args.vocab)
    config = SamplingConfig(precision=Precision.SINGLE)
    pool = open_pool(_resolve_pool_path(args.pool))
    try:
        report = run_defense_benchmark(
            model,
            contexts,
            config,
            pool,
            trials=args.trials,
            payload_len=args.payload_len,
        )
    finally:
        pool.close()
    print(report.format_table())
    if pool.wrapped:
        print("warning: pool wrapped around; value reuse weakens the defense")
    if args.out:
        records = [
            RunManifest(
                command="defend",
                configuration={
                    "vocab": args.vocab,
                    "model_seed": args.model_seed,
                    "trials": args.trials,
                    "payload_len": args.payload_len,
                    "pool_wrapped": pool.wrapped,
                },
                pool_paths=[pool.path],
                output_paths=[args.out],
            ).to_record()
        ]
        for i, rec in enumerate(report.hijacked_records):
            records.append(trial_record("trial", rec, side="hijacked", index=i))
        for i, rec in enumerate(report.defended_records):
            records.append(trial_record("trial", rec, side="defended", index=i))
        records.append(
            {
                "record": "summary",
                "trials": report.trials,
                "hijacked_successes": report.hijacked_successes,
                "defended_successes": report.defended_successes,
            }
        )
        write_records(args.out, records)
        print(f"manifest written to {args.out}")
    return 0


# --- gen-pool -------------------------------------------------------------------


def _cmd_gen_pool(args) -> int:
    if args.count < 1:
        raise UsageError("count must be >= 1")
    if args.source == "os":
        source = OsEntropySource()
    elif args.source == "mt":
        source = MtInlineSource(seed_init(args.seed))
    else:
        raise UsageError(f"unknown fill source {args.source!r} (expected os or mt)")
    out = _resolve_pool_path(args.out)
    reader = generate_pool(args.count, source, out)
    reader.close()
    size = os.path.getsize(out)
    print(f"pool written: {out} ({args.count} values, {size} bytes, fill={args.source})")
    return 0


# --- certify --------------------------------------------------------------------


def _cmd_certify(args) -> int:
    if args.pool is not None:
        path = _resolve_pool_path(args.pool)
        count, tag = read_pool_header(path)
        take = min(args.samples, count)
        with open_pool(path) as pool:
            samples = pool.next_block(take)
        print(f"pool {path}: {count} values, fill={fill_tag_name(tag)}, testing {take}")
    else:
        source = _make_source(args.source, args.seed, SamplingConfig().convention)
        samples = source.next_block(args.samples)
        print(f"source {args.source}: testing {args.samples} samples")

    chi = chi_square_uniformity(samples, bins=args.bins)
    verdict = "reject" if chi.rejects(alpha=0.01) else "fail to reject"
    print(
        f"chi-square: statistic={chi.statistic:.2f} dof={chi.degrees_of_freedom} "
        f"p={chi.p_value:.6f} -> {verdict} uniformity at alpha=0.01"
    )
    mono = monobit(samples)
    print(
        f"monobit: bits={mono.bit_count} ones={mono.ones_fraction:.6f} "
        f"z={mono.z_score:.3f} -> {'pass' if mono.passed else 'fail'}"
    )
    return 0 if (not chi.rejects(alpha=0.01) and mono.passed) else RUNTIME_ERROR


# --- bench ----------------------------------------------------------------------


def _cmd_bench(args) -> int:
    if args.iters <= args.warmup:
        raise UsageError("iterations must exceed warmup")
    model = SyntheticModel(model_seed=args.model_seed, vocab_size=args.vocab)
    context = synthetic_contexts(1, DEFAULT_CONTEXT_LENGTH, args.vocab)[0]
    config = SamplingConfig(precision=Precision.SINGLE)
    source = _make_source(args.source, args.seed, config.convention)
    try:
        report = bench_latency(model, config, source, context, iterations=args.iters, warmup=args.warmup)
    finally:
        close = getattr(source, "close", None)
        if close:
            close()
    print(report.format_summary())
    return 0


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hijacklab",
        description="Sampling-layer PRNG hijack and buffered-entropy defense lab",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("recover", help="recover generator state from 624 outputs and predict forward")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--seed", type=int, help="run a self-contained demo from this seed")
    group.add_argument("--observe-file", help="text file with 624 observed 32-bit outputs, one per line")
    p.add_argument("--offset", type=int, default=0, help="block phase of the first observation")
    p.add_argument("--predict", type=int, default=10000, help="how many outputs to predict")
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("attack-grid", help="hijack-rate sweep over sampling configurations")
    p.add_argument("--vocab", type=int, default=DEFAULT_VOCAB)
    p.add_argument("--taus", default="0.7,1.0,1.5")
    p.add_argument("--top-ps", dest="top_ps", default="0.9,0.95,1.0")
    p.add_argument("--prompts", type=int, default=DEFAULT_PROMPT_COUNT)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--payload-len", type=int, default=4)
    p.add_argument("--precision", choices=("single", "double"), default="single")
    p.add_argument("--model-seed", type=int, default=DEFAULT_MODEL_SEED)
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--out", help="manifest output path (JSON lines)")
    p.set_defaults(func=_cmd_attack_grid)

    p = sub.add_parser("defend", help="paired benchmark: hijacked baseline vs pool-defended sampling")
    p.add_argument("--pool", required=True, help="pool file to defend with")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--payload-len", type=int, default=3)
    p.add_argument("--vocab", type=int, default=DEFAULT_VOCAB)
    p.add_argument("--model-seed", type=int, default=DEFAULT_MODEL_SEED)
    p.add_argument("--out", help="manifest output path (JSON lines)")
    p.set_defaults(func=_cmd_defend)

    p = sub.add_parser("gen-pool", help="write a pool file of unit-interval float64 values")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--source", choices=("os", "mt"), default="os")
    p.add_argument("--seed", type=int, default=5489, help="seed for the mt fill source")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_pool)

    p = sub.add_parser("certify", help="chi-square uniformity plus monobit check")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--pool", help="pool file to certify")
    group.add_argument("--source", help="live source: os, mt, or pool:PATH")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--seed", type=int, default=5489, help="seed when certifying the mt source")
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("bench", help="per-token latency of one sampling step")
    p.add_argument("--source", default="mt", help="os, mt, or pool:PATH")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--vocab", type=int, default=DEFAULT_VOCAB)
    p.add_argument("--model-seed", type=int, default=DEFAULT_MODEL_SEED)
    p.add_argument("--seed", type=int, default=5489)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (PoolFormatError, EntropyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())

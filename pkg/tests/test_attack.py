"""Draw crafting, hijacked-source behavior, trial scoring, grids, defense pairing."""

import numpy as np
import pytest

from hijacklab.attack import (
    AttackError,
    AttackPayload,
    EpsilonUnderflowError,
    FailureCause,
    HijackedSource,
    TargetUnreachableError,
    craft_u,
    low_probability_selector,
    rank_selector,
    replay_pipeline,
    run_defense_benchmark,
    run_grid,
    run_model_suite,
    run_trial,
    token_at_rank,
)
from hijacklab.entropy import MtInlineSource, generate_pool
from hijacklab.model import SyntheticModel, synthetic_contexts
from hijacklab.mt19937 import seed_init
from hijacklab.sampling import (
    Precision,
    SamplingConfig,
    TokenDistribution,
    build_distribution,
    sample,
    softmax,
    top_p_filter,
)

EPS32 = float(np.finfo(np.float32).eps)


def dist_of(probs, precision=Precision.SINGLE):
    return TokenDistribution.from_probs(np.asarray(probs, dtype=np.float64), precision)


class TestCraftU:
    def test_degenerate_distribution(self):
        dist = dist_of([1.0, 0.0, 0.0])
        u = craft_u(dist, 0)
        assert u == 0.5
        assert sample(dist, u) == 0

    def test_quarters_midpoint(self):
        dist = dist_of([0.25, 0.25, 0.25, 0.25])
        u = craft_u(dist, 2)
        assert u == 0.625
        assert sample(dist, u) == 2

    def test_masked_target_unreachable(self):
        dist = dist_of([0.6, 0.4, 0.0])
        with pytest.raises(TargetUnreachableError):
            craft_u(dist, 2)

    def test_below_single_epsilon_underflows(self):
        p = 5e-8
        dist = dist_of([1.0 - p, p])
        with pytest.raises(EpsilonUnderflowError):
            craft_u(dist, 1)

    def test_same_probability_fine_in_double_precision(self):
        p = 5e-8
        dist = dist_of([1.0 - p, p], Precision.DOUBLE)
        assert sample(dist, craft_u(dist, 1)) == 1

    def test_out_of_vocabulary_target_rejected(self):
        dist = dist_of([1.0])
        with pytest.raises(ValueError):
            craft_u(dist, 1)

    def test_randomized_pairs_always_hit(self):
        rng = np.random.default_rng(606)
        hits = 0
        trials = 0
        for _ in range(200):
            vocab = int(rng.integers(2, 500))
            dist = softmax(rng.normal(0, 3, size=vocab), Precision.SINGLE)
            eligible = np.nonzero(dist.probs > 1e-6)[0]
            for t in rng.choice(eligible, size=50):
                trials += 1
                hits += sample(dist, craft_u(dist, int(t))) == int(t)
        assert hits == trials == 10_000

    def test_epsilon_dichotomy_near_the_boundary(self):
        # Either the probability is at or below machine epsilon (flagged) or the
        # crafted midpoint must select the target; there is no third outcome.
        for p in (EPS32 * 0.5, EPS32, np.nextafter(np.float32(EPS32), np.float32(1)), EPS32 * 1.5, 2e-7, 1e-6):
            for filler_position in ("head", "tail"):
                p64 = float(p)
                rest = 1.0 - p64
                probs = [rest, p64] if filler_position == "head" else [p64, rest]
                target = 1 if filler_position == "head" else 0
                dist = dist_of(probs)
                stored = float(dist.probs[target])
                if stored <= EPS32:
                    with pytest.raises(EpsilonUnderflowError):
                        craft_u(dist, target)
                else:
                    assert sample(dist, craft_u(dist, target)) == target

    def test_high_cdf_position_near_epsilon(self):
        # Worst rounding pressure: a tiny interval crammed against cdf ~= 1.
        p = 3e-7
        dist = dist_of([0.5, 0.5 - p - 1e-9, p, 1e-9])
        assert float(dist.probs[2]) > EPS32
        assert sample(dist, craft_u(dist, 2)) == 2


class TestHijackedSource:
    def test_armed_step_emits_target(self):
        dist = dist_of([0.1, 0.2, 0.3, 0.4])
        source = HijackedSource(MtInlineSource(seed_init(1)))
        for target in range(4):
            source.arm(target)
            assert sample(dist, source.next_unit(dist)) == target

    def test_disabled_is_byte_identical_to_inner(self):
        dist = dist_of([0.5, 0.5])
        hijacked = HijackedSource(MtInlineSource(seed_init(44)), enabled=False)
        honest = MtInlineSource(seed_init(44))
        for _ in range(500):
            hijacked.arm(0)
            assert hijacked.next_unit(dist) == honest.next_unit()

    def test_unarmed_passes_through(self):
        hijacked = HijackedSource(MtInlineSource(seed_init(45)))
        honest = MtInlineSource(seed_init(45))
        assert [hijacked.next_unit() for _ in range(100)] == [honest.next_unit() for _ in range(100)]

    def test_phase_preserved_across_hijacked_steps(self):
        dist = dist_of([0.25, 0.25, 0.25, 0.25])
        inner = MtInlineSource(seed_init(5489))
        source = HijackedSource(inner)
        for k in range(50):
            source.arm(k % 4)
            source.next_unit(dist)
        assert inner.draws == 50
        assert inner.state.cursor == 100  # two raw outputs per unit draw

    def test_underflow_falls_through_to_inner_value(self):
        p = 5e-8
        dist = dist_of([1.0 - p, p])
        inner = MtInlineSource(seed_init(2))
        expected = MtInlineSource(seed_init(2)).next_unit()
        source = HijackedSource(inner)
        source.arm(1)
        u = source.next_unit(dist)
        assert u == expected
        assert source.last_cause == "epsilon_underflow"
        assert not source.last_crafted

    def test_unreachable_recorded_not_raised(self):
        dist = dist_of([1.0, 0.0])
        source = HijackedSource(MtInlineSource(seed_init(3)))
        source.arm(1)
        source.next_unit(dist)
        assert source.last_cause == "target_unreachable"


class TestRunTrial:
    model = SyntheticModel(model_seed=32, vocab_size=1000)
    contexts = synthetic_contexts(20, 8, 1000)
    config = SamplingConfig(precision=Precision.SINGLE)

    def test_hijacked_payload_trial_succeeds(self):
        payload = AttackPayload((5, 17, 3))
        source = HijackedSource(MtInlineSource(seed_init(1)))
        result = run_trial(self.model, self.contexts[0], self.config, source, payload=payload)
        assert result.success and result.failure_cause is None
        assert [s.emitted for s in result.steps] == [5, 17, 3]
        assert all(s.crafted for s in result.steps)

    def test_emitted_tokens_extend_context_even_on_mismatch(self):
        # Honest source: emitted tokens almost surely differ from targets, and
        # each step's record must still chain off the previously emitted token.
        source = MtInlineSource(seed_init(9))
        result = run_trial(
            self.model, self.contexts[1], self.config, source, payload=AttackPayload((1, 2, 3))
        )
        replayed = replay_pipeline(self.model, self.contexts[1], [s.emitted for s in result.steps], self.config)
        for step, (logits, dist) in zip(result.steps, replayed):
            assert sample(dist, step.u) == step.emitted

    def test_payload_must_fit_vocabulary(self):
        with pytest.raises(ValueError):
            run_trial(
                self.model,
                self.contexts[0],
                self.config,
                MtInlineSource(seed_init(1)),
                payload=AttackPayload((1000,)),
            )

    def test_needs_exactly_one_target_argument(self):
        source = MtInlineSource(seed_init(1))
        with pytest.raises(ValueError):
            run_trial(self.model, self.contexts[0], self.config, source)
        with pytest.raises(ValueError):
            run_trial(
                self.model,
                self.contexts[0],
                self.config,
                source,
                payload=AttackPayload((1,)),
                selector=rank_selector([0]),
            )

    def test_honest_low_probability_payload_fails(self):
        source = MtInlineSource(seed_init(31))
        selector = low_probability_selector(0.01, EPS32)
        result = run_trial(self.model, self.contexts[2], self.config, source, selector=selector, steps=3)
        assert not result.success
        assert result.failure_cause is FailureCause.MISMATCH

    def test_honest_coin_flip_rate(self):
        # Single-step target with probability one half: the success rate over
        # 1000 honest trials sits near 0.5.
        dist = softmax(np.array([0.0, 0.0]), Precision.SINGLE)
        source = MtInlineSource(seed_init(606))
        hits = sum(sample(dist, source.next_unit()) == 0 for _ in range(1000))
        assert 450 <= hits <= 550

    def test_honest_success_rate_matches_step_probability_product(self):
        # Two-step payloads with moderate probabilities: empirical all-or-nothing
        # rate should track the product of per-step probabilities.
        class TwoTokenModel:
            vocab_size = 2

            def next_logits(self, context):
                return np.array([0.0, np.log(0.6 / 0.4)])

        model = TwoTokenModel()
        config = SamplingConfig(precision=Precision.DOUBLE)
        source = MtInlineSource(seed_init(8080))
        wins = 0
        trials = 4000
        for _ in range(trials):
            result = run_trial(model, [], config, source, payload=AttackPayload((1, 1)))
            wins += result.success
        expected = 0.6 * 0.6
        sigma = (trials * expected * (1 - expected)) ** 0.5
        assert abs(wins - trials * expected) < 5 * sigma


class TestInvarianceAndStealth:
    model = SyntheticModel(model_seed=32, vocab_size=1000)
    context = synthetic_contexts(1, 8, 1000)[0]

    def test_success_invariant_to_hyperparameters_when_target_survives(self):
        # Pick a token comfortably inside every nucleus: the argmax.
        for temperature in (0.7, 1.0, 1.5):
            for top_p in (0.9, 0.95, 1.0):
                for top_k in (None, 50):
                    config = SamplingConfig(
                        temperature=temperature, top_k=top_k, top_p=top_p, precision=Precision.SINGLE
                    )
                    source = HijackedSource(MtInlineSource(seed_init(77)))
                    result = run_trial(
                        self.model, self.context, config, source, selector=rank_selector([0, 1, 2]), steps=3
                    )
                    assert result.success, (temperature, top_p, top_k)

    def test_masked_target_is_flagged_never_silently_wrong(self):
        config = SamplingConfig(temperature=0.7, top_p=0.9, precision=Precision.SINGLE)
        logits = self.model.next_logits(self.context)
        dist = build_distribution(logits, config)
        support = int(np.count_nonzero(dist.probs))
        assert support < 1000
        masked_token = int(np.argsort(-dist.probs, kind="stable")[support])  # just outside the nucleus
        source = HijackedSource(MtInlineSource(seed_init(5)))
        result = run_trial(
            self.model, self.context, config, source,
            payload=AttackPayload((masked_token,)),
        )
        assert not result.success
        assert result.steps[0].hijack_cause == "target_unreachable"

    def test_hijacked_trial_leaves_distributions_untouched(self):
        config = SamplingConfig(temperature=1.0, top_p=0.95, precision=Precision.SINGLE)
        source = HijackedSource(MtInlineSource(seed_init(12)))
        result = run_trial(
            self.model, self.context, config, source, selector=rank_selector([3, 14, 100, 7]), steps=4
        )
        assert result.success
        emitted = [s.emitted for s in result.steps]
        honest = replay_pipeline(self.model, self.context, emitted, config)
        ctx = list(self.context)
        for step, (logits, dist) in zip(result.steps, honest):
            attacked_logits = self.model.next_logits(ctx)
            attacked_dist = build_distribution(attacked_logits, config)
            assert attacked_logits.tobytes() == logits.tobytes()
            assert attacked_dist.probs.tobytes() == dist.probs.tobytes()
            ctx.append(step.emitted)


class TestRankSelection:
    def test_rank_clamps_to_support(self):
        dist = top_p_filter(dist_of([0.5, 0.3, 0.15, 0.05], Precision.DOUBLE), 0.8)
        assert int(np.count_nonzero(dist.probs)) == 2
        assert token_at_rank(dist, 999) == 1  # least probable survivor
        assert token_at_rank(dist, 0) == 0

    def test_rank_ties_break_to_lower_id(self):
        dist = dist_of([0.25, 0.25, 0.25, 0.25])
        assert token_at_rank(dist, 0) == 0
        assert token_at_rank(dist, 3) == 3

    def test_empty_rank_schedule_rejected(self):
        with pytest.raises(ValueError):
            rank_selector([])


class TestGrid:
    model = SyntheticModel(model_seed=32, vocab_size=1000)
    contexts = synthetic_contexts(20, 8, 1000)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            run_grid(self.model, [])
        with pytest.raises(ValueError):
            run_grid(self.model, self.contexts, temperatures=[])
        with pytest.raises(ValueError):
            run_grid(self.model, self.contexts, seeds=[])

    def test_single_cell_grid(self):
        report = run_grid(
            self.model,
            self.contexts[:2],
            temperatures=(1.0,),
            top_ps=(1.0,),
            seeds=(1,),
            config=SamplingConfig(precision=Precision.SINGLE),
        )
        assert len(report.cells) == 1
        assert report.total_trials == 2

    def test_totals_equal_cell_sums(self):
        report = run_grid(
            self.model,
            self.contexts[:5],
            temperatures=(0.7, 1.5),
            top_ps=(0.9, 1.0),
            seeds=(1, 2),
            config=SamplingConfig(precision=Precision.SINGLE),
        )
        assert report.total_trials == sum(c.trials for c in report.cells) == 2 * 2 * 5 * 2
        assert report.total_successes == sum(c.successes for c in report.cells)
        assert len(report.trials) == report.total_trials

    def test_table_layout(self):
        report = run_grid(
            self.model,
            self.contexts[:1],
            temperatures=(1.0,),
            top_ps=(1.0,),
            seeds=(1,),
            config=SamplingConfig(precision=Precision.SINGLE),
        )
        table = report.format_table()
        assert "Temperature" in table and "Overall" in table


class TestDefenseBenchmark:
    def test_paired_rates(self, tmp_path):
        model = SyntheticModel(model_seed=32, vocab_size=1000)
        contexts = synthetic_contexts(20, 8, 1000)
        config = SamplingConfig(precision=Precision.SINGLE)
        pool = generate_pool(2_000, MtInlineSource(seed_init(777)), tmp_path / "d.pool")
        report = run_defense_benchmark(model, contexts, config, pool, trials=25, payload_len=3)
        pool.close()
        assert report.trials == 25
        assert report.hijacked_successes == 25
        assert report.defended_successes == 0
        probs = [s.target_prob for r in report.hijacked_records for s in r.steps]
        assert max(probs) < 0.01 and min(probs) > EPS32

    def test_selector_requires_candidates(self):
        selector = low_probability_selector(0.01, EPS32)
        dist = dist_of([1.0])
        with pytest.raises(AttackError):
            selector(0, dist)


class TestModelSuite:
    def test_three_models_all_perfect(self):
        models = {
            "plain": SyntheticModel(model_seed=101, vocab_size=1000, concentration=0.8),
            "tuned": SyntheticModel(model_seed=202, vocab_size=1000, concentration=1.0),
            "sharp": SyntheticModel(model_seed=303, vocab_size=1000, concentration=1.5),
        }
        contexts = synthetic_contexts(5, 8, 1000)
        entries = run_model_suite(models, contexts, seeds=(1, 2))
        for entry in entries:
            assert entry.trials == 3 * 5 * 2
            assert entry.successes == entry.trials
            assert entry.rate == 1.0


class TestPayloadValidation:
    def test_payload_length_and_sign(self):
        with pytest.raises(ValueError):
            AttackPayload(())
        with pytest.raises(ValueError):
            AttackPayload((-1,))
        assert len(AttackPayload((1, 2))) == 2

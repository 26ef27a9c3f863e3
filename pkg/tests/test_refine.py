"""Refinement tests: posterior updates, batching, MAP, and the full loop."""
import random

import pytest

from conftest import random_distribution
from pairprobe import (
    Budget,
    ConfigError,
    GroundTruth,
    MatchQuestion,
    OracleAnswer,
    Partition,
    PartitionDistribution,
    RecordPair,
    ScriptedOracle,
    SimulatedOracle,
    StopPolicy,
    Verdict,
    all_pairs,
    batch_update,
    candidate_questions,
    combine_components,
    entropy,
    enumerate_partitions,
    map_partition,
    pair_probability,
    posterior_update,
    run_loop,
    same_cluster,
    update_distribution,
)
from pairprobe.priors import BlockingComponent


def answer(x, y, verdict, tokens=10):
    return OracleAnswer(RecordPair(x, y), verdict, verdict.value, tokens)


def q(x, y, cost=10):
    return MatchQuestion(RecordPair(x, y), f"{x}?{y}", cost)


class TestPosteriorUpdate:
    def test_match_verdict_reweights_to_running_example(self, demo_dist):
        post = posterior_update(demo_dist, answer("c", "d", Verdict.MATCH), 0.9)
        assert [w for _, w in post.entries] == pytest.approx([0.9, 0.06, 0.04], abs=1e-9)

    def test_non_match_verdict(self, demo_dist):
        post = posterior_update(demo_dist, answer("c", "d", Verdict.NON_MATCH), 0.9)
        assert [w for _, w in post.entries] == pytest.approx([0.1, 0.54, 0.36], abs=1e-12)

    def test_uninformative_theta_is_identity(self, demo_dist):
        post = posterior_update(demo_dist, answer("c", "d", Verdict.MATCH), 0.5)
        assert [w for _, w in post.entries] == pytest.approx(
            [w for _, w in demo_dist.entries], abs=1e-12
        )

    def test_theta_bounds_enforced(self, demo_dist):
        for bad in (0.0, 1.0, -0.2, 1.3):
            with pytest.raises(ConfigError):
                posterior_update(demo_dist, answer("c", "d", Verdict.MATCH), bad)

    def test_theta_symmetry(self):
        """Match at theta equals NonMatch at (1 - theta)."""
        for seed in range(20):
            dist = random_distribution(seed)
            rng = random.Random(seed)
            pair = rng.choice(all_pairs(dist.universe))
            theta = rng.uniform(0.05, 0.95)
            via_match = posterior_update(dist, answer(pair.a, pair.b, Verdict.MATCH), theta)
            via_non = posterior_update(
                dist, answer(pair.a, pair.b, Verdict.NON_MATCH), 1.0 - theta
            )
            for (p1, w1), (p2, w2) in zip(via_match.entries, via_non.entries):
                assert p1 == p2 and w1 == pytest.approx(w2, abs=1e-12)

    def test_support_preservation(self):
        for seed in range(20):
            dist = random_distribution(seed)
            pair = all_pairs(dist.universe)[0]
            post = posterior_update(dist, answer(pair.a, pair.b, Verdict.MATCH), 0.9)
            for (_, before), (_, after) in zip(dist.entries, post.entries):
                assert (before == 0.0) == (after == 0.0)

    def test_posterior_normalized(self):
        for seed in range(20):
            dist = random_distribution(seed)
            pair = all_pairs(dist.universe)[-1]
            post = posterior_update(dist, answer(pair.a, pair.b, Verdict.NON_MATCH), 0.8)
            assert abs(post.total() - 1.0) <= 1e-9

    def test_expected_entropy_never_increases(self, demo_dist):
        """Averaged over the prior-induced answer distribution, entropy drops."""
        for pair in all_pairs(demo_dist.universe):
            for theta in (0.6, 0.9, 0.99):
                p_match_true = pair_probability(demo_dist, pair)
                p_say_match = p_match_true * theta + (1 - p_match_true) * (1 - theta)
                expected = 0.0
                for verdict, weight in (
                    (Verdict.MATCH, p_say_match),
                    (Verdict.NON_MATCH, 1.0 - p_say_match),
                ):
                    if weight == 0.0:
                        continue
                    post = posterior_update(demo_dist, answer(pair.a, pair.b, verdict), theta)
                    expected += weight * entropy(post, 2)
                assert expected <= entropy(demo_dist, 2) + 1e-12


class TestUpdateDistribution:
    def _product(self):
        c1 = enumerate_partitions(
            BlockingComponent(("a", "b"), {RecordPair("a", "b"): 0.8})
        )
        c2 = enumerate_partitions(
            BlockingComponent(("c", "d"), {RecordPair("c", "d"): 0.6})
        )
        return combine_components([c1, c2])

    def test_updates_only_owning_component(self):
        product = self._product()
        updated = update_distribution(product, answer("a", "b", Verdict.MATCH), 0.9)
        assert pair_probability(updated, RecordPair("a", "b")) > 0.8
        assert pair_probability(updated, RecordPair("c", "d")) == pytest.approx(0.6)

    def test_cross_component_answer_is_noop(self):
        product = self._product()
        updated = update_distribution(product, answer("a", "c", Verdict.MATCH), 0.9)
        assert updated is product


class TestBatchUpdate:
    def test_empty_batch_is_identity(self, demo_dist):
        assert batch_update(demo_dist, [], 0.9) is demo_dist

    def test_order_invariance(self):
        for seed in range(30):
            dist = random_distribution(seed)
            rng = random.Random(seed)
            pairs = all_pairs(dist.universe)
            rng.shuffle(pairs)
            answers = [
                answer(p.a, p.b, rng.choice((Verdict.MATCH, Verdict.NON_MATCH)))
                for p in pairs[:4]
            ]
            theta = rng.uniform(0.55, 0.95)
            forward = batch_update(dist, answers, theta)
            backward = batch_update(dist, list(reversed(answers)), theta)
            for (p1, w1), (p2, w2) in zip(forward.entries, backward.entries):
                assert p1 == p2 and w1 == pytest.approx(w2, abs=1e-12)

    def test_duplicate_pair_rejected(self, demo_dist):
        twice = [answer("c", "d", Verdict.MATCH), answer("c", "d", Verdict.MATCH)]
        with pytest.raises(ConfigError):
            batch_update(demo_dist, twice, 0.9)

    def test_certain_pair_update_is_identity(self):
        together = Partition.from_clusters([["a", "b", "c"]])
        merged_ab = Partition.from_clusters([["a", "b"], ["c"]])
        dist = PartitionDistribution(
            frozenset("abc"), ((together, 0.7), (merged_ab, 0.3))
        )
        # (a, b) is co-clustered in every entry: its marginal is exactly 1
        post = batch_update(dist, [answer("a", "b", Verdict.MATCH)], 0.9)
        assert [w for _, w in post.entries] == pytest.approx([0.7, 0.3], abs=1e-12)


class TestMapPartition:
    def test_fixture_map(self, demo_dist, demo_partitions):
        assert map_partition(demo_dist) == demo_partitions[0]

    def test_map_after_update(self, demo_dist, demo_partitions):
        post = posterior_update(demo_dist, answer("c", "d", Verdict.MATCH), 0.9)
        assert map_partition(post) == demo_partitions[0]
        assert post.probability_of(demo_partitions[0]) == pytest.approx(0.9, abs=1e-9)

    def test_uniform_tie_takes_canonical_first(self):
        p_together = Partition.from_clusters([["a", "b"]])
        p_apart = Partition.singletons(["a", "b"])
        dist = PartitionDistribution(frozenset("ab"), ((p_together, 0.5), (p_apart, 0.5)))
        assert map_partition(dist).canonical_key == min(
            p_together.canonical_key, p_apart.canonical_key
        )

    def test_product_map_merges_component_maps(self):
        c1 = enumerate_partitions(BlockingComponent(("a", "b"), {RecordPair("a", "b"): 0.8}))
        c2 = enumerate_partitions(BlockingComponent(("c", "d"), {RecordPair("c", "d"): 0.2}))
        best = map_partition(combine_components([c1, c2]))
        assert same_cluster(best, RecordPair("a", "b"))
        assert not same_cluster(best, RecordPair("c", "d"))


class TestRunLoop:
    def test_zero_budget_runs_zero_iterations(self, demo_dist, profile_records):
        final, trace = run_loop(
            demo_dist,
            None,
            ScriptedOracle({}),
            theta=0.9,
            budget=Budget(total=0),
            records=profile_records,
        )
        assert final is demo_dist
        assert trace.iterations == []
        assert trace.halt_reason == "budget-exhausted"
        assert trace.entropy_curve() == [(0, trace.initial_entropy)]

    def test_scripted_single_question_reproduces_posterior(self, demo_dist):
        oracle = ScriptedOracle({RecordPair("c", "d"): Verdict.MATCH})
        final, trace = run_loop(
            demo_dist,
            [q("c", "d")],
            oracle,
            theta=0.9,
            budget=Budget(total=100),
        )
        assert len(trace.iterations) == 1
        row = trace.iterations[0]
        assert row.entropy_after < row.entropy_before
        assert [w for _, w in final.entries] == pytest.approx([0.9, 0.06, 0.04], abs=1e-9)

    def test_failures_skip_questions_without_aborting(self, demo_dist, profile_records):
        # only (c, d) is scripted; every other selected question fails and is
        # retired, so the final distribution reflects exactly one update
        oracle = ScriptedOracle({RecordPair("c", "d"): Verdict.MATCH})
        final, trace = run_loop(
            demo_dist,
            None,
            oracle,
            theta=0.9,
            budget=Budget(total=10_000),
            stop=StopPolicy(min_entropy_drop=1e-6, max_iterations=50),
            records=profile_records,
        )
        assert [w for _, w in final.entries] == pytest.approx([0.9, 0.06, 0.04], abs=1e-9)
        assert any(row.failed_pairs for row in trace.iterations)

    def test_answered_pairs_never_reasked(self, demo_dist, profile_records):
        asked = []

        class CountingOracle:
            def ask(self, question):
                asked.append(question.pair)
                return OracleAnswer(question.pair, Verdict.MATCH, "MATCH", question.cost)

        run_loop(
            demo_dist,
            None,
            CountingOracle(),
            theta=0.9,
            budget=Budget(total=10_000),
            stop=StopPolicy(min_entropy_drop=0.0, max_iterations=100),
            records=profile_records,
        )
        assert len(asked) == len(set(asked))

    def test_trace_spend_is_cumulative_and_within_budget(self, demo_dist, profile_records):
        truth = GroundTruth(Partition.from_clusters([["a", "b"], ["c", "d"], ["e"]]))
        final, trace = run_loop(
            demo_dist,
            None,
            SimulatedOracle(truth, 0.9, seed=3),
            theta=0.9,
            budget=Budget(total=200),
            stop=StopPolicy(min_entropy_drop=0.0, max_iterations=50),
            records=profile_records,
        )
        spends = [row.tokens_spent_cumulative for row in trace.iterations]
        assert spends == sorted(spends)
        assert trace.tokens_spent <= 200 + max(c.cost for c in trace.iterations[0].questions)
        # the ledger total is exactly the sum of per-answer billed tokens
        billed = sum(a.tokens_billed for row in trace.iterations for a in row.answers)
        assert trace.tokens_spent == billed
        assert spends[-1] == trace.tokens_spent

    def test_scripted_replay_reproduces_final_distribution(self, profile_records):
        """Replaying a recorded trace gives a bit-identical final distribution."""
        comp_scores = {
            RecordPair("a", "b"): 0.7,
            RecordPair("b", "c"): 0.4,
            RecordPair("a", "c"): 0.5,
        }
        dist = enumerate_partitions(BlockingComponent(("a", "b", "c"), comp_scores))
        truth = GroundTruth(Partition.from_clusters([["a", "b"], ["c"]]))
        candidates = [q("a", "b"), q("b", "c"), q("a", "c")]
        live, trace = run_loop(
            dist,
            candidates,
            SimulatedOracle(truth, 0.8, seed=21),
            theta=0.8,
            budget=Budget(total=60),
            stop=StopPolicy(min_entropy_drop=0.0, max_iterations=10),
        )
        recorded = [a for row in trace.iterations for a in row.answers]
        replayed, _ = run_loop(
            dist,
            candidates,
            ScriptedOracle.from_answers(recorded),
            theta=0.8,
            budget=Budget(total=60),
            stop=StopPolicy(min_entropy_drop=0.0, max_iterations=10),
        )
        assert replayed.entries == live.entries

    def test_entropy_tends_down_end_to_end(self):
        """Seeded 20-record runs: final entropy at or below initial, allowing
        isolated noisy exceptions."""
        violations = 0
        for seed in range(20):
            rng = random.Random(seed)
            components = []
            truth_clusters = []
            rid = 0
            while rid < 20:
                size = rng.randint(2, 3)
                ids = tuple(f"r{i}" for i in range(rid, min(rid + size, 20)))
                rid += size
                scores = {}
                for i in range(len(ids)):
                    for j in range(i + 1, len(ids)):
                        scores[RecordPair(ids[i], ids[j])] = rng.uniform(0.3, 0.9)
                components.append(
                    enumerate_partitions(BlockingComponent(ids, scores))
                )
                truth_clusters.append(list(ids))
            product = combine_components(components)
            truth = GroundTruth(Partition.from_clusters(truth_clusters))
            candidates = [
                MatchQuestion(p, f"{p.a}|{p.b}", 10)
                for p in all_pairs(product.universe)
                if 0.0 < pair_probability(product, p) < 1.0
            ]
            final, trace = run_loop(
                product,
                candidates,
                SimulatedOracle(truth, 0.9, seed=seed),
                theta=0.9,
                budget=Budget(total=300),
                stop=StopPolicy(min_entropy_drop=0.0, max_iterations=40),
            )
            if trace.final_entropy > trace.initial_entropy:
                violations += 1
        assert violations <= 2

    def test_parallel_asks_match_sequential_run(self, demo_dist, profile_records):
        """Concurrency bound changes nothing: answers apply in selection order."""
        truth = GroundTruth(Partition.from_clusters([["a", "b"], ["c", "d"], ["e"]]))

        def run(parallelism):
            return run_loop(
                demo_dist,
                None,
                SimulatedOracle(truth, 0.85, seed=17),
                theta=0.85,
                budget=Budget(total=600),
                stop=StopPolicy(min_entropy_drop=0.0, max_iterations=20),
                questions_per_iteration=3,
                records=profile_records,
                parallelism=parallelism,
            )

        sequential, seq_trace = run(1)
        parallel, par_trace = run(4)
        assert sequential.entries == parallel.entries
        assert seq_trace.tokens_spent == par_trace.tokens_spent
        assert [r.entropy_after for r in seq_trace.iterations] == [
            r.entropy_after for r in par_trace.iterations
        ]

    def test_halt_reasons(self, demo_dist):
        oracle = ScriptedOracle({p: Verdict.MATCH for p in all_pairs(demo_dist.universe)})
        _, trace = run_loop(
            demo_dist,
            [q("c", "d")],
            oracle,
            theta=0.9,
            budget=Budget(total=10_000),
            stop=StopPolicy(min_entropy_drop=0.0, max_iterations=10),
        )
        assert trace.halt_reason == "no-candidates"
        _, trace = run_loop(
            demo_dist,
            [q("c", "d", cost=50)],
            oracle,
            theta=0.9,
            budget=Budget(total=10),
            stop=StopPolicy(max_iterations=10),
        )
        assert trace.halt_reason == "budget-exhausted"
        _, trace = run_loop(
            demo_dist,
            [q(p.a, p.b) for p in all_pairs(demo_dist.universe)],
            oracle,
            theta=0.9,
            budget=Budget(total=10_000),
            stop=StopPolicy(min_entropy_drop=10.0, max_iterations=10),
        )
        assert trace.halt_reason == "entropy-converged"

"""Evaluation harness tests: pairwise F1, synthetic corpora, strategy sweeps."""
import random

import pytest

from conftest import random_distribution
from pairprobe import (
    Partition,
    SweepConfig,
    UniverseMismatchError,
    pairwise_f1,
    run_sweep,
    synthetic_corpus,
)
from pairprobe.evaluation import SYNTH_ATTRIBUTES, random_selector, uncertainty_selector
from pairprobe.selection import Budget, MatchQuestion
from pairprobe.core import RecordPair


class TestPairwiseF1:
    def test_identical_partitions(self):
        p = Partition.from_clusters([["a", "b"], ["c"]])
        assert pairwise_f1(p, p) == (1.0, 1.0, 1.0)

    def test_all_singletons_vs_all_singletons(self):
        p = Partition.singletons(["a", "b", "c"])
        assert pairwise_f1(p, p) == (1.0, 1.0, 1.0)

    def test_disjoint_positives(self):
        predicted = Partition.from_clusters([["a", "b"], ["c"]])
        truth = Partition.from_clusters([["a"], ["b", "c"]])
        assert pairwise_f1(predicted, truth) == (0.0, 0.0, 0.0)

    def test_partial_overlap(self):
        predicted = Partition.from_clusters([["a", "b", "c"], ["d"]])
        truth = Partition.from_clusters([["a", "b"], ["c"], ["d"]])
        precision, recall, f1 = pairwise_f1(predicted, truth)
        assert precision == pytest.approx(1 / 3)
        assert recall == 1.0
        assert f1 == pytest.approx(0.5)

    def test_universe_mismatch_rejected(self):
        with pytest.raises(UniverseMismatchError):
            pairwise_f1(
                Partition.singletons(["a", "b"]), Partition.singletons(["a", "c"])
            )

    def test_self_comparison_is_always_perfect(self):
        for seed in range(15):
            partition = random_distribution(seed).entries[0][0]
            assert pairwise_f1(partition, partition) == (1.0, 1.0, 1.0)


class TestSyntheticCorpus:
    def test_deterministic_per_seed(self):
        a_records, a_truth = synthetic_corpus(8, seed=4)
        b_records, b_truth = synthetic_corpus(8, seed=4)
        assert a_records == b_records
        assert a_truth == b_truth

    def test_truth_covers_every_record(self):
        records, truth = synthetic_corpus(10, seed=1)
        assert truth.true_partition.universe == {r.id for r in records}

    def test_duplicate_counts_in_range(self):
        records, truth = synthetic_corpus(12, dup_min=2, dup_max=3, seed=2)
        sizes = [len(c) for c in truth.true_partition.clusters]
        assert all(2 <= s <= 3 for s in sizes)
        assert len(sizes) == 12

    def test_zero_noise_duplicates_are_identical(self):
        records, truth = synthetic_corpus(5, noise_rate=0.0, seed=3)
        by_id = {r.id: r for r in records}
        for cluster in truth.true_partition.clusters:
            values = {tuple(by_id[rid].attributes) for rid in cluster}
            assert len(values) == 1

    def test_attribute_schema(self):
        records, _ = synthetic_corpus(3, seed=0)
        assert all(r.attribute_names == SYNTH_ATTRIBUTES for r in records)


class TestSelectors:
    def _candidates(self):
        return [
            MatchQuestion(RecordPair(f"x{i}", f"y{i}"), "p", cost)
            for i, cost in enumerate((5, 10, 20, 40))
        ]

    def test_random_selector_respects_budget(self, demo_dist):
        select = random_selector(random.Random(0))
        chosen = select(demo_dist, self._candidates(), Budget(total=18))
        assert chosen.total_cost <= 18

    def test_uncertainty_selector_prefers_half_probability(self, demo_dist):
        select = uncertainty_selector()
        candidates = [
            MatchQuestion(RecordPair("a", "b"), "p", 1),  # marginal 0.8
            MatchQuestion(RecordPair("c", "d"), "p", 1),  # marginal 0.5
        ]
        chosen = select(demo_dist, candidates, Budget(total=1))
        assert chosen.questions[0].pair == RecordPair("c", "d")


@pytest.fixture(scope="module")
def small_rows():
    config = SweepConfig(
        n_entities=5,
        noise_rate=0.2,
        budgets=(0, 400),
        strategies=("greedy", "random", "uncertainty"),
        n_seeds=3,
        max_iterations=50,
    )
    return run_sweep(config)


class TestRunSweep:
    def test_row_grid_complete(self, small_rows):
        assert len(small_rows) == 6
        assert {(r.budget, r.strategy) for r in small_rows} == {
            (b, s) for b in (0, 400) for s in ("greedy", "random", "uncertainty")
        }
        assert all(r.seeds == 3 for r in small_rows)

    def test_budget_zero_rows_equal_unrefined_baseline(self, small_rows):
        zero_rows = [r for r in small_rows if r.budget == 0]
        f1s = {round(r.f1_mean, 12) for r in zero_rows}
        entropies = {round(r.entropy_mean, 12) for r in zero_rows}
        assert len(f1s) == 1 and len(entropies) == 1
        assert all(r.tokens_mean == 0.0 for r in zero_rows)

    def test_metric_ranges(self, small_rows):
        for row in small_rows:
            assert 0.0 <= row.precision_mean <= 1.0
            assert 0.0 <= row.recall_mean <= 1.0
            assert 0.0 <= row.f1_mean <= 1.0
            assert row.entropy_mean >= 0.0

    def test_refinement_reduces_entropy(self, small_rows):
        greedy0 = next(r for r in small_rows if r.budget == 0 and r.strategy == "greedy")
        greedy400 = next(
            r for r in small_rows if r.budget == 400 and r.strategy == "greedy"
        )
        assert greedy400.entropy_mean < greedy0.entropy_mean

    def test_perfect_oracle_with_ample_budget_reaches_full_f1(self):
        """A noiseless oracle given the whole question pool resolves the corpus."""
        config = SweepConfig(
            n_entities=6,
            noise_rate=0.25,
            theta=1.0,
            allow_perfect=True,
            budgets=(100_000,),
            strategies=("greedy",),
            n_seeds=3,
            max_iterations=1000,
        )
        rows = run_sweep(config)
        assert rows[0].f1_mean == 1.0
        assert rows[0].entropy_mean < 1e-6

"""Bayesian refinement: posterior updates from noisy answers and the main loop.

For a verdict on a pair, each candidate partition's likelihood is theta when
the partition agrees with the verdict and (1 - theta) when it disagrees; the
posterior is prior times likelihood over the normalizer. The normalizer is
always the sum of prior-times-likelihood over the surviving entries, which
stays correct after pruning has broken exact marginal bookkeeping.

The loop itself is sequential by design: the next selection depends on the
updated distribution.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .core import (
    Distribution,
    Partition,
    PartitionDistribution,
    ProductDistribution,
    Record,
    RecordId,
    RecordPair,
    entropy,
    normalize,
    pair_probability,
    same_cluster,
)
from .errors import (
    AuthenticationError,
    ConfigError,
    EmptyDistributionError,
    OracleError,
)
from .oracle import Oracle, OracleAnswer, Verdict
from .selection import (
    Budget,
    CostModel,
    MatchQuestion,
    QuestionSet,
    candidate_questions,
    greedy_select,
)


@dataclass(frozen=True)
class StopPolicy:
    """Halting rules for the refinement loop."""

    min_entropy_drop: float = 1e-3
    max_iterations: int = 20

    def __post_init__(self) -> None:
        if self.min_entropy_drop < 0:
            raise ConfigError("min_entropy_drop must be >= 0")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be a positive integer")


@dataclass(frozen=True)
class IterationRecord:
    """One loop iteration: what was asked, what came back, what it changed."""

    index: int
    questions: tuple[MatchQuestion, ...]
    answers: tuple[OracleAnswer, ...]
    failed_pairs: tuple[RecordPair, ...]
    entropy_before: float
    entropy_after: float
    tokens_spent_cumulative: int


@dataclass
class RefinementTrace:
    """Per-iteration log plus the run summary."""

    initial_entropy: float
    budget_total: int
    iterations: list[IterationRecord] = field(default_factory=list)
    halt_reason: str = ""
    final_entropy: float = 0.0
    tokens_spent: int = 0

    def entropy_curve(self) -> list[tuple[int, float]]:
        """(cumulative tokens, entropy) points, starting from the unrefined state."""
        curve = [(0, self.initial_entropy)]
        curve.extend(
            (row.tokens_spent_cumulative, row.entropy_after) for row in self.iterations
        )
        return curve


def posterior_update(
    dist: PartitionDistribution, answer: OracleAnswer, theta: float
) -> PartitionDistribution:
    """Bayes update of the partition distribution for one noisy verdict.

    At theta = 0.5 the likelihoods cancel and the distribution is returned
    unchanged; support is preserved for any theta in (0, 1).
    """
    if not 0.0 < theta < 1.0:
        raise ConfigError(f"theta must lie strictly in (0, 1), got {theta}")
    dist.require_normalized()
    said_match = answer.verdict is Verdict.MATCH
    weighted = []
    for partition, prob in dist.entries:
        agrees = same_cluster(partition, answer.pair) == said_match
        weighted.append((partition, prob * (theta if agrees else 1.0 - theta)))
    total = math.fsum(w for _, w in weighted)
    # A normalized prior and theta in (0, 1) cannot zero every product.
    assert total > 0.0, "posterior normalizer vanished"
    return normalize(PartitionDistribution(universe=dist.universe, entries=tuple(weighted)))


def update_distribution(
    dist: Distribution, answer: OracleAnswer, theta: float
) -> Distribution:
    """posterior_update, routed to the owning component of a factored distribution.

    A verdict on a pair spanning two components carries no information under
    the blocked model (the likelihood is constant across support), so it
    leaves the distribution unchanged.
    """
    if isinstance(dist, ProductDistribution):
        index = dist.index_of_pair(answer.pair)
        if index is None:
            return dist
        return dist.replace(index, posterior_update(dist.components[index], answer, theta))
    return posterior_update(dist, answer, theta)


def batch_update(
    dist: Distribution, answers: Sequence[OracleAnswer], theta: float
) -> Distribution:
    """Sequential updates for a batch of answers on distinct pairs.

    Errors are conditionally independent given the partition, so the result
    does not depend on the order of application.
    """
    pairs = [a.pair for a in answers]
    if len(pairs) != len(set(pairs)):
        raise ConfigError("batch contains two answers for the same pair")
    for answer in answers:
        dist = update_distribution(dist, answer, theta)
    return dist


def map_partition(dist: Distribution) -> Partition:
    """The highest-probability partition; ties go to the canonical-first one."""
    if isinstance(dist, ProductDistribution):
        clusters: set[frozenset[RecordId]] = set()
        for component in dist.components:
            if not component.entries:
                raise EmptyDistributionError("component has no entries")
            best, _ = component.sorted_entries()[0]
            clusters |= best.clusters
        return Partition(universe=dist.universe, clusters=frozenset(clusters))
    if not dist.entries:
        raise EmptyDistributionError("distribution has no entries")
    dist.require_normalized()
    return dist.sorted_entries()[0][0]


Selector = Callable[..., QuestionSet]


def _ask_all(
    oracle: Oracle, questions: Sequence[MatchQuestion], parallelism: int
) -> list[OracleAnswer | Exception]:
    """Ask every question, optionally concurrently.

    Results come back in question order regardless of arrival order, so
    parallelism cannot change what the refiner computes.
    """
    if parallelism <= 1 or len(questions) <= 1:
        results: list[OracleAnswer | Exception] = []
        for question in questions:
            try:
                results.append(oracle.ask(question))
            except Exception as exc:  # sorted out by the caller
                results.append(exc)
        return results
    with ThreadPoolExecutor(max_workers=parallelism) as executor:
        futures = [executor.submit(oracle.ask, q) for q in questions]
        out: list[OracleAnswer | Exception] = []
        for future in futures:
            try:
                out.append(future.result())
            except Exception as exc:
                out.append(exc)
        return out


def run_loop(
    dist: Distribution,
    candidates: Sequence[MatchQuestion] | None,
    oracle: Oracle,
    theta: float,
    budget: Budget,
    stop: StopPolicy | None = None,
    questions_per_iteration: int = 1,
    base: float = 2.0,
    records: Mapping[RecordId, Record] | Sequence[Record] | None = None,
    template: str | None = None,
    cost_model: CostModel | None = None,
    selector: Selector | None = None,
    parallelism: int = 1,
) -> tuple[Distribution, RefinementTrace]:
    """Iterate select -> ask -> update until a stop criterion fires.

    Candidates may be supplied directly, or built from ``records`` (one
    question per pair with match probability strictly inside (0, 1)). An
    oracle failure marks that question unanswered and permanently retires
    it; it never aborts the run. Answered pairs are never re-asked. The
    budget is debited by actual billed tokens when the oracle reports them,
    else by the estimate, and failures are debited at the estimate so the
    ledger never undercounts.
    """
    if stop is None:
        stop = StopPolicy()
    if questions_per_iteration < 1:
        raise ConfigError("questions_per_iteration must be a positive integer")
    if parallelism < 1:
        raise ConfigError("parallelism must be a positive integer")
    if candidates is None:
        if records is None:
            raise ConfigError("run_loop needs candidates or records to build them from")
        candidates = candidate_questions(dist, records, template, cost_model)
    select = selector or greedy_select

    trace = RefinementTrace(
        initial_entropy=entropy(dist, base), budget_total=budget.total
    )
    pool = list(candidates)
    spent = budget.spent
    halt = "max-iterations"

    for index in range(1, stop.max_iterations + 1):
        pool = [q for q in pool if 0.0 < pair_probability(dist, q.pair) < 1.0]
        if not pool:
            halt = "no-candidates"
            break
        if spent >= budget.total:
            halt = "budget-exhausted"
            break
        chosen = select(
            dist,
            pool,
            Budget(total=budget.total, spent=spent),
            base,
            max_questions=questions_per_iteration,
        )
        if not chosen.questions:
            halt = "budget-exhausted"
            break

        entropy_before = entropy(dist, base)
        answers: list[OracleAnswer] = []
        failed: list[RecordPair] = []
        billed = 0
        for question, result in zip(
            chosen.questions, _ask_all(oracle, chosen.questions, parallelism)
        ):
            if isinstance(result, AuthenticationError):
                raise result  # credentials will not fix themselves; abort the run
            if isinstance(result, OracleError):
                failed.append(question.pair)
                billed += question.cost
            elif isinstance(result, Exception):
                raise result
            else:
                answers.append(result)
                billed += result.tokens_billed
        dist = batch_update(dist, answers, theta)
        spent += billed
        asked = {q.pair for q in chosen.questions}
        pool = [q for q in pool if q.pair not in asked]

        entropy_after = entropy(dist, base)
        trace.iterations.append(
            IterationRecord(
                index=index,
                questions=chosen.questions,
                answers=tuple(answers),
                failed_pairs=tuple(failed),
                entropy_before=entropy_before,
                entropy_after=entropy_after,
                tokens_spent_cumulative=spent,
            )
        )
        # Failed-only iterations say nothing about convergence; keep going.
        if answers and entropy_before - entropy_after < stop.min_entropy_drop:
            halt = "entropy-converged"
            break

    trace.halt_reason = halt
    trace.final_entropy = entropy(dist, base)
    trace.tokens_spent = spent
    return dist, trace

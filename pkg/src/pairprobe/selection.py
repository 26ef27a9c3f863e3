"""Matching questions: rendering, token pricing, and budgeted selection.

A question set's value is the entropy of the answer distribution it induces:
push every candidate partition through the questions, group partitions by
their answer vector, and take the entropy of the group masses. That joint
answer entropy is monotone and submodular in the question set, which is what
justifies greedy selection under a token budget. A question whose answer is
already determined by previously chosen answers on every support partition
(transitive redundancy) has exactly zero marginal value.

Selection assumes answers are determined by the true partition; oracle noise
is handled entirely in the refinement step.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

from .core import (
    Distribution,
    PartitionDistribution,
    ProductDistribution,
    Record,
    RecordId,
    RecordPair,
    pair_probability,
    records_by_id,
    same_cluster,
)
from .errors import ConfigError, TemplateError, UnknownRecordError

_PLACEHOLDER = re.compile(r"\{([^{}]*)\}")

_GAIN_FLOOR = 1e-12


@dataclass(frozen=True)
class CostModel:
    """Token pricing: ceil(prompt chars / chars_per_token) plus a flat answer allowance."""

    chars_per_token: float = 4.0
    answer_allowance: int = 5

    def __post_init__(self) -> None:
        if self.chars_per_token <= 0:
            raise ConfigError("chars_per_token must be positive")
        if self.answer_allowance < 0:
            raise ConfigError("answer_allowance must be >= 0")


@dataclass(frozen=True)
class MatchQuestion:
    """A candidate record pair with its rendered prompt and token cost."""

    pair: RecordPair
    prompt: str
    cost: int

    def __post_init__(self) -> None:
        if self.cost < 0:
            raise ConfigError("question cost must be >= 0")


@dataclass(frozen=True)
class QuestionSet:
    """An ordered set of questions over distinct pairs."""

    questions: tuple[MatchQuestion, ...] = ()

    def __post_init__(self) -> None:
        pairs = [q.pair for q in self.questions]
        if len(pairs) != len(set(pairs)):
            raise ConfigError("question set contains a duplicate pair")

    @property
    def total_cost(self) -> int:
        return sum(q.cost for q in self.questions)

    @property
    def pairs(self) -> tuple[RecordPair, ...]:
        return tuple(q.pair for q in self.questions)

    def with_question(self, question: MatchQuestion) -> "QuestionSet":
        return QuestionSet(self.questions + (question,))

    def __len__(self) -> int:
        return len(self.questions)

    def __contains__(self, pair: RecordPair) -> bool:
        return pair in self.pairs


@dataclass(frozen=True)
class Budget:
    """Token allowance for oracle interaction."""

    total: int
    spent: int = 0

    def __post_init__(self) -> None:
        if self.total < 0 or self.spent < 0:
            raise ConfigError("budget tokens must be >= 0")
        if self.spent > self.total:
            raise ConfigError("spent exceeds total budget")

    @property
    def remaining(self) -> int:
        return self.total - self.spent


def default_template() -> str:
    return (
        resources.files("pairprobe.templates")
        .joinpath("default_prompt.txt")
        .read_text(encoding="utf-8")
    )


def _describe(record: Record) -> str:
    return "; ".join(f"{name}: {value}" for name, value in record.attributes)


def render_prompt(
    pair: RecordPair,
    records: Mapping[RecordId, Record] | Sequence[Record],
    template: str,
) -> str:
    """Substitute both records into the template.

    Placeholders: ``{a}`` / ``{b}`` expand to the full attribute listing,
    ``{a.id}`` / ``{b.id}`` to the record id, and ``{a.<attr>}`` /
    ``{b.<attr>}`` to a single attribute value. Anything else inside braces
    is rejected. An empty template yields an empty prompt (priced at the
    answer allowance only).
    """
    if not isinstance(records, Mapping):
        records = records_by_id(records)
    try:
        sides = {"a": records[pair.a], "b": records[pair.b]}
    except KeyError as exc:
        raise UnknownRecordError(f"no record with id {exc.args[0]!r}") from None

    def substitute(match: re.Match[str]) -> str:
        inner = match.group(1)
        side, dot, attr = inner.partition(".")
        if side not in sides:
            raise TemplateError(f"unknown placeholder {{{inner}}}")
        record = sides[side]
        if not dot:
            return _describe(record)
        if attr == "id":
            return record.id
        if attr not in record.attribute_names:
            raise TemplateError(f"record {record.id!r} has no attribute {attr!r}")
        return record.get(attr)

    rendered = _PLACEHOLDER.sub(substitute, template)
    if "{" in rendered or "}" in rendered:
        raise TemplateError("template contains unbalanced braces")
    return rendered


def question_cost(question: MatchQuestion | str, model: CostModel) -> int:
    """Token price of a question: prompt estimate plus the answer allowance."""
    prompt = question.prompt if isinstance(question, MatchQuestion) else question
    return math.ceil(len(prompt) / model.chars_per_token) + model.answer_allowance


def build_question(
    pair: RecordPair,
    records: Mapping[RecordId, Record] | Sequence[Record],
    template: str | None = None,
    model: CostModel | None = None,
) -> MatchQuestion:
    template = default_template() if template is None else template
    model = model or CostModel()
    prompt = render_prompt(pair, records, template)
    return MatchQuestion(pair=pair, prompt=prompt, cost=question_cost(prompt, model))


def candidate_questions(
    dist: Distribution,
    records: Mapping[RecordId, Record] | Sequence[Record],
    template: str | None = None,
    model: CostModel | None = None,
) -> list[MatchQuestion]:
    """One question per pair whose match probability is strictly between 0 and 1.

    Pairs already certain either way have no possible information gain and
    are excluded. Canonical pair order.
    """
    if not isinstance(records, Mapping):
        records = records_by_id(records)
    out = []
    if isinstance(dist, ProductDistribution):
        pair_pool = [
            RecordPair(ms[i], ms[j])
            for comp in dist.components
            for ms in [sorted(comp.universe)]
            for i in range(len(ms))
            for j in range(i + 1, len(ms))
        ]
    else:
        ms = sorted(dist.universe)
        pair_pool = [
            RecordPair(ms[i], ms[j])
            for i in range(len(ms))
            for j in range(i + 1, len(ms))
        ]
    for pair in sorted(pair_pool):
        if 0.0 < pair_probability(dist, pair) < 1.0:
            out.append(build_question(pair, records, template, model))
    return out


class _AnswerGroups:
    """Support partitions grouped by their answer profile over a candidate list.

    Each entry of each component is reduced once to an integer whose bit i
    says whether candidate pair i is co-clustered there. The joint answer
    entropy of any candidate subset is then a cheap regroup under a bitmask,
    summed over components (independent components add entropy).
    """

    def __init__(self, dist: Distribution, pairs: Sequence[RecordPair], base: float):
        if base <= 1.0:
            raise ValueError("entropy base must be > 1")
        self._log_base = math.log(base)
        components = (
            dist.components if isinstance(dist, ProductDistribution) else (dist,)
        )
        universe = dist.universe
        for pair in pairs:
            if pair.a not in universe or pair.b not in universe:
                raise UnknownRecordError(
                    f"question pair ({pair.a!r}, {pair.b!r}) lies outside the universe"
                )
        self._groups: list[list[tuple[int, float]]] = []
        for component in components:
            component.require_normalized()
            local = [
                (i, pair)
                for i, pair in enumerate(pairs)
                if pair.a in component.universe and pair.b in component.universe
            ]
            profile_mass: dict[int, float] = {}
            for partition, prob in component.entries:
                profile = 0
                for i, pair in local:
                    if same_cluster(partition, pair):
                        profile |= 1 << i
                profile_mass[profile] = profile_mass.get(profile, 0.0) + prob
            self._groups.append(sorted(profile_mass.items()))

    def entropy(self, mask: int) -> float:
        total = 0.0
        for group in self._groups:
            masses: dict[int, float] = {}
            for profile, prob in group:
                key = profile & mask
                masses[key] = masses.get(key, 0.0) + prob
            total += -math.fsum(
                p * math.log(p) for p in masses.values() if p > 0.0
            ) / self._log_base
        return total


def joint_answer_entropy(
    dist: Distribution, questions: QuestionSet, base: float = 2.0
) -> float:
    """Entropy of the answer-vector distribution induced by the question set.

    This equals the uncertainty the answers can remove: it is bounded above
    by the distribution entropy, with equality exactly when the answer
    vectors separate all support partitions.
    """
    if not questions.questions:
        return 0.0
    groups = _AnswerGroups(dist, questions.pairs, base)
    return groups.entropy((1 << len(questions)) - 1)


def marginal_gain(
    dist: Distribution,
    chosen: QuestionSet,
    candidate: MatchQuestion,
    base: float = 2.0,
) -> float:
    """Joint-entropy increase from adding ``candidate`` to ``chosen``; never negative."""
    if candidate.pair in chosen:
        raise ConfigError(f"candidate pair ({candidate.pair.a!r}, {candidate.pair.b!r}) already chosen")
    pairs = chosen.pairs + (candidate.pair,)
    groups = _AnswerGroups(dist, pairs, base)
    full = (1 << len(pairs)) - 1
    gain = groups.entropy(full) - groups.entropy(full >> 1)
    return max(gain, 0.0)


def _selection_order(candidates: Sequence[MatchQuestion]) -> list[int]:
    return sorted(range(len(candidates)), key=lambda i: (candidates[i].cost, candidates[i].pair))


def greedy_select(
    dist: Distribution,
    candidates: Sequence[MatchQuestion],
    budget: Budget,
    base: float = 2.0,
    max_questions: int | None = None,
) -> QuestionSet:
    """Budget-feasible question set via two passes, keeping the better one.

    Pass one greedily adds the affordable candidate with the best marginal
    gain per token; pass two is the single best affordable question (the
    classical safeguard for budgeted submodular maximization). Ties break
    deterministically on lower cost, then canonical pair order. An empty
    result is legal when nothing is affordable.
    """
    _check_candidates(candidates)
    limit = len(candidates) if max_questions is None else max(0, max_questions)
    groups = _AnswerGroups(dist, [c.pair for c in candidates], base)
    order = _selection_order(candidates)

    chosen: list[int] = []
    chosen_mask = 0
    chosen_cost = 0
    chosen_entropy = 0.0
    while len(chosen) < limit:
        best_idx = -1
        best_ratio = -1.0
        best_entropy = 0.0
        picked = set(chosen)
        for idx in order:  # cheap-first order makes the ratio tie-break structural
            if idx in picked or candidates[idx].cost > budget.remaining - chosen_cost:
                continue
            with_idx = groups.entropy(chosen_mask | (1 << idx))
            ratio = max(with_idx - chosen_entropy, 0.0) / candidates[idx].cost
            if ratio > best_ratio + _GAIN_FLOOR:
                best_idx, best_ratio, best_entropy = idx, ratio, with_idx
        if best_idx < 0 or best_entropy - chosen_entropy <= _GAIN_FLOOR:
            break
        chosen.append(best_idx)
        chosen_mask |= 1 << best_idx
        chosen_cost += candidates[best_idx].cost
        chosen_entropy = best_entropy

    single_idx = -1
    single_entropy = 0.0
    if limit >= 1:
        for idx in order:
            if candidates[idx].cost > budget.remaining:
                continue
            h = groups.entropy(1 << idx)
            if h > single_entropy + _GAIN_FLOOR:
                single_idx, single_entropy = idx, h

    if single_idx >= 0 and single_entropy > chosen_entropy + _GAIN_FLOOR:
        return QuestionSet((candidates[single_idx],))
    return QuestionSet(tuple(candidates[i] for i in chosen))


def exact_select(
    dist: Distribution,
    candidates: Sequence[MatchQuestion],
    budget: Budget,
    base: float = 2.0,
) -> QuestionSet:
    """Exhaustive optimum over feasible subsets; the test oracle for greedy_select.

    Exponential in the candidate count, hence capped at 20.
    """
    _check_candidates(candidates)
    n = len(candidates)
    if n > 20:
        raise ConfigError(f"exact_select is exhaustive; got {n} candidates, cap is 20")
    groups = _AnswerGroups(dist, [c.pair for c in candidates], base)
    costs = [c.cost for c in candidates]

    subset_cost = [0] * (1 << n)
    for mask in range(1, 1 << n):
        low = mask & -mask
        subset_cost[mask] = subset_cost[mask ^ low] + costs[low.bit_length() - 1]

    best_mask = 0
    best_entropy = 0.0
    best_cost = 0
    best_pairs: tuple[RecordPair, ...] = ()
    for mask in range(1, 1 << n):
        if subset_cost[mask] > budget.remaining:
            continue
        h = groups.entropy(mask)
        if h < best_entropy - _GAIN_FLOOR:
            continue
        pairs = tuple(sorted(candidates[i].pair for i in range(n) if mask & (1 << i)))
        if h > best_entropy + _GAIN_FLOOR or (subset_cost[mask], pairs) < (
            best_cost,
            best_pairs,
        ):
            best_mask, best_entropy = mask, h
            best_cost, best_pairs = subset_cost[mask], pairs
    members = sorted(
        (i for i in range(n) if best_mask & (1 << i)),
        key=lambda i: candidates[i].pair,
    )
    return QuestionSet(tuple(candidates[i] for i in members))


def _check_candidates(candidates: Sequence[MatchQuestion]) -> None:
    pairs = [c.pair for c in candidates]
    if len(pairs) != len(set(pairs)):
        raise ConfigError("candidate list contains a duplicate pair")
    if any(c.cost <= 0 for c in candidates):
        raise ConfigError("candidates must have positive costs")

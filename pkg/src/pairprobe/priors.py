"""Builds the initial partition distribution from raw records.

Pipeline: score record pairs with a baseline matcher (or import scores
produced elsewhere), aggregate across sources, drop low-probability pairs,
split the dataset into blocking components along the surviving match graph,
and enumerate consistent partitions per component with Bernoulli product
weights.

Treating each pair as an independent Bernoulli does not by itself yield a
coherent distribution (independent coin flips violate transitivity), so the
product weights are restricted to valid set-partitions and renormalized.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .core import (
    Partition,
    PartitionDistribution,
    ProductDistribution,
    Record,
    RecordId,
    RecordPair,
    normalize,
    prune,
    records_by_id,
)
from .errors import ComponentTooLargeError, ConfigError, InputError

#: Largest component the enumerator accepts (4140 partitions). Bigger
#: components must be broken up by raising the score threshold.
DEFAULT_COMPONENT_CAP = 8

#: Co-cluster probability assumed for in-component pairs that fell below the
#: threshold: low enough to disfavor the match without forbidding it.
DEFAULT_UNSCORED_PROB = 0.05

DEFAULT_MAX_ENTRIES = 64

BUILTIN_SOURCE = "builtin"


@dataclass(frozen=True)
class PairScore:
    """A matcher's probability that one record pair refers to the same entity."""

    pair: RecordPair
    probability: float
    source: str = BUILTIN_SOURCE

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise InputError(f"pair score must lie in [0, 1], got {self.probability}")


def _identity(x: float) -> float:
    return x


@dataclass(frozen=True)
class MatcherConfig:
    """Configuration of the built-in similarity matcher.

    ``weights`` maps attribute names to non-negative weights; ``kinds`` picks
    the per-attribute similarity ("edit" or "token", default "edit");
    ``calibration`` is a monotone map from aggregate similarity to a match
    probability (identity by default).
    """

    weights: Mapping[str, float]
    kinds: Mapping[str, str] = field(default_factory=dict)
    calibration: Callable[[float], float] = _identity

    def __post_init__(self) -> None:
        if not any(w > 0 for w in self.weights.values()):
            raise ConfigError("matcher needs at least one positive attribute weight")
        if any(w < 0 for w in self.weights.values()):
            raise ConfigError("attribute weights must be >= 0")
        for name, kind in self.kinds.items():
            if kind not in ("edit", "token"):
                raise ConfigError(f"unknown similarity kind {kind!r} for {name!r}")
        grid = [self.calibration(i / 10.0) for i in range(11)]
        if any(v < 0 or v > 1 for v in grid):
            raise ConfigError("calibration must map [0, 1] into [0, 1]")
        if abs(grid[0]) > 1e-9:
            raise ConfigError("calibration must map 0 to 0")
        if any(b < a - 1e-12 for a, b in zip(grid, grid[1:])):
            raise ConfigError("calibration must be monotone non-decreasing")

    @classmethod
    def uniform(cls, names: Iterable[str], kind: str = "edit") -> "MatcherConfig":
        names = list(names)
        return cls(weights={n: 1.0 for n in names}, kinds={n: kind for n in names})

    def kind_of(self, name: str) -> str:
        return self.kinds.get(name, "edit")


def edit_similarity(x: str, y: str) -> float:
    """1 minus the Levenshtein distance normalized by the longer length."""
    if x == y:
        return 1.0
    if not x or not y:
        return 0.0
    if len(x) < len(y):
        x, y = y, x
    previous = list(range(len(y) + 1))
    for i, cx in enumerate(x, start=1):
        current = [i]
        for j, cy in enumerate(y, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (cx != cy),
                )
            )
        previous = current
    return 1.0 - previous[-1] / len(x)


def token_similarity(x: str, y: str) -> float:
    """Jaccard overlap of lowercased whitespace tokens."""
    tx = set(x.lower().split())
    ty = set(y.lower().split())
    if not tx and not ty:
        return 1.0
    if not tx or not ty:
        return 0.0
    return len(tx & ty) / len(tx | ty)


def pair_similarity(left: Record, right: Record, config: MatcherConfig) -> float:
    """Weighted mean of per-attribute similarities in [0, 1]."""
    total_weight = math.fsum(w for w in config.weights.values() if w > 0)
    acc = 0.0
    for name, weight in config.weights.items():
        if weight <= 0:
            continue
        sim_fn = token_similarity if config.kind_of(name) == "token" else edit_similarity
        acc += weight * sim_fn(left.get(name), right.get(name))
    return acc / total_weight


def score_pairs(records: Sequence[Record], config: MatcherConfig) -> list[PairScore]:
    """Score every unordered record pair; pairs calibrated to 0 are omitted.

    Deterministic given inputs; output in canonical pair order.
    """
    if len(records) < 2:
        raise InputError("need at least two records to score pairs")
    index = records_by_id(records)  # rejects duplicate ids
    ids = sorted(index)
    out: list[PairScore] = []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            prob = config.calibration(pair_similarity(index[ids[i]], index[ids[j]], config))
            if prob > 0.0:
                out.append(PairScore(RecordPair(ids[i], ids[j]), min(prob, 1.0)))
    return out


def threshold_filter(scores: Iterable[PairScore], tau: float) -> list[PairScore]:
    """Keep exactly the scores with probability >= tau."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"threshold must lie in [0, 1], got {tau}")
    return [s for s in scores if s.probability >= tau]


def load_pair_scores(path: str, source: str | None = None) -> list[PairScore]:
    """Import externally computed scores from a three-column CSV (id_a, id_b, probability)."""
    label = source or str(path)
    scores: list[PairScore] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: empty score file")
        if [c.strip().lower() for c in header[:3]] != ["id_a", "id_b", "probability"]:
            raise InputError(f"{path}: expected header id_a,id_b,probability")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 3:
                raise InputError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                prob = float(row[2])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: bad probability {row[2]!r}") from exc
            scores.append(PairScore(RecordPair(row[0].strip(), row[1].strip()), prob, label))
    return scores


def aggregate_tools(
    sources: Sequence[Sequence[PairScore]],
) -> dict[RecordPair, float]:
    """Mean probability per pair over the sources that scored it.

    Sources that did not score a pair contribute nothing (they are not
    counted as zeros), so the result is invariant under source ordering.
    """
    if not sources:
        raise InputError("aggregate_tools needs at least one source")
    per_pair: dict[RecordPair, list[float]] = {}
    for source in sources:
        seen: set[RecordPair] = set()
        for score in source:
            if score.pair in seen:
                raise InputError(
                    f"source {score.source!r} scored pair "
                    f"({score.pair.a!r}, {score.pair.b!r}) twice"
                )
            seen.add(score.pair)
            per_pair.setdefault(score.pair, []).append(score.probability)
    return {pair: math.fsum(vals) / len(vals) for pair, vals in sorted(per_pair.items())}


@dataclass(frozen=True)
class BlockingComponent:
    """A connected component of the above-threshold match graph."""

    members: tuple[RecordId, ...]
    scores: Mapping[RecordPair, float]

    def __post_init__(self) -> None:
        member_set = set(self.members)
        for pair in self.scores:
            if pair.a not in member_set or pair.b not in member_set:
                raise InputError("component score references a non-member")


def blocking_components(
    records: Sequence[Record], scores: Mapping[RecordPair, float] | Iterable[PairScore]
) -> list[BlockingComponent]:
    """Connected components of the pair graph; unmatched records become singletons.

    Components are returned sorted by their smallest member id.
    """
    if not isinstance(scores, Mapping):
        scores = {s.pair: s.probability for s in scores}
    index = records_by_id(records)
    adjacency: dict[RecordId, set[RecordId]] = {rid: set() for rid in index}
    for pair in scores:
        if pair.a not in index or pair.b not in index:
            raise InputError(f"score references unknown record ({pair.a!r}, {pair.b!r})")
        adjacency[pair.a].add(pair.b)
        adjacency[pair.b].add(pair.a)

    components: list[BlockingComponent] = []
    unvisited = set(index)
    for start in sorted(index):
        if start not in unvisited:
            continue
        stack = [start]
        members: set[RecordId] = set()
        unvisited.discard(start)
        while stack:
            rid = stack.pop()
            members.add(rid)
            for neighbor in adjacency[rid]:
                if neighbor in unvisited:
                    unvisited.discard(neighbor)
                    stack.append(neighbor)
        ordered = tuple(sorted(members))
        local = {p: prob for p, prob in scores.items() if p.a in members and p.b in members}
        components.append(BlockingComponent(members=ordered, scores=local))
    return sorted(components, key=lambda c: c.members[0])


def _set_partitions(items: Sequence[RecordId]) -> Iterator[list[list[RecordId]]]:
    """All set partitions of ``items`` (Bell-number many), deterministically ordered."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partial in _set_partitions(rest):
        for i in range(len(partial)):
            yield partial[:i] + [[first] + partial[i]] + partial[i + 1 :]
        yield [[first]] + partial


def bernoulli_weight(
    clusters: Sequence[Sequence[RecordId]],
    scores: Mapping[RecordPair, float],
    default_prob: float,
) -> float:
    """Product over member pairs of p if co-clustered else (1 - p)."""
    members = sorted(rid for cluster in clusters for rid in cluster)
    where = {rid: i for i, cluster in enumerate(clusters) for rid in cluster}
    weight = 1.0
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            p = scores.get(RecordPair(members[i], members[j]), default_prob)
            weight *= p if where[members[i]] == where[members[j]] else 1.0 - p
    return weight


def enumerate_partitions(
    component: BlockingComponent,
    scores: Mapping[RecordPair, float] | None = None,
    default_prob: float = DEFAULT_UNSCORED_PROB,
    max_entries: int = DEFAULT_MAX_ENTRIES,
    component_cap: int = DEFAULT_COMPONENT_CAP,
) -> PartitionDistribution:
    """Distribution over all set-partitions of one component.

    Weight(P) is the Bernoulli product over member pairs (co-clustered pairs
    contribute their score, separated pairs the complement; unscored pairs
    use ``default_prob``), normalized over valid partitions and pruned to
    ``max_entries``. Transitivity holds inside every emitted partition by
    construction.
    """
    if not 0.0 < default_prob < 1.0:
        raise ConfigError(f"default_prob must lie strictly in (0, 1), got {default_prob}")
    if len(component.members) > component_cap:
        raise ComponentTooLargeError(
            f"component {component.members[0]!r}... has {len(component.members)} records, "
            f"cap is {component_cap}; raise the score threshold to split it"
        )
    if scores is None:
        scores = component.scores
    members = tuple(sorted(component.members))
    if not members:
        raise InputError("component has no members")
    weighted = [
        (Partition.from_clusters(clusters) if clusters else Partition.singletons(members),
         bernoulli_weight(clusters, scores, default_prob))
        for clusters in _set_partitions(members)
    ]
    dist = PartitionDistribution.from_weights(weighted, universe=frozenset(members))
    return prune(dist, epsilon=0.0, max_entries=max_entries)


def combine_components(
    distributions: Sequence[PartitionDistribution],
) -> ProductDistribution:
    """Assemble per-component distributions into the factored global distribution."""
    ordered = sorted(distributions, key=lambda d: min(d.universe) if d.universe else "")
    return ProductDistribution(components=tuple(ordered))


def initial_distribution(
    records: Sequence[Record],
    sources: Sequence[Sequence[PairScore]],
    tau: float,
    default_prob: float = DEFAULT_UNSCORED_PROB,
    max_entries: int = DEFAULT_MAX_ENTRIES,
    component_cap: int = DEFAULT_COMPONENT_CAP,
) -> ProductDistribution:
    """Full bootstrap: aggregate -> threshold -> block -> enumerate -> combine."""
    aggregated = aggregate_tools(sources)
    filtered = {
        pair: prob for pair, prob in aggregated.items() if prob >= tau
    }
    components = blocking_components(records, filtered)
    return combine_components(
        [
            enumerate_partitions(
                comp,
                default_prob=default_prob,
                max_entries=max_entries,
                component_cap=component_cap,
            )
            for comp in components
        ]
    )

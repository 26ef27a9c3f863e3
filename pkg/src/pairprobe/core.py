"""Partition-space substrate: records, partitions, and probability distributions.

The central object is a :class:`PartitionDistribution` — a weighted set of
candidate partitions of a record universe. Match probabilities of record
pairs are marginals of that distribution (the probability mass of partitions
that co-cluster the pair), and Shannon entropy of the distribution measures
how unresolved the dataset still is.

Every type here is an immutable value and every operation is a pure
function, so instances can be shared freely across threads.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Union

from .errors import (
    AllZeroWeightsError,
    EmptyDistributionError,
    PartitionError,
    PruneEmptyError,
    UniverseMismatchError,
    UnnormalizedError,
)

RecordId = str

#: Tolerance for the sum-to-one invariant. Re-normalization happens after
#: every update, so drift never accumulates past this.
NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class Record:
    """One input row: an id plus an ordered list of named string attributes."""

    id: RecordId
    attributes: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise PartitionError("record id must be non-empty")
        names = [name for name, _ in self.attributes]
        if len(names) != len(set(names)):
            raise PartitionError(f"record {self.id!r} has duplicate attribute names")

    def get(self, name: str, default: str = "") -> str:
        for attr, value in self.attributes:
            if attr == name:
                return value
        return default

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.attributes)


def records_by_id(records: Iterable[Record]) -> dict[RecordId, Record]:
    """Index records by id, rejecting duplicates."""
    index: dict[RecordId, Record] = {}
    for record in records:
        if record.id in index:
            raise PartitionError(f"duplicate record id {record.id!r}")
        index[record.id] = record
    return index


@dataclass(frozen=True, order=True)
class RecordPair:
    """An unordered pair of distinct record ids, stored in sorted order.

    Canonical ordering makes (a, b) and (b, a) the same value, so pair
    symmetry is structural rather than something callers must remember.
    """

    a: RecordId
    b: RecordId

    def __post_init__(self) -> None:
        if not self.a or not self.b:
            raise PartitionError("pair members must be non-empty ids")
        if self.a == self.b:
            raise PartitionError(f"pair members must differ, got {self.a!r} twice")
        if self.a > self.b:
            first, second = self.b, self.a
            object.__setattr__(self, "a", first)
            object.__setattr__(self, "b", second)

    def __iter__(self) -> Iterator[RecordId]:
        yield self.a
        yield self.b


def all_pairs(ids: Iterable[RecordId]) -> list[RecordPair]:
    """All unordered pairs over ``ids``, in canonical order."""
    ordered = sorted(set(ids))
    return [
        RecordPair(ordered[i], ordered[j])
        for i in range(len(ordered))
        for j in range(i + 1, len(ordered))
    ]


@dataclass(frozen=True)
class Partition:
    """A division of the universe into disjoint, non-empty clusters.

    Each cluster is one hypothesized real-world entity. Validity (disjoint
    clusters covering the universe exactly) is checked at construction, so
    a Partition in hand is always well-formed.
    """

    universe: frozenset[RecordId]
    clusters: frozenset[frozenset[RecordId]]

    def __post_init__(self) -> None:
        seen: set[RecordId] = set()
        for cluster in self.clusters:
            if not cluster:
                raise PartitionError("empty cluster")
            if seen & cluster:
                raise PartitionError(f"overlapping clusters at {sorted(seen & cluster)}")
            seen |= cluster
        if seen != self.universe:
            missing = self.universe - seen
            extra = seen - self.universe
            raise PartitionError(
                f"clusters do not cover the universe exactly (missing={sorted(missing)}, "
                f"outside={sorted(extra)})"
            )

    @classmethod
    def from_clusters(cls, clusters: Iterable[Iterable[RecordId]]) -> "Partition":
        frozen = frozenset(frozenset(c) for c in clusters)
        universe = frozenset(rid for cluster in frozen for rid in cluster)
        return cls(universe=universe, clusters=frozen)

    @classmethod
    def singletons(cls, universe: Iterable[RecordId]) -> "Partition":
        ids = frozenset(universe)
        return cls(universe=ids, clusters=frozenset(frozenset((rid,)) for rid in ids))

    @cached_property
    def _cluster_index(self) -> dict[RecordId, frozenset[RecordId]]:
        return {rid: cluster for cluster in self.clusters for rid in cluster}

    def cluster_of(self, rid: RecordId) -> frozenset[RecordId]:
        try:
            return self._cluster_index[rid]
        except KeyError:
            raise UniverseMismatchError(f"record {rid!r} not in universe") from None

    @cached_property
    def canonical_key(self) -> tuple[tuple[RecordId, ...], ...]:
        """Sorted cluster lists of sorted ids; the deterministic tie-break order."""
        return tuple(sorted(tuple(sorted(c)) for c in self.clusters))


def same_cluster(partition: Partition, pair: RecordPair) -> bool:
    """True iff both pair members lie in the same cluster of ``partition``."""
    cluster_a = partition.cluster_of(pair.a)
    partition.cluster_of(pair.b)  # both members must be in the universe
    return pair.b in cluster_a


@dataclass(frozen=True)
class PartitionDistribution:
    """A weighted set of candidate partitions sharing one universe.

    Entries may carry raw non-negative weights; operations that require
    a proper probability distribution call :meth:`require_normalized`
    (use :func:`normalize` to rescale). Duplicate partitions are rejected.
    """

    universe: frozenset[RecordId]
    entries: tuple[tuple[Partition, float], ...]

    def __post_init__(self) -> None:
        seen: set[Partition] = set()
        for partition, weight in self.entries:
            if partition.universe != self.universe:
                raise UniverseMismatchError(
                    "entry universe differs from distribution universe"
                )
            if weight < 0 or not math.isfinite(weight):
                raise PartitionError(f"weight must be finite and >= 0, got {weight}")
            if partition in seen:
                raise PartitionError("duplicate partition in distribution")
            seen.add(partition)

    @classmethod
    def from_weights(
        cls,
        weighted: Iterable[tuple[Partition, float]],
        universe: frozenset[RecordId] | None = None,
    ) -> "PartitionDistribution":
        """Build and normalize in one step."""
        entries = tuple(weighted)
        if universe is None:
            if not entries:
                raise EmptyDistributionError("cannot infer universe from no entries")
            universe = entries[0][0].universe
        return normalize(cls(universe=universe, entries=entries))

    @classmethod
    def certain(cls, partition: Partition) -> "PartitionDistribution":
        return cls(universe=partition.universe, entries=((partition, 1.0),))

    def total(self) -> float:
        return math.fsum(weight for _, weight in self.entries)

    def is_normalized(self, tol: float = NORMALIZATION_TOL) -> bool:
        return bool(self.entries) and abs(self.total() - 1.0) <= tol

    def require_normalized(self, tol: float = NORMALIZATION_TOL) -> None:
        if not self.entries:
            raise EmptyDistributionError("distribution has no entries")
        if abs(self.total() - 1.0) > tol:
            raise UnnormalizedError(f"probabilities sum to {self.total()!r}, expected 1")

    def sorted_entries(self) -> list[tuple[Partition, float]]:
        """Entries by descending probability, ties by canonical partition order."""
        return sorted(self.entries, key=lambda e: (-e[1], e[0].canonical_key))

    def probability_of(self, partition: Partition) -> float:
        for entry, weight in self.entries:
            if entry == partition:
                return weight
        return 0.0


def normalize(dist: PartitionDistribution) -> PartitionDistribution:
    """Rescale weights to sum to one.

    Raises EmptyDistributionError with no entries and AllZeroWeightsError
    when every weight is zero.
    """
    if not dist.entries:
        raise EmptyDistributionError("cannot normalize an empty distribution")
    total = dist.total()
    if total <= 0.0:
        raise AllZeroWeightsError("cannot normalize: all weights are zero")
    return PartitionDistribution(
        universe=dist.universe,
        entries=tuple((p, w / total) for p, w in dist.entries),
    )


def prune(
    dist: PartitionDistribution, epsilon: float, max_entries: int
) -> PartitionDistribution:
    """Drop entries below ``epsilon``, keep the ``max_entries`` most probable, renormalize.

    Ties at the cut are broken by the canonical partition ordering so the
    result is deterministic.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if max_entries < 1:
        raise ValueError("max_entries must be a positive integer")
    dist.require_normalized()
    survivors = [(p, w) for p, w in dist.sorted_entries() if w >= epsilon]
    survivors = survivors[:max_entries]
    if not survivors:
        raise PruneEmptyError(
            f"epsilon={epsilon} would drop every entry; loosen the pruning parameters"
        )
    return normalize(PartitionDistribution(universe=dist.universe, entries=tuple(survivors)))


def _check_members(universe: frozenset[RecordId], pair: RecordPair) -> None:
    if pair.a not in universe or pair.b not in universe:
        raise UniverseMismatchError(f"pair ({pair.a!r}, {pair.b!r}) not within the universe")


Distribution = Union[PartitionDistribution, "ProductDistribution"]


def pair_probability(dist: Distribution, pair: RecordPair) -> float:
    """Marginal probability that the pair is co-clustered.

    This is the cumulative probability of the entries whose partition puts
    both members in one cluster. For a componentwise product, a pair that
    spans two components is never co-clustered and the marginal is 0.
    """
    if isinstance(dist, ProductDistribution):
        _check_members(dist.universe, pair)
        component = dist.component_of_pair(pair)
        return 0.0 if component is None else pair_probability(component, pair)
    _check_members(dist.universe, pair)
    dist.require_normalized()
    return math.fsum(w for p, w in dist.entries if same_cluster(p, pair))


def entropy(dist: Distribution, base: float = 2.0) -> float:
    """Shannon entropy of the distribution; 0*log(0) is taken as 0.

    The log base defaults to 2 (bits) and must exceed 1.
    """
    if base <= 1.0:
        raise ValueError("entropy base must be > 1")
    if isinstance(dist, ProductDistribution):
        return math.fsum(entropy(c, base) for c in dist.components)
    dist.require_normalized()
    log_base = math.log(base)
    return -math.fsum(w * math.log(w) for _, w in dist.entries if w > 0.0) / log_base


@dataclass(frozen=True)
class ProductDistribution:
    """Independent product of per-component distributions, kept factored.

    Blocking splits the universe into components that share no candidate
    matches, so the global distribution is a product. Materializing the
    cross product would explode; instead the components are stored as-is
    and global quantities are derived lazily: entropy is the sum of the
    component entropies, pair marginals defer to the owning component, and
    the global top-k partitions come from a best-first search over the
    per-component rankings.
    """

    components: tuple[PartitionDistribution, ...]

    def __post_init__(self) -> None:
        seen: set[RecordId] = set()
        for component in self.components:
            component.require_normalized()
            overlap = seen & component.universe
            if overlap:
                raise UniverseMismatchError(
                    f"component universes overlap at {sorted(overlap)}"
                )
            seen |= component.universe

    @cached_property
    def universe(self) -> frozenset[RecordId]:
        ids: set[RecordId] = set()
        for component in self.components:
            ids |= component.universe
        return frozenset(ids)

    @cached_property
    def _component_index(self) -> dict[RecordId, int]:
        return {
            rid: i for i, comp in enumerate(self.components) for rid in comp.universe
        }

    def component_of_pair(self, pair: RecordPair) -> PartitionDistribution | None:
        """The component holding both members, or None when the pair spans two."""
        _check_members(self.universe, pair)
        ia = self._component_index[pair.a]
        ib = self._component_index[pair.b]
        return self.components[ia] if ia == ib else None

    def index_of_pair(self, pair: RecordPair) -> int | None:
        _check_members(self.universe, pair)
        ia = self._component_index[pair.a]
        ib = self._component_index[pair.b]
        return ia if ia == ib else None

    def replace(self, index: int, component: PartitionDistribution) -> "ProductDistribution":
        if component.universe != self.components[index].universe:
            raise UniverseMismatchError("replacement component universe differs")
        parts = list(self.components)
        parts[index] = component
        return ProductDistribution(components=tuple(parts))

    def top_partitions(self, k: int) -> list[tuple[Partition, float]]:
        """The ``k`` most probable global partitions by best-first product search."""
        if k < 1:
            return []
        if not self.components:
            empty = Partition(universe=frozenset(), clusters=frozenset())
            return [(empty, 1.0)]
        ranked = [c.sorted_entries() for c in self.components]
        start = (0,) * len(ranked)

        def joint(indices: tuple[int, ...]) -> float:
            prob = 1.0
            for dim, idx in enumerate(indices):
                prob *= ranked[dim][idx][1]
            return prob

        heap: list[tuple[float, tuple[int, ...]]] = [(-joint(start), start)]
        visited = {start}
        out: list[tuple[Partition, float]] = []
        while heap and len(out) < k:
            neg, indices = heapq.heappop(heap)
            clusters: set[frozenset[RecordId]] = set()
            for dim, idx in enumerate(indices):
                clusters |= ranked[dim][idx][0].clusters
            merged = Partition(universe=self.universe, clusters=frozenset(clusters))
            out.append((merged, -neg))
            for dim in range(len(ranked)):
                if indices[dim] + 1 < len(ranked[dim]):
                    nxt = indices[:dim] + (indices[dim] + 1,) + indices[dim + 1 :]
                    if nxt not in visited:
                        visited.add(nxt)
                        heapq.heappush(heap, (-joint(nxt), nxt))
        return out

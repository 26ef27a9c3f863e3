"""Shared fixtures: a small hand-checkable distribution and profile records.

The five-record fixture carries three candidate partitions at probabilities
0.5 / 0.3 / 0.2; every hand-derived expected value in the suite (pair
marginals, posteriors, entropies) is computed from this shape.
"""
from __future__ import annotations

import random
from typing import Iterable, Iterator

import pytest

from pairprobe import (
    Partition,
    PartitionDistribution,
    Record,
    RecordPair,
)

FIVE_IDS = ("a", "b", "c", "d", "e")


@pytest.fixture
def demo_partitions() -> tuple[Partition, Partition, Partition]:
    p1 = Partition.from_clusters([["a", "b"], ["c", "d"], ["e"]])
    p2 = Partition.from_clusters([["a", "b", "c"], ["d", "e"]])
    p3 = Partition.from_clusters([["a", "c"], ["b", "d"], ["e"]])
    return p1, p2, p3


@pytest.fixture
def demo_dist(demo_partitions) -> PartitionDistribution:
    p1, p2, p3 = demo_partitions
    return PartitionDistribution(
        universe=frozenset(FIVE_IDS),
        entries=((p1, 0.5), (p2, 0.3), (p3, 0.2)),
    )


_PROFILE_ROWS = [
    ("a", "Alice Chen", "alice.chen@mail.com", "Data Engineer", "AcmeSoft", "SF"),
    ("b", "A. Chen", "alice.chen@mail.com", "Data Engineer", "AcmeSoft Inc", "SF, CA"),
    ("c", "Alana Chen", "alana.c@mail.com", "Data Analyst", "AcmeSoft", "SF"),
    ("d", "Alana C.", "alana.c@mail.com", "Analyst", "AcmeSoft", "San Francisco"),
    ("e", "Bob Roy", "bob.roy@mail.com", "Product Manager", "Nimbus Labs", "NYC"),
]

PROFILE_HEADER = ("name", "email", "title", "company", "loc")


def make_profile_records() -> list[Record]:
    return [
        Record(
            id=row[0],
            attributes=tuple(zip(PROFILE_HEADER, row[1:])),
        )
        for row in _PROFILE_ROWS
    ]


@pytest.fixture
def profile_records() -> list[Record]:
    return make_profile_records()


def random_distribution(
    seed: int, max_records: int = 6, max_entries: int = 12
) -> PartitionDistribution:
    """A random normalized distribution over random partitions of a small universe."""
    rng = random.Random(seed)
    n = rng.randint(2, max_records)
    ids = tuple(f"r{i}" for i in range(n))
    weighted: dict[Partition, float] = {}
    for _ in range(rng.randint(1, max_entries)):
        labels = [rng.randrange(n) for _ in ids]
        clusters: dict[int, list[str]] = {}
        for rid, label in zip(ids, labels):
            clusters.setdefault(label, []).append(rid)
        partition = Partition.from_clusters(clusters.values())
        weighted[partition] = weighted.get(partition, 0.0) + rng.uniform(0.05, 1.0)
    return PartitionDistribution.from_weights(weighted.items(), universe=frozenset(ids))


def rgs_partitions(ids: Iterable[str]) -> Iterator[list[list[str]]]:
    """Independent set-partition enumerator via restricted growth strings.

    Deliberately a different construction from the library's recursive
    enumerator, so it can serve as an oracle for it.
    """
    ids = list(ids)
    n = len(ids)
    if n == 0:
        yield []
        return
    labels = [0] * n
    while True:
        groups: dict[int, list[str]] = {}
        for rid, label in zip(ids, labels):
            groups.setdefault(label, []).append(rid)
        yield list(groups.values())
        i = n - 1
        while i > 0 and labels[i] > max(labels[:i]):
            i -= 1
        if i == 0:
            return
        labels[i] += 1
        for j in range(i + 1, n):
            labels[j] = 0


def brute_force_product_weights(
    ids: Iterable[str],
    scores: dict[RecordPair, float],
    default_prob: float,
) -> dict[Partition, float]:
    """Normalized Bernoulli-product weights over all partitions, computed directly."""
    ids = sorted(ids)
    weights: dict[Partition, float] = {}
    for clusters in rgs_partitions(ids):
        label_of = {rid: k for k, cluster in enumerate(clusters) for rid in cluster}
        w = 1.0
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                p = scores.get(RecordPair(ids[i], ids[j]), default_prob)
                w *= p if label_of[ids[i]] == label_of[ids[j]] else 1.0 - p
        weights[Partition.from_clusters(clusters)] = w
    total = sum(weights.values())
    return {part: w / total for part, w in weights.items()}

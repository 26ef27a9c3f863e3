"""Evaluation harness: pairwise metrics, synthetic corpora, strategy sweeps.

The synthetic generator plants a known ground-truth partition and emits
duplicate records perturbed by character edits and abbreviation swaps, which
lets the full pipeline be scored without labeled data. Sweeps compare
question-selection strategies across token budgets, seed by seed.
"""
from __future__ import annotations

import random
import statistics
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import Partition, Record, all_pairs, pair_probability
from .errors import ConfigError, UniverseMismatchError
from .oracle import GroundTruth, SimulatedOracle
from .priors import MatcherConfig, initial_distribution, score_pairs
from .refine import StopPolicy, map_partition, run_loop
from .selection import Budget, MatchQuestion, QuestionSet, candidate_questions, greedy_select

STRATEGIES = ("greedy", "random", "uncertainty")


def pairwise_f1(predicted: Partition, truth: Partition) -> tuple[float, float, float]:
    """Precision, recall, F1 over co-clustered record pairs.

    With no predicted positives precision is 1, with no true positives
    recall is 1; both-singleton partitions therefore score a perfect 1.0.
    """
    if predicted.universe != truth.universe:
        raise UniverseMismatchError("predicted and truth partitions cover different universes")
    tp = fp = fn = 0
    for pair in all_pairs(predicted.universe):
        in_predicted = pair.b in predicted.cluster_of(pair.a)
        in_truth = pair.b in truth.cluster_of(pair.a)
        if in_predicted and in_truth:
            tp += 1
        elif in_predicted:
            fp += 1
        elif in_truth:
            fn += 1
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


_FIRST = [
    "Alice", "Brian", "Carla", "Deepak", "Elena", "Farid", "Grace", "Hugo",
    "Irene", "Jonas", "Katya", "Liam", "Mona", "Nikhil", "Olga", "Pedro",
    "Quinn", "Rosa", "Samir", "Tara", "Umar", "Vera", "Wes", "Yuki",
]
_LAST = [
    "Anders", "Bryant", "Castillo", "Dimitrov", "Eng", "Fontaine", "Garza",
    "Hoffman", "Iyer", "Jablonski", "Kimura", "Lindqvist", "Moreau", "Novak",
    "Okafor", "Petrov", "Quintana", "Rossi", "Silva", "Thorne", "Ueda",
    "Vance", "Weiss", "Zhou",
]
_TITLES = [
    ("Software Engineer", "SWE"), ("Project Manager", "PM"),
    ("Data Scientist", "DS"), ("Product Designer", "PD"),
    ("Quality Analyst", "QA"), ("Site Reliability Engineer", "SRE"),
    ("Technical Writer", "TW"), ("Account Executive", "AE"),
    ("Research Scientist", "RS"), ("Security Engineer", "SecEng"),
    ("Machine Learning Engineer", "MLE"), ("Business Analyst", "BA"),
    ("Operations Manager", "OM"), ("Solutions Architect", "SA"),
    ("Financial Controller", "FC"), ("Marketing Director", "MD"),
]
_COMPANIES = [
    "Bluepeak Systems", "Cedarline Analytics", "Driftwood Labs", "Evergrid",
    "Fathom Works", "Glasswing Software", "Harborview Tech", "Ironvale",
    "Juniper Dynamics", "Kestrel Data", "Lumenfold", "Marrow & Co",
    "Northbeam", "Opaline Group", "Pinebrook Digital", "Quartzline",
    "Riverstone Apps", "Saltgrass Media",
]
_CITIES = [
    ("San Francisco", "SF"), ("New York", "NY"), ("Los Angeles", "LA"),
    ("Chicago", "CHI"), ("Austin", "ATX"), ("Seattle", "SEA"),
    ("Boston", "BOS"), ("Denver", "DEN"), ("Atlanta", "ATL"),
    ("Portland", "PDX"), ("Miami", "MIA"), ("Toronto", "TO"),
    ("London", "LDN"), ("Berlin", "BER"),
]
_DOMAINS = ["postbox.com", "mailhive.net", "corpmail.org", "inboxly.io"]

SYNTH_ATTRIBUTES = ("name", "email", "title", "company", "loc")


def _char_edit(value: str, rng: random.Random) -> str:
    if not value:
        return value
    pos = rng.randrange(len(value))
    op = rng.choice(("drop", "dup", "swap"))
    if op == "drop" and len(value) > 1:
        return value[:pos] + value[pos + 1 :]
    if op == "dup":
        return value[: pos + 1] + value[pos] + value[pos + 1 :]
    if op == "swap" and pos + 1 < len(value):
        return value[:pos] + value[pos + 1] + value[pos] + value[pos + 2 :]
    return value


def _perturb(attr: str, value: str, rng: random.Random) -> str:
    if attr == "name" and rng.random() < 0.6:
        first, _, last = value.partition(" ")
        return f"{first[0]}. {last}" if first and last else value
    if attr == "title":
        for full, abbrev in _TITLES:
            if value == full:
                return abbrev
    if attr == "company" and rng.random() < 0.6:
        return value + rng.choice((" LLC", " Inc", " Co"))
    if attr == "loc":
        for city, code in _CITIES:
            if value == city:
                return code
    if attr == "email" and rng.random() < 0.5:
        user, _, domain = value.partition("@")
        return f"{user}.{rng.randrange(10, 99)}@{domain}"
    return _char_edit(value, rng)


def synthetic_corpus(
    n_entities: int,
    dup_min: int = 2,
    dup_max: int = 3,
    noise_rate: float = 0.2,
    seed: int = 0,
) -> tuple[list[Record], GroundTruth]:
    """Planted-truth corpus: ``n_entities`` people, each as 2-3 noisy records.

    The first record of each entity is clean; later duplicates perturb each
    attribute independently with probability ``noise_rate`` (abbreviations,
    suffixes, city codes, or single character edits).
    """
    if n_entities < 1:
        raise ConfigError("need at least one entity")
    if not 1 <= dup_min <= dup_max:
        raise ConfigError("need 1 <= dup_min <= dup_max")
    if not 0.0 <= noise_rate <= 1.0:
        raise ConfigError("noise_rate must lie in [0, 1]")
    rng = random.Random(seed)
    names = [(f, l) for f in _FIRST for l in _LAST]
    rng.shuffle(names)
    titles = rng.sample(_TITLES, k=min(n_entities, len(_TITLES)))
    companies = rng.sample(_COMPANIES, k=min(n_entities, len(_COMPANIES)))

    records: list[Record] = []
    clusters: list[list[str]] = []
    counter = 0
    for e in range(n_entities):
        first, last = names[e]
        title = titles[e % len(titles)][0]
        company = companies[e % len(companies)]
        city = rng.choice(_CITIES)[0]
        email = f"{first.lower()}.{last.lower()}@{rng.choice(_DOMAINS)}"
        base = {
            "name": f"{first} {last}",
            "email": email,
            "title": title,
            "company": company,
            "loc": city,
        }
        cluster: list[str] = []
        for dup in range(rng.randint(dup_min, dup_max)):
            counter += 1
            rid = f"r{counter}"
            cluster.append(rid)
            values = dict(base)
            if dup > 0:
                for attr in SYNTH_ATTRIBUTES:
                    if rng.random() < noise_rate:
                        values[attr] = _perturb(attr, values[attr], rng)
            records.append(
                Record(id=rid, attributes=tuple((a, values[a]) for a in SYNTH_ATTRIBUTES))
            )
        clusters.append(cluster)
    truth = GroundTruth(Partition.from_clusters(clusters))
    return records, truth


def random_selector(rng: random.Random) -> Callable[..., QuestionSet]:
    """Pick affordable questions uniformly at random (baseline strategy)."""

    def select(dist, candidates, budget: Budget, base=2.0, max_questions=None):
        limit = len(candidates) if max_questions is None else max_questions
        remaining = budget.remaining
        chosen: list[MatchQuestion] = []
        pool = list(candidates)
        rng.shuffle(pool)
        for question in pool:
            if len(chosen) >= limit:
                break
            if question.cost <= remaining:
                chosen.append(question)
                remaining -= question.cost
        return QuestionSet(tuple(chosen))

    return select


def uncertainty_selector() -> Callable[..., QuestionSet]:
    """Pick the affordable questions whose match probability is nearest 0.5."""

    def select(dist, candidates, budget: Budget, base=2.0, max_questions=None):
        limit = len(candidates) if max_questions is None else max_questions
        ranked = sorted(
            candidates,
            key=lambda q: (abs(pair_probability(dist, q.pair) - 0.5), q.cost, q.pair),
        )
        remaining = budget.remaining
        chosen: list[MatchQuestion] = []
        for question in ranked:
            if len(chosen) >= limit:
                break
            if question.cost <= remaining:
                chosen.append(question)
                remaining -= question.cost
        return QuestionSet(tuple(chosen))

    return select


@dataclass(frozen=True)
class EvalRow:
    """One (budget, strategy) cell aggregated over seeds."""

    budget: int
    strategy: str
    precision_mean: float
    precision_std: float
    recall_mean: float
    recall_std: float
    f1_mean: float
    f1_std: float
    entropy_mean: float
    entropy_std: float
    tokens_mean: float
    tokens_std: float
    seeds: int


def _std(values: Sequence[float]) -> float:
    return statistics.pstdev(values) if len(values) > 1 else 0.0


@dataclass(frozen=True)
class SweepConfig:
    n_entities: int = 15
    dup_min: int = 2
    dup_max: int = 3
    noise_rate: float = 0.2
    tau: float = 0.5
    default_prob: float = 0.05
    max_entries: int = 64
    component_cap: int = 8
    theta: float = 0.9
    budgets: tuple[int, ...] = (0, 500, 1000, 2000)
    strategies: tuple[str, ...] = STRATEGIES
    n_seeds: int = 20
    questions_per_iteration: int = 1
    min_entropy_drop: float = 0.0
    max_iterations: int = 500
    allow_perfect: bool = False


def run_sweep(config: SweepConfig) -> list[EvalRow]:
    """Budgets x strategies over seeded synthetic corpora, refined and scored.

    The corpus and its initial distribution are built once per seed and
    shared across every (budget, strategy) cell, so differences come only
    from the questions asked.
    """
    for strategy in config.strategies:
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    # theta=1 means a noiseless simulator; the Bayes update still requires
    # an accuracy strictly below 1, so cap what the refiner believes.
    update_theta = min(config.theta, 1.0 - 1e-9)

    results: dict[tuple[int, str], list[tuple[float, float, float, float, int]]] = {}
    for seed in range(config.n_seeds):
        records, truth = synthetic_corpus(
            config.n_entities, config.dup_min, config.dup_max, config.noise_rate, seed
        )
        matcher = MatcherConfig.uniform(SYNTH_ATTRIBUTES)
        scores = score_pairs(records, matcher)
        dist0 = initial_distribution(
            records,
            [scores],
            tau=config.tau,
            default_prob=config.default_prob,
            max_entries=config.max_entries,
            component_cap=config.component_cap,
        )
        candidates = candidate_questions(dist0, records)
        stop = StopPolicy(
            min_entropy_drop=config.min_entropy_drop,
            max_iterations=config.max_iterations,
        )
        for budget in config.budgets:
            for strategy in config.strategies:
                oracle = SimulatedOracle(
                    truth,
                    theta=config.theta,
                    seed=seed,
                    allow_perfect=config.allow_perfect,
                )
                if strategy == "random":
                    selector = random_selector(random.Random(seed))
                elif strategy == "uncertainty":
                    selector = uncertainty_selector()
                else:
                    selector = greedy_select
                final, trace = run_loop(
                    dist0,
                    candidates,
                    oracle,
                    theta=update_theta,
                    budget=Budget(total=budget),
                    stop=stop,
                    questions_per_iteration=config.questions_per_iteration,
                    selector=selector,
                )
                precision, recall, f1 = pairwise_f1(
                    map_partition(final), truth.true_partition
                )
                results.setdefault((budget, strategy), []).append(
                    (precision, recall, f1, trace.final_entropy, trace.tokens_spent)
                )

    rows: list[EvalRow] = []
    for budget in config.budgets:
        for strategy in config.strategies:
            cells = results[(budget, strategy)]
            precisions = [c[0] for c in cells]
            recalls = [c[1] for c in cells]
            f1s = [c[2] for c in cells]
            entropies = [c[3] for c in cells]
            tokens = [float(c[4]) for c in cells]
            rows.append(
                EvalRow(
                    budget=budget,
                    strategy=strategy,
                    precision_mean=statistics.fmean(precisions),
                    precision_std=_std(precisions),
                    recall_mean=statistics.fmean(recalls),
                    recall_std=_std(recalls),
                    f1_mean=statistics.fmean(f1s),
                    f1_std=_std(f1s),
                    entropy_mean=statistics.fmean(entropies),
                    entropy_std=_std(entropies),
                    tokens_mean=statistics.fmean(tokens),
                    tokens_std=_std(tokens),
                    seeds=len(cells),
                )
            )
    return rows
